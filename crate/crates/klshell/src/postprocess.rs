//! Field evaluation and export: physical displacements, the reconstructed
//! bending moment M = p I + symCurl phi in local Cartesian components, the
//! membrane force of the M-N formulation, and VTK/CSV writers.

use crate::assembly::{Formulation, ShellProblem};
use crate::discretization::{DofMap, ScalarField};
use crate::error::{KlError, Result};
use crate::geometry::surface_frame;
use crate::linsolve::SolutionVector;
use crate::shell_model::sym_curl;
use crate::splines::eval_basis;
use nalgebra::{Matrix2, Vector3};

/// Solved coefficient fields with evaluators.
pub struct SolutionFields<'a> {
    pub problem: &'a ShellProblem,
    pub dofs: &'a DofMap,
    pub sol: &'a SolutionVector,
}

impl<'a> SolutionFields<'a> {
    pub fn new(problem: &'a ShellProblem, dofs: &'a DofMap, sol: &'a SolutionVector) -> Self {
        SolutionFields { problem, dofs, sol }
    }

    fn coeff(&self, field: ScalarField, patch: usize, local: usize) -> f64 {
        self.dofs
            .index(field, patch, local)
            .map_or(0.0, |gi| self.sol.z[gi])
    }

    /// Scalar field value and first partials at a parametric point.
    fn field_d1(&self, field: ScalarField, patch: usize, xi: [f64; 2]) -> Result<(f64, [f64; 2])> {
        let basis = eval_basis(&self.dofs.scalar.spaces[patch], xi, 1)?;
        let mut v = 0.0;
        let mut d = [0.0; 2];
        for (k, &l) in basis.active.iter().enumerate() {
            let c = self.coeff(field, patch, l);
            v += c * basis.values[k];
            d[0] += c * basis.d1[0][k];
            d[1] += c * basis.d1[1][k];
        }
        Ok((v, d))
    }

    /// Cartesian displacement u = u_i A^i.
    pub fn displacement_at(&self, patch: usize, xi: [f64; 2]) -> Result<Vector3<f64>> {
        let frame = surface_frame(&self.problem.surface.patches[patch], xi)?;
        let mut out = Vector3::zeros();
        for (c, field) in [ScalarField::U1, ScalarField::U2, ScalarField::U3]
            .iter()
            .enumerate()
        {
            let (v, _) = self.field_d1(*field, patch, xi)?;
            out += v * frame.acontr[c];
        }
        Ok(out)
    }

    /// Reconstructed bending moment in parametric components (with the
    /// geometry measure still included) and its local Cartesian form divided
    /// by sqrt(A). The local frame is e_x = A1/|A1|, e_y = A3 x e_x.
    pub fn moment_at(&self, patch: usize, xi: [f64; 2]) -> Result<(Matrix2<f64>, Matrix2<f64>)> {
        let frame = surface_frame(&self.problem.surface.patches[patch], xi)?;
        let (p, _) = self.field_d1(ScalarField::P, patch, xi)?;
        let (_, d_phi1) = self.field_d1(ScalarField::Phi1, patch, xi)?;
        let (_, d_phi2) = self.field_d1(ScalarField::Phi2, patch, xi)?;
        let m = Matrix2::identity() * p + sym_curl([d_phi1, d_phi2]);

        let ex = frame.a1.normalize();
        let ey = frame.a3.cross(&ex);
        let t = [ex, ey];
        let base = [frame.a1, frame.a2];
        let mut local = Matrix2::zeros();
        for a in 0..2 {
            for b in 0..2 {
                let mut acc = 0.0;
                for al in 0..2 {
                    for be in 0..2 {
                        acc += t[a].dot(&base[al]) * m[(al, be)] * t[b].dot(&base[be]);
                    }
                }
                local[(a, b)] = acc / frame.sqrt_a;
            }
        }
        Ok((m, local))
    }

    /// Membrane force of the M-N formulation in parametric contravariant
    /// components and local Cartesian form divided by sqrt(A).
    pub fn membrane_force_at(
        &self,
        patch: usize,
        xi: [f64; 2],
    ) -> Result<(Matrix2<f64>, Matrix2<f64>)> {
        let Some(n_spaces) = self.dofs.n_spaces.as_ref() else {
            return Err(KlError::InvalidSetup(
                "membrane force is only available for the M-N formulation".into(),
            ));
        };
        let frame = surface_frame(&self.problem.surface.patches[patch], xi)?;
        let mut comps = [0.0; 3];
        for c in 0..3 {
            let basis = eval_basis(&n_spaces[c][patch], xi, 0)?;
            for (k, &l) in basis.active.iter().enumerate() {
                comps[c] += self.sol.z[self.dofs.index_n(c, patch, l)] * basis.values[k];
            }
        }
        let n = Matrix2::new(comps[0], comps[2], comps[2], comps[1]);
        let ex = frame.a1.normalize();
        let ey = frame.a3.cross(&ex);
        let t = [ex, ey];
        let base = [frame.a1, frame.a2];
        let mut local = Matrix2::zeros();
        for a in 0..2 {
            for b in 0..2 {
                let mut acc = 0.0;
                for al in 0..2 {
                    for be in 0..2 {
                        acc += t[a].dot(&base[al]) * n[(al, be)] * t[b].dot(&base[be]);
                    }
                }
                local[(a, b)] = acc / frame.sqrt_a;
            }
        }
        Ok((n, local))
    }

    /// Legacy ASCII VTK export of the midsurface with point data.
    pub fn export_vtk(&self, path: &str, resolution: usize) -> Result<()> {
        use std::fmt::Write as _;
        if resolution < 2 {
            return Err(KlError::InvalidArgument(
                "vtk resolution must be at least 2 samples per direction".into(),
            ));
        }
        let n_patches = self.problem.surface.patches.len();
        let pts_per_patch = resolution * resolution;
        let cells_per_patch = (resolution - 1) * (resolution - 1);
        let with_n = self.problem.formulation == Formulation::MNMixed;

        let mut points = String::new();
        let mut disp = String::new();
        let mut mxx = String::new();
        let mut nxx = String::new();
        for (p, patch) in self.problem.surface.patches.iter().enumerate() {
            let _ = p;
            for j in 0..resolution {
                for i in 0..resolution {
                    let xi = [
                        i as f64 / (resolution - 1) as f64,
                        j as f64 / (resolution - 1) as f64,
                    ];
                    let pos = patch.eval(xi, 0)?.point();
                    writeln!(points, "{} {} {}", pos.x, pos.y, pos.z).unwrap();
                    let u = self.displacement_at(p, xi).unwrap_or_else(|_| Vector3::zeros());
                    writeln!(disp, "{} {} {}", u.x, u.y, u.z).unwrap();
                    let m = self
                        .moment_at(p, xi)
                        .map(|(_, local)| local[(0, 0)])
                        .unwrap_or(0.0);
                    writeln!(mxx, "{}", m).unwrap();
                    if with_n {
                        let v = self
                            .membrane_force_at(p, xi)
                            .map(|(_, local)| local[(0, 0)])
                            .unwrap_or(0.0);
                        writeln!(nxx, "{}", v).unwrap();
                    }
                }
            }
        }

        let mut out = String::new();
        out.push_str("# vtk DataFile Version 3.0\n");
        out.push_str("klshell midsurface fields\n");
        out.push_str("ASCII\n");
        out.push_str("DATASET UNSTRUCTURED_GRID\n");
        writeln!(out, "POINTS {} double", n_patches * pts_per_patch).unwrap();
        out.push_str(&points);
        writeln!(
            out,
            "CELLS {} {}",
            n_patches * cells_per_patch,
            n_patches * cells_per_patch * 5
        )
        .unwrap();
        for p in 0..n_patches {
            let base = p * pts_per_patch;
            for j in 0..resolution - 1 {
                for i in 0..resolution - 1 {
                    let n0 = base + j * resolution + i;
                    writeln!(out, "4 {} {} {} {}", n0, n0 + 1, n0 + resolution + 1, n0 + resolution)
                        .unwrap();
                }
            }
        }
        writeln!(out, "CELL_TYPES {}", n_patches * cells_per_patch).unwrap();
        for _ in 0..n_patches * cells_per_patch {
            out.push_str("9\n");
        }
        writeln!(out, "POINT_DATA {}", n_patches * pts_per_patch).unwrap();
        out.push_str("VECTORS displacement double\n");
        out.push_str(&disp);
        out.push_str("SCALARS Mxx double 1\nLOOKUP_TABLE default\n");
        out.push_str(&mxx);
        if with_n {
            out.push_str("SCALARS Nxx double 1\nLOOKUP_TABLE default\n");
            out.push_str(&nxx);
        }
        std::fs::write(path, out).map_err(|e| KlError::io(path, e))
    }
}

/// One probe row of the benchmark CSV report.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ProbeRow {
    pub case: String,
    pub formulation: String,
    pub degree: usize,
    pub cps: usize,
    pub slenderness: Option<f64>,
    pub dofs: usize,
    pub residual: f64,
    pub wall_seconds: f64,
    pub reference: f64,
    pub rel_error: f64,
    pub probe: f64,
}

/// Write probe rows as CSV with a header; the surveyed quantity is the final
/// column.
pub fn write_probe_csv(path: &str, rows: &[ProbeRow]) -> Result<()> {
    let mut out = String::from(
        "case,formulation,degree,cps,slenderness,dofs,residual,wall_seconds,reference,rel_error,probe\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.3e},{:.3},{},{:.6e},{}\n",
            r.case,
            r.formulation,
            r.degree,
            r.cps,
            r.slenderness.map_or(String::new(), |s| s.to_string()),
            r.dofs,
            r.residual,
            r.wall_seconds,
            r.reference,
            r.rel_error,
            r.probe,
        ));
    }
    std::fs::write(path, out).map_err(|e| KlError::io(path, e))
}
