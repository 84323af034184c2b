//! Quadrature-driven assembly of the mixed saddle-point systems.
//!
//! Block layout of the assembled symmetric system (free DOFs only):
//!
//! ```text
//! [ A    .    B^T  D^T ] [x]   [ 0]        x = (p, phi1, phi2)
//! [ .    E    -G   .   ] [N] = [ 0]        N only for the M-N formulation
//! [ B   -G^T  -C   .   ] [u]   [-F]        C only for the M formulation
//! [ D    .    .    .   ] [l]   [ 0]
//! ```
//!
//! Off-diagonal blocks are inserted together with their transposes and the
//! diagonal blocks are mirrored from their upper triangles, so the stored
//! matrix is symmetric to the bit.

use crate::discretization::{
    build_dof_map, build_multiplier_space, hybrid_stress_spaces, BoundarySpec, DofMap, MultComp,
    MultiplierSpace, ScalarField,
};
use crate::error::{KlError, Result};
use crate::geometry::{surface_frame, MultiPatchSurface, PatchEdge};
use crate::shell_model::{material_tensor, strain_operators, MaterialParams};
use crate::splines::{eval_basis, TensorSpace};
use nalgebra::Vector3;

/// Which mixed formulation to assemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formulation {
    MMixed,
    MNMixed,
}

/// Spatial profile of an area load density.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AreaProfile {
    Uniform,
    /// sin(pi xi1) sin(pi xi2), for the plate oracle problems.
    SineSine,
}

#[derive(Debug, Clone)]
pub enum LoadKind {
    Area { profile: AreaProfile },
    EdgeLine { patch: usize, edge: PatchEdge },
    Point { patch: usize, xi: [f64; 2] },
}

/// A load with a constant Cartesian direction.
#[derive(Debug, Clone)]
pub struct LoadSpec {
    pub kind: LoadKind,
    pub direction: Vector3<f64>,
    pub magnitude: f64,
}

/// Pointwise zero constraint on one covariant field component, enforced by an
/// extra constraint row. Used to pin the rigid modes that the benchmark
/// boundary conditions leave free (axial translation of the roof and pinched
/// cylinder, axis rotation of the hemisphere); the pin locations sit on
/// symmetry lines of the exact solutions.
#[derive(Debug, Clone)]
pub struct PinConstraint {
    pub patch: usize,
    pub xi: [f64; 2],
    pub field: ScalarField,
}

/// A fully specified discrete shell problem.
#[derive(Debug, Clone)]
pub struct ShellProblem {
    pub surface: MultiPatchSurface,
    pub mat: MaterialParams,
    pub bc: BoundarySpec,
    pub loads: Vec<LoadSpec>,
    pub formulation: Formulation,
    pub degree: usize,
    /// Elements per parametric direction, identical on every patch.
    pub elements: [usize; 2],
    pub pins: Vec<PinConstraint>,
}

impl ShellProblem {
    pub fn scalar_spaces(&self) -> Result<Vec<TensorSpace>> {
        (0..self.surface.patches.len())
            .map(|_| TensorSpace::uniform(self.degree, self.elements[0], self.elements[1]))
            .collect()
    }

    /// Build the DOF map and multiplier space for this problem.
    pub fn discretize(&self) -> Result<(DofMap, MultiplierSpace)> {
        let spaces = self.scalar_spaces()?;
        let mult = build_multiplier_space(&self.surface, &self.bc, self.degree, &spaces)?;
        let n_spaces = match self.formulation {
            Formulation::MMixed => None,
            Formulation::MNMixed => {
                let per_patch = hybrid_stress_spaces(self.degree, self.elements)?;
                Some([
                    vec![per_patch[0].clone(); self.surface.patches.len()],
                    vec![per_patch[1].clone(); self.surface.patches.len()],
                    vec![per_patch[2].clone(); self.surface.patches.len()],
                ])
            }
        };
        let n_lambda = mult.n_reduced + self.pins.len();
        let dofs = build_dof_map(&self.surface, spaces, &self.bc, n_spaces, n_lambda)?;
        Ok((dofs, mult))
    }
}

/// Gauss-Legendre rule on [0, 1] with p + 1 points (exact through degree
/// 2p + 1). Nodes by Newton iteration on the Legendre polynomial.
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

pub fn gauss_rule(p: usize) -> GaussRule {
    let n = p + 1;
    let mut points = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            // Legendre P_n and its derivative at x.
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = pk;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (mut p0, mut p1) = (1.0, x);
        for k in 2..=n {
            let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = pk;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        points[i] = 0.5 * (x + 1.0);
        weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    // Sort ascending for reproducibility.
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| points[a].partial_cmp(&points[b]).unwrap());
    GaussRule {
        points: idx.iter().map(|&i| points[i]).collect(),
        weights: idx.iter().map(|&i| weights[i]).collect(),
    }
}

/// Sparse triplet accumulator with periodic compaction.
pub struct TripletAccumulator {
    n: usize,
    entries: Vec<(u32, u32, f64)>,
    compacted: usize,
    cap: usize,
}

impl TripletAccumulator {
    pub fn new(n: usize) -> Self {
        TripletAccumulator {
            n,
            entries: Vec::new(),
            compacted: 0,
            cap: 8_000_000,
        }
    }

    #[inline]
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        if v == 0.0 {
            return;
        }
        debug_assert!(r < self.n && c < self.n);
        self.entries.push((r as u32, c as u32, v));
        if self.entries.len() > self.cap {
            self.compact();
        }
    }

    /// Mirror insertion for off-diagonal blocks.
    #[inline]
    pub fn add_sym(&mut self, r: usize, c: usize, v: f64) {
        self.add(r, c, v);
        self.add(c, r, v);
    }

    fn compact(&mut self) {
        self.entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut out: Vec<(u32, u32, f64)> = Vec::with_capacity(self.entries.len() / 2);
        for &(r, c, v) in self.entries.iter() {
            match out.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => out.push((r, c, v)),
            }
        }
        self.entries = out;
        self.compacted = self.entries.len();
    }

    pub fn finalize(mut self) -> Vec<(u32, u32, f64)> {
        self.compact();
        self.entries
    }
}

/// Assembled symmetric saddle-point system.
#[derive(Debug, Clone)]
pub struct SaddleSystem {
    pub n: usize,
    pub layout: crate::discretization::BlockLayout,
    /// Sorted, duplicate-free triplets of the full symmetric matrix.
    pub triplets: Vec<(u32, u32, f64)>,
    pub rhs: Vec<f64>,
}

impl SaddleSystem {
    /// Residual of a candidate solution, ||K z - f|| / ||f||.
    pub fn relative_residual(&self, z: &[f64]) -> f64 {
        let mut r = self.rhs.clone();
        for &(i, j, v) in &self.triplets {
            r[i as usize] -= v * z[j as usize];
        }
        let nr = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nf = self.rhs.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nf == 0.0 {
            nr
        } else {
            nr / nf
        }
    }

    /// Exact symmetry check of the stored triplets.
    pub fn assert_symmetric(&self) -> Result<()> {
        for &(r, c, v) in &self.triplets {
            if r < c {
                let probe = self
                    .triplets
                    .binary_search_by(|&(rr, cc, _)| (rr, cc).cmp(&(c, r)))
                    .ok()
                    .map(|k| self.triplets[k].2);
                if probe != Some(v) {
                    return Err(KlError::InvalidSetup(format!(
                        "assembled matrix not symmetric at ({r}, {c})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Matrix Market export of the system matrix.
    pub fn write_matrix_market(&self, path: &str) -> Result<()> {
        use std::io::Write;
        let mut f = std::fs::File::create(path).map_err(|e| KlError::io(path, e))?;
        let mut out = String::new();
        out.push_str("%%MatrixMarket matrix coordinate real general\n");
        out.push_str(&format!("{} {} {}\n", self.n, self.n, self.triplets.len()));
        for &(r, c, v) in &self.triplets {
            out.push_str(&format!("{} {} {:.17e}\n", r + 1, c + 1, v));
        }
        f.write_all(out.as_bytes()).map_err(|e| KlError::io(path, e))
    }
}

/// Read a Matrix Market coordinate file back into triplets.
pub fn read_matrix_market(path: &str) -> Result<(usize, Vec<(u32, u32, f64)>)> {
    let text = std::fs::read_to_string(path).map_err(|e| KlError::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('%'));
    let header = lines
        .next()
        .ok_or_else(|| KlError::Parse {
            path: path.into(),
            detail: "empty file".into(),
        })?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().unwrap_or(0))
        .collect();
    if dims.len() != 3 {
        return Err(KlError::Parse {
            path: path.into(),
            detail: "bad size line".into(),
        });
    }
    let mut trips = Vec::with_capacity(dims[2]);
    for l in lines {
        let mut it = l.split_whitespace();
        let (Some(r), Some(c), Some(v)) = (it.next(), it.next(), it.next()) else {
            continue;
        };
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| KlError::Parse {
                path: path.into(),
                detail: format!("bad number {s}"),
            })
        };
        trips.push((
            (parse(r)? as u32) - 1,
            (parse(c)? as u32) - 1,
            parse(v)?,
        ));
    }
    Ok((dims[0], trips))
}

/// Per-element scratch holding local dense blocks.
struct LocalBlocks {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    e: Vec<f64>,
    g: Vec<f64>,
}

impl LocalBlocks {
    fn new(nx: usize, nu: usize, nn: usize) -> Self {
        LocalBlocks {
            a: vec![0.0; nx * nx],
            b: vec![0.0; nx * nu],
            c: vec![0.0; nu * nu],
            e: vec![0.0; nn * nn],
            g: vec![0.0; nn * nu],
        }
    }

    fn clear(&mut self) {
        self.a.iter_mut().for_each(|v| *v = 0.0);
        self.b.iter_mut().for_each(|v| *v = 0.0);
        self.c.iter_mut().for_each(|v| *v = 0.0);
        self.e.iter_mut().for_each(|v| *v = 0.0);
        self.g.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Assemble the M-mixed system.
pub fn assemble_m_mixed(
    problem: &ShellProblem,
    dofs: &DofMap,
    mult: &MultiplierSpace,
) -> Result<SaddleSystem> {
    assemble(problem, dofs, mult, Formulation::MMixed)
}

/// Assemble the M-N-mixed system (membrane part mixed, no displacement-based
/// membrane stiffness).
pub fn assemble_mn_mixed(
    problem: &ShellProblem,
    dofs: &DofMap,
    mult: &MultiplierSpace,
) -> Result<SaddleSystem> {
    assemble(problem, dofs, mult, Formulation::MNMixed)
}

fn assemble(
    problem: &ShellProblem,
    dofs: &DofMap,
    mult: &MultiplierSpace,
    formulation: Formulation,
) -> Result<SaddleSystem> {
    if formulation != problem.formulation {
        return Err(KlError::InvalidSetup(
            "problem formulation does not match the requested assembly".into(),
        ));
    }
    let has_constrained_boundary = mult.components.is_empty()
        && {
            use crate::discretization::EdgeCondition as EC;
            let mut any = false;
            for p in 0..problem.surface.patches.len() {
                for e in crate::geometry::ALL_EDGES {
                    if matches!(
                        problem.bc.get(p, e),
                        Some(EC::Free) | Some(EC::SimplySupported)
                    ) {
                        any = true;
                    }
                }
            }
            any
        };
    if has_constrained_boundary {
        return Err(KlError::InvalidSetup(
            "multiplier space is empty but the boundary has simply supported or free edges".into(),
        ));
    }

    let with_n = formulation == Formulation::MNMixed;
    let layout = dofs.layout.clone();
    let mut acc = TripletAccumulator::new(layout.n_total);
    let rule = gauss_rule(problem.degree);
    let mat = problem.mat;

    for (patch_idx, patch) in problem.surface.patches.iter().enumerate() {
        let space = &dofs.scalar.spaces[patch_idx];
        let n_spaces: Option<[&TensorSpace; 3]> = dofs
            .n_spaces
            .as_ref()
            .map(|ns| [&ns[0][patch_idx], &ns[1][patch_idx], &ns[2][patch_idx]]);

        let nloc = (space.space_u.degree() + 1) * (space.space_v.degree() + 1);
        let nx = 3 * nloc;
        let nu = 3 * nloc;
        let nn = n_spaces.map_or(0, |ns| {
            ns.iter()
                .map(|s| (s.space_u.degree() + 1) * (s.space_v.degree() + 1))
                .sum()
        });
        let mut local = LocalBlocks::new(nx, nu, nn);

        let bu = space.space_u.breakpoints();
        let bv = space.space_v.breakpoints();
        for ev in 0..bv.len() - 1 {
            for eu in 0..bu.len() - 1 {
                local.clear();
                let mut x_idx: Vec<Option<usize>> = vec![None; nx];
                let mut u_idx: Vec<Option<usize>> = vec![None; nu];
                let mut n_idx: Vec<usize> = vec![0; nn];
                let mut first_qp = true;

                let (u0, u1) = (bu[eu], bu[eu + 1]);
                let (v0, v1) = (bv[ev], bv[ev + 1]);
                let jac = (u1 - u0) * (v1 - v0);
                for (gv, wv) in rule.points.iter().zip(&rule.weights) {
                    for (gu, wu) in rule.points.iter().zip(&rule.weights) {
                        let xi = [u0 + (u1 - u0) * gu, v0 + (v1 - v0) * gv];
                        let w = wu * wv * jac;
                        let frame = surface_frame(patch, xi)?;
                        let mop = material_tensor(&frame, &mat);
                        let basis = eval_basis(space, xi, 2)?;
                        let ops = strain_operators(&frame, &basis)?;

                        if first_qp {
                            for (k, &l) in basis.active.iter().enumerate() {
                                x_idx[k] = dofs.index(ScalarField::P, patch_idx, l);
                                x_idx[nloc + k] = dofs.index(ScalarField::Phi1, patch_idx, l);
                                x_idx[2 * nloc + k] = dofs.index(ScalarField::Phi2, patch_idx, l);
                                u_idx[k] = dofs.index(ScalarField::U1, patch_idx, l);
                                u_idx[nloc + k] = dofs.index(ScalarField::U2, patch_idx, l);
                                u_idx[2 * nloc + k] = dofs.index(ScalarField::U3, patch_idx, l);
                            }
                        }

                        // Stress-Voigt rows of M(x) = p I + symCurl phi per x-DOF.
                        let mut xrows = vec![0.0; 3 * nx];
                        for k in 0..nloc {
                            let val = basis.values[k];
                            let d1 = basis.d1[0][k];
                            let d2 = basis.d1[1][k];
                            // p block
                            xrows[k] = val;
                            xrows[nx + k] = val;
                            // phi1 block: M11 = d2, M12 = -d1/2
                            xrows[nloc + k] = d2;
                            xrows[2 * nx + nloc + k] = -0.5 * d1;
                            // phi2 block: M22 = -d1, M12 = d2/2
                            xrows[nx + 2 * nloc + k] = -d1;
                            xrows[2 * nx + 2 * nloc + k] = 0.5 * d2;
                        }

                        // Strain-Voigt rows over u-DOFs.
                        let mut k1rows = vec![0.0; 3 * nu];
                        let mut bmrows = vec![0.0; 3 * nu];
                        for v in 0..3 {
                            for c in 0..3 {
                                for k in 0..nloc {
                                    k1rows[v * nu + c * nloc + k] = ops.k1[v][c][k];
                                    bmrows[v * nu + c * nloc + k] = ops.bm[v][c][k];
                                }
                            }
                        }

                        // A block: (w / scale_m) X^T S3 X, upper triangle.
                        let mut s3x = vec![0.0; 3 * nx];
                        for r in 0..3 {
                            for cc in 0..nx {
                                s3x[r * nx + cc] = mop.s3[(r, 0)] * xrows[cc]
                                    + mop.s3[(r, 1)] * xrows[nx + cc]
                                    + mop.s3[(r, 2)] * xrows[2 * nx + cc];
                            }
                        }
                        let wa = w / mop.scale_m;
                        for i in 0..nx {
                            for j in i..nx {
                                let mut acc_v = 0.0;
                                for r in 0..3 {
                                    acc_v += xrows[r * nx + i] * s3x[r * nx + j];
                                }
                                local.a[i * nx + j] += wa * acc_v;
                            }
                        }

                        // B block: grad(u3).grad(q) - kappa1(u) : M(y).
                        for i in 0..nx {
                            for j in 0..nu {
                                let mut acc_v = 0.0;
                                for r in 0..3 {
                                    acc_v -= xrows[r * nx + i] * k1rows[r * nu + j];
                                }
                                local.b[i * nu + j] += w * acc_v;
                            }
                        }
                        for i in 0..nloc {
                            for j in 0..nloc {
                                let gg = basis.d1[0][i] * basis.d1[0][j]
                                    + basis.d1[1][i] * basis.d1[1][j];
                                // q rows x u3 columns
                                local.b[i * nu + 2 * nloc + j] += w * gg;
                            }
                        }

                        match formulation {
                            Formulation::MMixed => {
                                // C block: t eps : C : eps sqrt(A).
                                let mut c3bm = vec![0.0; 3 * nu];
                                for r in 0..3 {
                                    for cc in 0..nu {
                                        c3bm[r * nu + cc] = mop.c3[(r, 0)] * bmrows[cc]
                                            + mop.c3[(r, 1)] * bmrows[nu + cc]
                                            + mop.c3[(r, 2)] * bmrows[2 * nu + cc];
                                    }
                                }
                                let wc = w * mat.t * frame.sqrt_a;
                                for i in 0..nu {
                                    for j in i..nu {
                                        let mut acc_v = 0.0;
                                        for r in 0..3 {
                                            acc_v += bmrows[r * nu + i] * c3bm[r * nu + j];
                                        }
                                        local.c[i * nu + j] += wc * acc_v;
                                    }
                                }
                            }
                            Formulation::MNMixed => {
                                let ns = n_spaces.unwrap();
                                // Stress-Voigt rows of the N basis.
                                let mut yrows = vec![0.0; 3 * nn];
                                let mut off = 0;
                                for (comp, sp) in ns.iter().enumerate() {
                                    let nb = eval_basis(sp, xi, 0)?;
                                    if first_qp {
                                        for (k, &l) in nb.active.iter().enumerate() {
                                            n_idx[off + k] = dofs.index_n(comp, patch_idx, l);
                                        }
                                    }
                                    for (k, &val) in nb.values.iter().enumerate() {
                                        yrows[comp * nn + off + k] = val;
                                    }
                                    off += nb.values.len();
                                }
                                // E block: (w / scale_n) Y^T S3 Y.
                                let mut s3y = vec![0.0; 3 * nn];
                                for r in 0..3 {
                                    for cc in 0..nn {
                                        s3y[r * nn + cc] = mop.s3[(r, 0)] * yrows[cc]
                                            + mop.s3[(r, 1)] * yrows[nn + cc]
                                            + mop.s3[(r, 2)] * yrows[2 * nn + cc];
                                    }
                                }
                                let we = w / mop.scale_n;
                                for i in 0..nn {
                                    for j in i..nn {
                                        let mut acc_v = 0.0;
                                        for r in 0..3 {
                                            acc_v += yrows[r * nn + i] * s3y[r * nn + j];
                                        }
                                        local.e[i * nn + j] += we * acc_v;
                                    }
                                }
                                // G block: (eps(u), K).
                                for i in 0..nn {
                                    for j in 0..nu {
                                        let mut acc_v = 0.0;
                                        for r in 0..3 {
                                            acc_v += yrows[r * nn + i] * bmrows[r * nu + j];
                                        }
                                        local.g[i * nu + j] += w * acc_v;
                                    }
                                }
                            }
                        }
                        first_qp = false;
                    }
                }

                // Scatter the element blocks.
                for i in 0..nx {
                    let Some(gi) = x_idx[i] else { continue };
                    for j in i..nx {
                        let Some(gj) = x_idx[j] else { continue };
                        let v = local.a[i * nx + j];
                        if v != 0.0 {
                            acc.add(gi, gj, v);
                            if gi != gj {
                                acc.add(gj, gi, v);
                            }
                        }
                    }
                }
                for i in 0..nx {
                    let Some(gi) = x_idx[i] else { continue };
                    for j in 0..nu {
                        let Some(gj) = u_idx[j] else { continue };
                        acc.add_sym(gi, gj, local.b[i * nu + j]);
                    }
                }
                if with_n {
                    for i in 0..nn {
                        for j in i..nn {
                            let v = local.e[i * nn + j];
                            if v != 0.0 {
                                acc.add(n_idx[i], n_idx[j], v);
                                if i != j {
                                    acc.add(n_idx[j], n_idx[i], v);
                                }
                            }
                        }
                    }
                    for i in 0..nn {
                        for j in 0..nu {
                            let Some(gj) = u_idx[j] else { continue };
                            acc.add_sym(n_idx[i], gj, -local.g[i * nu + j]);
                        }
                    }
                } else {
                    for i in 0..nu {
                        let Some(gi) = u_idx[i] else { continue };
                        for j in i..nu {
                            let Some(gj) = u_idx[j] else { continue };
                            let v = -local.c[i * nu + j];
                            if v != 0.0 {
                                acc.add(gi, gj, v);
                                if gi != gj {
                                    acc.add(gj, gi, v);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    assemble_coupling_rows(problem, dofs, mult, &mut acc)?;

    let rhs_load = assemble_load(problem, dofs)?;
    let mut rhs = vec![0.0; layout.n_total];
    for (i, v) in rhs_load.iter().enumerate() {
        rhs[i] = -v;
    }

    let sys = SaddleSystem {
        n: layout.n_total,
        layout,
        triplets: acc.finalize(),
        rhs,
    };
    sys.assert_symmetric()?;
    Ok(sys)
}

/// D rows: the discrete coupling condition on constrained boundary edges plus
/// the pin constraint rows.
fn assemble_coupling_rows(
    problem: &ShellProblem,
    dofs: &DofMap,
    mult: &MultiplierSpace,
    acc: &mut TripletAccumulator,
) -> Result<()> {
    let off_l = dofs.layout.off_lambda;
    let rule = gauss_rule(problem.degree);

    for comp in &mult.components {
        let space = &dofs.scalar.spaces[comp.patch];
        let tau = comp.edge.tangent();
        let nrm = comp.edge.normal();
        let bp = comp.knot.breakpoints();
        let m = comp.knot.num_basis();
        for e in 0..bp.len() - 1 {
            let (s0, s1) = (bp[e], bp[e + 1]);
            for (g, w) in rule.points.iter().zip(&rule.weights) {
                let s = s0 + (s1 - s0) * g;
                let ws = w * (s1 - s0);
                let xi = comp.edge.point_at(s);
                let (span, md) = comp.knot.eval_ders(s, 0);
                let basis = eval_basis(space, xi, 1)?;
                let q_deg = comp.knot.degree();

                for (jm, mval) in md[0].iter().enumerate() {
                    let raw = span - q_deg + jm;
                    debug_assert!(raw < m);
                    if comp.scatter[raw].is_empty() {
                        continue;
                    }
                    for (k, &l) in basis.active.iter().enumerate() {
                        let dtau = tau[0] * basis.d1[0][k] + tau[1] * basis.d1[1][k];
                        // Column entries of this raw multiplier row.
                        let mut cols: [(Option<usize>, f64); 3] = [(None, 0.0); 3];
                        match comp.comp {
                            MultComp::Nrm => {
                                cols[0] = (
                                    dofs.index(ScalarField::P, comp.patch, l),
                                    basis.values[k],
                                );
                                cols[1] =
                                    (dofs.index(ScalarField::Phi1, comp.patch, l), nrm[0] * dtau);
                                cols[2] =
                                    (dofs.index(ScalarField::Phi2, comp.patch, l), nrm[1] * dtau);
                            }
                            MultComp::Tau => {
                                cols[1] =
                                    (dofs.index(ScalarField::Phi1, comp.patch, l), tau[0] * dtau);
                                cols[2] =
                                    (dofs.index(ScalarField::Phi2, comp.patch, l), tau[1] * dtau);
                            }
                        }
                        for (gcol, val) in cols.iter().flat_map(|&(c, v)| c.map(|cc| (cc, v))) {
                            let contrib = ws * mval * val;
                            if contrib == 0.0 {
                                continue;
                            }
                            for &(red, wgt) in &comp.scatter[raw] {
                                acc.add_sym(off_l + red, gcol, wgt * contrib);
                            }
                        }
                    }
                }
            }
        }
    }

    // Pin rows.
    for (pi, pin) in problem.pins.iter().enumerate() {
        let row = off_l + mult.n_reduced + pi;
        let space = &dofs.scalar.spaces[pin.patch];
        let basis = eval_basis(space, pin.xi, 0)?;
        for (k, &l) in basis.active.iter().enumerate() {
            if let Some(col) = dofs.index(pin.field, pin.patch, l) {
                if basis.values[k] != 0.0 {
                    acc.add_sym(row, col, basis.values[k]);
                }
            }
        }
    }
    Ok(())
}

/// Load functional F with entries over the u rows of the global numbering;
/// the assembled right-hand side of the saddle system is its negative.
pub fn assemble_load(problem: &ShellProblem, dofs: &DofMap) -> Result<Vec<f64>> {
    let mut f = vec![0.0; dofs.layout.n_total];
    let rule = gauss_rule(problem.degree + 1);
    let u_fields = [ScalarField::U1, ScalarField::U2, ScalarField::U3];

    for load in &problem.loads {
        match &load.kind {
            LoadKind::Area { profile } => {
                for (patch_idx, patch) in problem.surface.patches.iter().enumerate() {
                    let space = &dofs.scalar.spaces[patch_idx];
                    let bu = space.space_u.breakpoints();
                    let bv = space.space_v.breakpoints();
                    for ev in 0..bv.len() - 1 {
                        for eu in 0..bu.len() - 1 {
                            let (u0, u1) = (bu[eu], bu[eu + 1]);
                            let (v0, v1) = (bv[ev], bv[ev + 1]);
                            let jac = (u1 - u0) * (v1 - v0);
                            for (gv, wv) in rule.points.iter().zip(&rule.weights) {
                                for (gu, wu) in rule.points.iter().zip(&rule.weights) {
                                    let xi = [u0 + (u1 - u0) * gu, v0 + (v1 - v0) * gv];
                                    let w = wu * wv * jac;
                                    let frame = surface_frame(patch, xi)?;
                                    let amp = match profile {
                                        AreaProfile::Uniform => load.magnitude,
                                        AreaProfile::SineSine => {
                                            load.magnitude
                                                * (std::f64::consts::PI * xi[0]).sin()
                                                * (std::f64::consts::PI * xi[1]).sin()
                                        }
                                    };
                                    let fvec = amp * load.direction;
                                    let basis = eval_basis(space, xi, 0)?;
                                    for (c, field) in u_fields.iter().enumerate() {
                                        let proj = fvec.dot(&frame.acontr[c]) * frame.sqrt_a * w;
                                        for (k, &l) in basis.active.iter().enumerate() {
                                            if let Some(gi) = dofs.index(*field, patch_idx, l) {
                                                f[gi] += proj * basis.values[k];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            LoadKind::EdgeLine { patch, edge } => {
                let space = &dofs.scalar.spaces[*patch];
                let kv = if edge.running_dir() == 0 {
                    &space.space_u
                } else {
                    &space.space_v
                };
                let bp = kv.breakpoints();
                for e in 0..bp.len() - 1 {
                    let (s0, s1) = (bp[e], bp[e + 1]);
                    for (g, w) in rule.points.iter().zip(&rule.weights) {
                        let s = s0 + (s1 - s0) * g;
                        let xi = edge.point_at(s);
                        let jet = problem.surface.patches[*patch].eval(xi, 1)?;
                        let frame = surface_frame(&problem.surface.patches[*patch], xi)?;
                        let curve = jet.d1(edge.running_dir()).norm();
                        let ws = w * (s1 - s0) * curve;
                        let fvec = load.magnitude * load.direction;
                        let basis = eval_basis(space, xi, 0)?;
                        for (c, field) in u_fields.iter().enumerate() {
                            let proj = fvec.dot(&frame.acontr[c]) * ws;
                            for (k, &l) in basis.active.iter().enumerate() {
                                if let Some(gi) = dofs.index(*field, *patch, l) {
                                    f[gi] += proj * basis.values[k];
                                }
                            }
                        }
                    }
                }
            }
            LoadKind::Point { patch, xi } => {
                let frame = surface_frame(&problem.surface.patches[*patch], *xi)?;
                let fvec = load.magnitude * load.direction;
                let basis = eval_basis(&dofs.scalar.spaces[*patch], *xi, 0)?;
                for (c, field) in u_fields.iter().enumerate() {
                    let proj = fvec.dot(&frame.acontr[c]);
                    for (k, &l) in basis.active.iter().enumerate() {
                        if let Some(gi) = dofs.index(*field, *patch, l) {
                            f[gi] += proj * basis.values[k];
                        }
                    }
                }
            }
        }
    }
    Ok(f)
}
