//! Pointwise surface differential geometry and the benchmark geometry catalog.
//!
//! All benchmark midsurfaces are exact rational quadratic NURBS in the curved
//! direction. Curvature quantities follow the usual shell conventions:
//! B_ab = A3 . d_b A_a with the normal oriented outward from the curvature
//! center, so cylinders and spheres carry negative curvature components.

use crate::error::{KlError, Result};
use crate::splines::{KnotVector, NurbsPatch, PatchJson, SurfaceJet, TensorSpace};
use nalgebra::{Matrix2, Vector3};
use serde::{Deserialize, Serialize};

/// Anything that can produce a surface point with derivatives; implemented by
/// NURBS patches and by analytic test surfaces.
pub trait SurfaceMap {
    fn eval_jet(&self, xi: [f64; 2], max_deriv: usize) -> Result<SurfaceJet>;
}

impl SurfaceMap for NurbsPatch {
    fn eval_jet(&self, xi: [f64; 2], max_deriv: usize) -> Result<SurfaceJet> {
        self.eval(xi, max_deriv)
    }
}

/// All pointwise quantities of the undeformed midsurface at one parametric
/// point.
///
/// Index conventions: `gamma[s][a][b]` is the Christoffel symbol with upper
/// index s, `bmixed[(t, a)]` is B^t_a (upper index = row), and
/// `bmixed_cd[a][t][b]` is the covariant derivative B^t_b|_a.
#[derive(Debug, Clone)]
pub struct GeometryFrame {
    pub a1: Vector3<f64>,
    pub a2: Vector3<f64>,
    pub a3: Vector3<f64>,
    pub aab: Matrix2<f64>,
    pub aab_inv: Matrix2<f64>,
    pub acontr: [Vector3<f64>; 3],
    pub sqrt_a: f64,
    pub gamma: [[[f64; 2]; 2]; 2],
    pub bab: Matrix2<f64>,
    pub bmixed: Matrix2<f64>,
    pub bmixed_cd: [[[f64; 2]; 2]; 2],
}

impl GeometryFrame {
    pub fn tangent(&self, alpha: usize) -> Vector3<f64> {
        if alpha == 0 {
            self.a1
        } else {
            self.a2
        }
    }
}

/// Compute the full geometry frame at `xi`. Requires third map derivatives
/// for the covariant derivative of the second fundamental form.
pub fn surface_frame(map: &impl SurfaceMap, xi: [f64; 2]) -> Result<GeometryFrame> {
    let jet = map.eval_jet(xi, 3)?;
    frame_from_jet(&jet, xi)
}

pub fn frame_from_jet(jet: &SurfaceJet, xi: [f64; 2]) -> Result<GeometryFrame> {
    let a1 = jet.d1(0);
    let a2 = jet.d1(1);
    let n = a1.cross(&a2);
    let n_norm = n.norm();
    if n_norm <= 1e-12 * a1.norm() * a2.norm() || n_norm == 0.0 {
        return Err(KlError::SingularGeometry(xi[0], xi[1]));
    }
    let a3 = n / n_norm;

    let aab = Matrix2::new(a1.dot(&a1), a1.dot(&a2), a2.dot(&a1), a2.dot(&a2));
    let det = aab.determinant();
    let sqrt_a = det.sqrt();
    let aab_inv = Matrix2::new(aab[(1, 1)], -aab[(0, 1)], -aab[(1, 0)], aab[(0, 0)]) / det;

    let tang = [a1, a2];
    let mut acontr = [Vector3::zeros(); 3];
    for alpha in 0..2 {
        acontr[alpha] = aab_inv[(alpha, 0)] * tang[0] + aab_inv[(alpha, 1)] * tang[1];
    }
    acontr[2] = a3;

    let mut gamma = [[[0.0; 2]; 2]; 2];
    let mut bab: Matrix2<f64> = Matrix2::zeros();
    for alpha in 0..2 {
        for beta in 0..2 {
            let d2 = jet.d2(alpha, beta);
            bab[(alpha, beta)] = a3.dot(&d2);
            for sigma in 0..2 {
                gamma[sigma][alpha][beta] = acontr[sigma].dot(&d2);
            }
        }
    }

    // B^b_a = A^{bs} B_{sa}
    let mut bmixed: Matrix2<f64> = Matrix2::zeros();
    for b in 0..2 {
        for a in 0..2 {
            for s in 0..2 {
                bmixed[(b, a)] += aab_inv[(b, s)] * bab[(s, a)];
            }
        }
    }

    // Weingarten: d_a A3 = -B^s_a A_s
    let da3: [Vector3<f64>; 2] = [
        -(bmixed[(0, 0)] * a1 + bmixed[(1, 0)] * a2),
        -(bmixed[(0, 1)] * a1 + bmixed[(1, 1)] * a2),
    ];

    // d_a A_{mn} = R_{,ma} . A_n + A_m . R_{,na}
    let mut d_aab = [[[0.0; 2]; 2]; 2];
    for a in 0..2 {
        for m in 0..2 {
            for nn in 0..2 {
                d_aab[a][m][nn] = jet.d2(m, a).dot(&tang[nn]) + tang[m].dot(&jet.d2(nn, a));
            }
        }
    }
    // d_a A^{ts} = -A^{tm} (d_a A_{mn}) A^{ns}
    let mut d_aab_inv = [[[0.0; 2]; 2]; 2];
    for a in 0..2 {
        for t in 0..2 {
            for s in 0..2 {
                let mut acc = 0.0;
                for m in 0..2 {
                    for nn in 0..2 {
                        acc += aab_inv[(t, m)] * d_aab[a][m][nn] * aab_inv[(nn, s)];
                    }
                }
                d_aab_inv[a][t][s] = -acc;
            }
        }
    }
    // d_a B_{sb} = (d_a A3) . R_{,sb} + A3 . R_{,sba}
    let mut d_bab = [[[0.0; 2]; 2]; 2];
    for a in 0..2 {
        for s in 0..2 {
            for b in 0..2 {
                d_bab[a][s][b] = da3[a].dot(&jet.d2(s, b)) + a3.dot(&jet.d3(s, b, a));
            }
        }
    }
    // B^t_b|_a = d_a B^t_b + G^t_{as} B^s_b - G^s_{ab} B^t_s
    let mut bmixed_cd = [[[0.0; 2]; 2]; 2];
    for a in 0..2 {
        for t in 0..2 {
            for b in 0..2 {
                let mut d_btb = 0.0;
                for s in 0..2 {
                    d_btb += d_aab_inv[a][t][s] * bab[(s, b)] + aab_inv[(t, s)] * d_bab[a][s][b];
                }
                let mut val = d_btb;
                for s in 0..2 {
                    val += gamma[t][a][s] * bmixed[(s, b)] - gamma[s][a][b] * bmixed[(t, s)];
                }
                bmixed_cd[a][t][b] = val;
            }
        }
    }

    Ok(GeometryFrame {
        a1,
        a2,
        a3,
        aab,
        aab_inv,
        acontr,
        sqrt_a,
        gamma,
        bab,
        bmixed,
        bmixed_cd,
    })
}

/// Patch edge labels; West/East are xi1 = 0/1, South/North are xi2 = 0/1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PatchEdge {
    West,
    East,
    South,
    North,
}

pub const ALL_EDGES: [PatchEdge; 4] = [
    PatchEdge::West,
    PatchEdge::East,
    PatchEdge::South,
    PatchEdge::North,
];

impl PatchEdge {
    /// Outward unit normal of the parametric square.
    pub fn normal(self) -> [f64; 2] {
        match self {
            PatchEdge::West => [-1.0, 0.0],
            PatchEdge::East => [1.0, 0.0],
            PatchEdge::South => [0.0, -1.0],
            PatchEdge::North => [0.0, 1.0],
        }
    }

    /// Counterclockwise unit tangent, tau = (-n2, n1).
    pub fn tangent(self) -> [f64; 2] {
        let n = self.normal();
        [-n[1], n[0]]
    }

    /// Direction (0 = u, 1 = v) of the coordinate that runs along the edge.
    pub fn running_dir(self) -> usize {
        match self {
            PatchEdge::West | PatchEdge::East => 1,
            PatchEdge::South | PatchEdge::North => 0,
        }
    }

    /// Fixed coordinate value of the edge.
    pub fn fixed_value(self) -> f64 {
        match self {
            PatchEdge::West | PatchEdge::South => 0.0,
            PatchEdge::East | PatchEdge::North => 1.0,
        }
    }

    /// Parametric point at running coordinate `s` along the edge.
    pub fn point_at(self, s: f64) -> [f64; 2] {
        match self {
            PatchEdge::West => [0.0, s],
            PatchEdge::East => [1.0, s],
            PatchEdge::South => [s, 0.0],
            PatchEdge::North => [s, 1.0],
        }
    }

    /// Corner parametric coordinates at the two ends (s = 0, s = 1).
    pub fn endpoints(self) -> ([f64; 2], [f64; 2]) {
        (self.point_at(0.0), self.point_at(1.0))
    }
}

/// Identification of two coincident patch edges. `reversed` means the running
/// coordinates are opposed.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InterfaceGlue {
    pub patch_a: usize,
    pub edge_a: PatchEdge,
    pub patch_b: usize,
    pub edge_b: PatchEdge,
    pub reversed: bool,
}

/// Collection of NURBS patches forming one midsurface.
#[derive(Debug, Clone)]
pub struct MultiPatchSurface {
    pub patches: Vec<NurbsPatch>,
    pub interfaces: Vec<InterfaceGlue>,
}

impl MultiPatchSurface {
    pub fn new(patches: Vec<NurbsPatch>, interfaces: Vec<InterfaceGlue>) -> Result<Self> {
        let s = MultiPatchSurface { patches, interfaces };
        s.validate()?;
        Ok(s)
    }

    fn model_scale(&self) -> f64 {
        self.patches
            .iter()
            .flat_map(|p| p.control_points.iter())
            .map(|c| c.norm())
            .fold(0.0, f64::max)
            .max(1.0)
    }

    fn validate(&self) -> Result<()> {
        let tol = 1e-10 * self.model_scale();
        for g in &self.interfaces {
            let pa = &self.patches[g.patch_a];
            let pb = &self.patches[g.patch_b];
            for s in [0.0, 0.25, 0.5, 0.75, 1.0] {
                let sb = if g.reversed { 1.0 - s } else { s };
                let a = pa.eval(g.edge_a.point_at(s), 0)?;
                let b = pb.eval(g.edge_b.point_at(sb), 0)?;
                if (a.point() - b.point()).norm() > tol {
                    return Err(KlError::NotSupported(format!(
                        "interface patch {} {:?} <-> patch {} {:?} not coincident",
                        g.patch_a, g.edge_a, g.patch_b, g.edge_b
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Vec<PatchJson> {
        self.patches.iter().map(PatchJson::from).collect()
    }

    /// Is the given patch edge part of an interface?
    pub fn is_interface(&self, patch: usize, edge: PatchEdge) -> bool {
        self.interfaces.iter().any(|g| {
            (g.patch_a == patch && g.edge_a == edge) || (g.patch_b == patch && g.edge_b == edge)
        })
    }
}

/// Benchmark surfaces from the shell obstacle course plus the cylindrical
/// strip used in the membrane-locking study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BenchCase {
    ScordelisLo,
    Hemisphere,
    PinchedCylinder,
    CylinderStrip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PatchLayout {
    Single,
    Four,
}

/// Fixed dimensions of the benchmark geometries.
pub mod dims {
    /// Scordelis-Lo roof: radius, length, half-opening angle (radians).
    pub const ROOF_R: f64 = 25.0;
    pub const ROOF_LENGTH: f64 = 50.0;
    pub const ROOF_HALF_ANGLE_DEG: f64 = 40.0;
    /// Pinched hemisphere radius.
    pub const HEMISPHERE_R: f64 = 10.0;
    /// Pinched cylinder: radius and length.
    pub const CYLINDER_R: f64 = 300.0;
    pub const CYLINDER_LENGTH: f64 = 600.0;
    /// Cylindrical strip: radius and width.
    pub const STRIP_R: f64 = 10.0;
    pub const STRIP_WIDTH: f64 = 1.0;
}

/// Rational quadratic arc of a circle of radius `r` in the x-z plane,
/// from angle `phi0` to `phi1` (measured from the +z axis towards +x),
/// swept linearly along y over [y0, y1]. The normal points away from the
/// axis. Requires |phi1 - phi0| < pi.
fn cylinder_panel(r: f64, phi0: f64, phi1: f64, y0: f64, y1: f64) -> Result<NurbsPatch> {
    let half = 0.5 * (phi1 - phi0);
    let w1 = half.cos();
    let phim = 0.5 * (phi0 + phi1);
    let on_circle = |phi: f64| Vector3::new(r * phi.sin(), 0.0, r * phi.cos());
    let arc = [
        (on_circle(phi0), 1.0),
        ((r / w1) * Vector3::new(phim.sin(), 0.0, phim.cos()), w1),
        (on_circle(phi1), 1.0),
    ];
    let space = TensorSpace::new(
        KnotVector::open_uniform(2, 1, 1)?,
        KnotVector::open_uniform(1, 1, 0)?,
    );
    let mut cps = Vec::new();
    let mut ws = Vec::new();
    for y in [y0, y1] {
        for (c, w) in arc {
            cps.push(Vector3::new(c.x, y, c.z));
            ws.push(w);
        }
    }
    NurbsPatch::new(space, cps, ws)
}

/// Exact spherical sector patch of radius `r`: longitude sweep
/// [lam0, lam0 + pi/2], latitude from the equator (xi2 = 0) to the pole
/// (xi2 = 1, degenerate edge). Built as a surface of revolution of the
/// quarter-circle meridian, so both directions are rational quadratics.
fn sphere_sector(r: f64, lam0: f64) -> Result<NurbsPatch> {
    let w = (0.5f64).sqrt();
    // Meridian in the lam = 0 plane: (radius rho, height z, weight).
    let meridian = [(r, 0.0, 1.0), (r, r, w), (0.0, r, 1.0)];
    let lam1 = lam0 + std::f64::consts::FRAC_PI_2;
    let lamm = 0.5 * (lam0 + lam1);
    let arc_dirs = [
        (Vector3::new(lam0.cos(), lam0.sin(), 0.0), 1.0),
        (Vector3::new(lamm.cos(), lamm.sin(), 0.0) / w, w),
        (Vector3::new(lam1.cos(), lam1.sin(), 0.0), 1.0),
    ];
    let space = TensorSpace::new(
        KnotVector::open_uniform(2, 1, 1)?,
        KnotVector::open_uniform(2, 1, 1)?,
    );
    let mut cps = Vec::new();
    let mut ws = Vec::new();
    for (rho, z, wm) in meridian {
        for (dir, wa) in &arc_dirs {
            cps.push(Vector3::new(rho * dir.x, rho * dir.y, z));
            ws.push(wm * wa);
        }
    }
    NurbsPatch::new(space, cps, ws)
}

/// Exact NURBS multipatch for a benchmark case.
///
/// Supported layouts: roof as a single patch or a 2x2 split; hemisphere and
/// pinched cylinder as four patches; strip as a single patch. Adjacent
/// patches are congruent with translation-compatible parametrizations, so
/// tangent frames agree along every interface.
pub fn benchmark_geometry(case: BenchCase, layout: PatchLayout) -> Result<MultiPatchSurface> {
    match (case, layout) {
        (BenchCase::ScordelisLo, PatchLayout::Single) => {
            let half = dims::ROOF_HALF_ANGLE_DEG.to_radians();
            let p = cylinder_panel(dims::ROOF_R, -half, half, 0.0, dims::ROOF_LENGTH)?;
            MultiPatchSurface::new(vec![p], vec![])
        }
        (BenchCase::ScordelisLo, PatchLayout::Four) => {
            let half = dims::ROOF_HALF_ANGLE_DEG.to_radians();
            let l = dims::ROOF_LENGTH;
            // Patch index j * 2 + i: i splits the arc, j splits the length.
            let mut patches = Vec::new();
            for j in 0..2 {
                for i in 0..2 {
                    let (p0, p1) = if i == 0 { (-half, 0.0) } else { (0.0, half) };
                    let (y0, y1) = if j == 0 { (0.0, l / 2.0) } else { (l / 2.0, l) };
                    patches.push(cylinder_panel(dims::ROOF_R, p0, p1, y0, y1)?);
                }
            }
            let interfaces = vec![
                glue(0, PatchEdge::East, 1, PatchEdge::West),
                glue(2, PatchEdge::East, 3, PatchEdge::West),
                glue(0, PatchEdge::North, 2, PatchEdge::South),
                glue(1, PatchEdge::North, 3, PatchEdge::South),
            ];
            MultiPatchSurface::new(patches, interfaces)
        }
        (BenchCase::Hemisphere, PatchLayout::Four) => {
            let mut patches = Vec::new();
            for k in 0..4 {
                patches.push(sphere_sector(
                    dims::HEMISPHERE_R,
                    k as f64 * std::f64::consts::FRAC_PI_2,
                )?);
            }
            let interfaces = (0..4)
                .map(|k| glue(k, PatchEdge::East, (k + 1) % 4, PatchEdge::West))
                .collect();
            MultiPatchSurface::new(patches, interfaces)
        }
        (BenchCase::PinchedCylinder, PatchLayout::Four) => {
            let mut patches = Vec::new();
            for k in 0..4 {
                let p0 = k as f64 * std::f64::consts::FRAC_PI_2;
                patches.push(cylinder_panel(
                    dims::CYLINDER_R,
                    p0,
                    p0 + std::f64::consts::FRAC_PI_2,
                    0.0,
                    dims::CYLINDER_LENGTH,
                )?);
            }
            let interfaces = (0..4)
                .map(|k| glue(k, PatchEdge::East, (k + 1) % 4, PatchEdge::West))
                .collect();
            MultiPatchSurface::new(patches, interfaces)
        }
        (BenchCase::CylinderStrip, PatchLayout::Single) => {
            let p = cylinder_panel(
                dims::STRIP_R,
                0.0,
                std::f64::consts::FRAC_PI_2,
                0.0,
                dims::STRIP_WIDTH,
            )?;
            MultiPatchSurface::new(vec![p], vec![])
        }
        _ => Err(KlError::InvalidArgument(format!(
            "unsupported case/layout combination {case:?}/{layout:?}"
        ))),
    }
}

fn glue(pa: usize, ea: PatchEdge, pb: usize, eb: PatchEdge) -> InterfaceGlue {
    InterfaceGlue {
        patch_a: pa,
        edge_a: ea,
        patch_b: pb,
        edge_b: eb,
        reversed: false,
    }
}
