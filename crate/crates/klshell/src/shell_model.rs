//! Pointwise kinematic and constitutive operators.
//!
//! Voigt convention throughout: strain-like tensors are stored as
//! (e11, e22, 2 e12), stress-like tensors as (s11, s22, s12), so the double
//! contraction of a stress with a strain is the plain dot product of the two
//! Voigt vectors.

use crate::error::{KlError, Result};
use crate::geometry::GeometryFrame;
use crate::splines::BasisEval;
use nalgebra::{Matrix2, Matrix3};

/// Linear elastic material of a shell with constant thickness.
#[derive(Debug, Clone, Copy)]
pub struct MaterialParams {
    pub e: f64,
    pub nu: f64,
    pub t: f64,
}

impl MaterialParams {
    pub fn new(e: f64, nu: f64, t: f64) -> Result<Self> {
        if e <= 0.0 || t <= 0.0 || !(0.0..0.5).contains(&nu) {
            return Err(KlError::InvalidArgument(format!(
                "material out of range: E = {e}, nu = {nu}, t = {t}"
            )));
        }
        Ok(MaterialParams { e, nu, t })
    }
}

/// Material tensor in Voigt form at one point, together with the geometry
/// scalings of the bending and membrane constitutive maps.
///
/// `c3` maps strain Voigt to stress Voigt; `s3` is its inverse built from the
/// closed-form compliance. `scale_m` = sqrt(A) t^3 / 12 and
/// `scale_n` = sqrt(A) t, so the full maps are `scale_m * c3` and
/// `scale_n * c3`.
#[derive(Debug, Clone)]
pub struct MaterialOperator {
    pub c3: Matrix3<f64>,
    pub s3: Matrix3<f64>,
    pub scale_m: f64,
    pub scale_n: f64,
}

/// Index pairs of the Voigt slots (11, 22, 12).
const VOIGT: [(usize, usize); 3] = [(0, 0), (1, 1), (0, 1)];

/// Contravariant material tensor
/// C^{abst} = E/(2(1+nu)) (A^{as}A^{bt} + A^{at}A^{bs} + 2nu/(1-nu) A^{ab}A^{st})
/// and its closed-form compliance.
pub fn material_tensor(frame: &GeometryFrame, mat: &MaterialParams) -> MaterialOperator {
    let ai = &frame.aab_inv;
    let a = &frame.aab;
    let fac = mat.e / (2.0 * (1.0 + mat.nu));
    let lam = 2.0 * mat.nu / (1.0 - mat.nu);

    let c4 = |al: usize, be: usize, si: usize, ta: usize| -> f64 {
        fac * (ai[(al, si)] * ai[(be, ta)] + ai[(al, ta)] * ai[(be, si)]
            + lam * ai[(al, be)] * ai[(si, ta)])
    };
    // Stress Voigt s_I = C3[I][J] . strain Voigt e_J with doubled shear:
    // column J = 12 already absorbs the factor 2 via minor symmetry.
    let mut c3 = Matrix3::zeros();
    for (i, &(al, be)) in VOIGT.iter().enumerate() {
        for (j, &(si, ta)) in VOIGT.iter().enumerate() {
            c3[(i, j)] = c4(al, be, si, ta);
        }
    }

    // Compliance: g_ab = (1+nu)/E S_ab - nu/E tr(S) A_ab, with S lowered by
    // the metric; emitted in strain Voigt (g11, g22, 2 g12).
    let mut s3 = Matrix3::zeros();
    for (j, &(si, ta)) in VOIGT.iter().enumerate() {
        // Unit stress in slot j as a symmetric tensor.
        let mut s = Matrix2::zeros();
        s[(si, ta)] = 1.0;
        s[(ta, si)] = 1.0;
        let lowered = a * s * a;
        let tr = a.component_mul(&s).sum(); // A_{st} S^{st}
        for (i, &(al, be)) in VOIGT.iter().enumerate() {
            let g = (1.0 + mat.nu) / mat.e * lowered[(al, be)] - mat.nu / mat.e * tr * a[(al, be)];
            s3[(i, j)] = if i == 2 { 2.0 * g } else { g };
        }
    }

    MaterialOperator {
        c3,
        s3,
        scale_m: frame.sqrt_a * mat.t.powi(3) / 12.0,
        scale_n: frame.sqrt_a * mat.t,
    }
}

/// Strain operator rows at one quadrature point.
///
/// For each Voigt slot `v` and covariant displacement component `c`,
/// `bm[v][c][k]` is the membrane strain produced by a unit coefficient on the
/// k-th active basis function of component c; likewise `k1` for the
/// first-order part of the bending strain. `hess[v][k]` and `grad3[a][k]`
/// involve only the transverse component u3.
#[derive(Debug, Clone)]
pub struct StrainOperators {
    pub bm: [[Vec<f64>; 3]; 3],
    pub k1: [[Vec<f64>; 3]; 3],
    pub hess: [Vec<f64>; 3],
    pub grad3: [Vec<f64>; 2],
}

/// Membrane strain, the first-order bending part kappa^1, the Hessian of u3
/// and its gradient, as rows over the active basis functions.
///
/// kappa^1 collects every term of the bending strain except the plain
/// Hessian of u3, so the full bending strain is hess + k1.
pub fn strain_operators(frame: &GeometryFrame, basis: &BasisEval) -> Result<StrainOperators> {
    if basis.d2.iter().any(|d| d.is_empty()) {
        return Err(KlError::InvalidArgument(
            "strain operators need basis derivatives up to order 2".into(),
        ));
    }
    let n = basis.values.len();
    let gam = &frame.gamma;
    let b = &frame.bab;
    let bm_ = &frame.bmixed;
    let bcd = &frame.bmixed_cd;

    let mut ops = StrainOperators {
        bm: Default::default(),
        k1: Default::default(),
        hess: Default::default(),
        grad3: Default::default(),
    };
    for v in 0..3 {
        for c in 0..3 {
            ops.bm[v][c] = vec![0.0; n];
            ops.k1[v][c] = vec![0.0; n];
        }
        ops.hess[v] = vec![0.0; n];
    }
    ops.grad3[0] = vec![0.0; n];
    ops.grad3[1] = vec![0.0; n];

    for k in 0..n {
        let val = basis.values[k];
        let d = [basis.d1[0][k], basis.d1[1][k]];
        let dd = [basis.d2[0][k], basis.d2[1][k], basis.d2[2][k]];

        for (v, &(al, be)) in VOIGT.iter().enumerate() {
            let shear = if v == 2 { 2.0 } else { 1.0 };
            // Tangential components c in {0, 1}.
            for c in 0..2 {
                let mut eps = -gam[c][al][be] * val;
                if al == c {
                    eps += 0.5 * d[be];
                }
                if be == c {
                    eps += 0.5 * d[al];
                }
                ops.bm[v][c][k] = shear * eps;

                // B^s_a u_{s|b} + B^t_b u_{t|a} + B^c_b|_a u_c with
                // u_{s|b} = delta_{sc} d_b N - G^c_{sb} N.
                let mut kap = bm_[(c, al)] * d[be] + bm_[(c, be)] * d[al] + bcd[al][c][be] * val;
                for s in 0..2 {
                    kap -= (bm_[(s, al)] * gam[c][s][be] + bm_[(s, be)] * gam[c][s][al]) * val;
                }
                ops.k1[v][c][k] = shear * kap;
            }
            // Transverse component u3.
            ops.bm[v][2][k] = -shear * b[(al, be)] * val;
            let mut bb = 0.0;
            for s in 0..2 {
                bb += bm_[(s, al)] * b[(s, be)];
            }
            let kap3 = -gam[0][al][be] * d[0] - gam[1][al][be] * d[1] - bb * val;
            ops.k1[v][2][k] = shear * kap3;
        }
        ops.hess[0][k] = dd[0];
        ops.hess[1][k] = dd[2];
        ops.hess[2][k] = 2.0 * dd[1];
        ops.grad3[0][k] = d[0];
        ops.grad3[1][k] = d[1];
    }
    Ok(ops)
}

/// Pointwise strain evaluation from exact first/second derivatives of the
/// covariant displacement components; shares the row formulas above and is
/// used to verify them against analytic fields.
///
/// `u[i]`, `du[i][b]` = d_b u_i, `ddu3[v]` = Hessian of u3 in Voigt order.
pub fn strains_from_jet(
    frame: &GeometryFrame,
    u: [f64; 3],
    du: [[f64; 2]; 3],
    ddu3: [f64; 3],
) -> (Matrix2<f64>, Matrix2<f64>) {
    let gam = &frame.gamma;
    let b = &frame.bab;
    let bm = &frame.bmixed;
    let bcd = &frame.bmixed_cd;

    // u_{a|b} = d_b u_a - G^s_{ab} u_s
    let cov = |a: usize, be: usize| du[a][be] - gam[0][a][be] * u[0] - gam[1][a][be] * u[1];

    let mut eps = Matrix2::zeros();
    let mut kap = Matrix2::zeros();
    for al in 0..2 {
        for be in 0..2 {
            eps[(al, be)] = 0.5 * (cov(al, be) + cov(be, al)) - b[(al, be)] * u[2];
            let hess3 = match (al, be) {
                (0, 0) => ddu3[0],
                (1, 1) => ddu3[1],
                _ => ddu3[2],
            };
            let mut k = hess3 - gam[0][al][be] * du[2][0] - gam[1][al][be] * du[2][1];
            for s in 0..2 {
                k -= bm[(s, al)] * b[(s, be)] * u[2];
                k += bm[(s, al)] * cov(s, be) + bm[(s, be)] * cov(s, al);
            }
            k += bcd[al][0][be] * u[0] + bcd[al][1][be] * u[1];
            kap[(al, be)] = k;
        }
    }
    (eps, kap)
}

/// Symmetric Curl of a 2-vector from its first partials `psi_d1[c][b]` =
/// d_b psi_c: entries (d2 psi1, (d2 psi2 - d1 psi1)/2; sym, -d1 psi2).
pub fn sym_curl(psi_d1: [[f64; 2]; 2]) -> Matrix2<f64> {
    let off = 0.5 * (psi_d1[1][1] - psi_d1[0][0]);
    Matrix2::new(psi_d1[0][1], off, off, -psi_d1[1][0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{benchmark_geometry, surface_frame, BenchCase, PatchLayout};
    use crate::splines::{eval_basis, TensorSpace};
    use approx::assert_abs_diff_eq;
    use nalgebra::{Matrix3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_frame() -> GeometryFrame {
        let space = TensorSpace::uniform(1, 1, 1).unwrap();
        let cps = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
        ];
        let patch = crate::splines::NurbsPatch::new(space, cps, vec![1.0; 4]).unwrap();
        surface_frame(&patch, [0.5, 0.5]).unwrap()
    }

    #[test]
    fn material_identity_metric_hand_values() {
        let frame = identity_frame();
        let mat = MaterialParams::new(1.0, 0.3, 1.0).unwrap();
        let op = material_tensor(&frame, &mat);
        assert_abs_diff_eq!(op.c3[(0, 0)], 1.0 / 0.91, epsilon = 1e-6);
        assert_abs_diff_eq!(op.c3[(0, 1)], 0.3 / 0.91, epsilon = 1e-6);
        assert_abs_diff_eq!(op.c3[(2, 2)], 1.0 / 2.6, epsilon = 1e-6);

        let mat0 = MaterialParams::new(2.0, 0.0, 1.0).unwrap();
        let op0 = material_tensor(&frame, &mat0);
        assert_abs_diff_eq!(op0.c3[(0, 0)], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(op0.c3[(0, 1)], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(op0.c3[(2, 2)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn material_symmetry_and_inverse_round_trip() {
        let surf = benchmark_geometry(BenchCase::Hemisphere, PatchLayout::Four).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let xi = [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.9)];
            let frame = surface_frame(&surf.patches[rng.gen_range(0..4)], xi).unwrap();
            let mat = MaterialParams::new(
                rng.gen_range(0.5..5.0),
                rng.gen_range(0.0..0.45),
                rng.gen_range(0.01..0.5),
            )
            .unwrap();
            let op = material_tensor(&frame, &mat);
            // Major symmetry of the Voigt matrix.
            assert!((op.c3 - op.c3.transpose()).norm() < 1e-10 * op.c3.norm());
            // Closed-form compliance matches the numeric inverse and the
            // round trip is the identity.
            let num_inv = op.c3.try_inverse().unwrap();
            assert!((op.s3 - num_inv).norm() < 1e-10 * num_inv.norm());
            let prod: Matrix3<f64> = op.s3 * op.c3;
            assert!((prod - Matrix3::identity()).norm() < 1e-12 * 10.0);
        }
    }

    #[test]
    fn flat_strains_reduce_to_plane_operators() {
        let frame = identity_frame();
        let space = TensorSpace::uniform(2, 2, 2).unwrap();
        let basis = eval_basis(&space, [0.3, 0.6], 2).unwrap();
        let ops = strain_operators(&frame, &basis).unwrap();
        let n = basis.values.len();
        for k in 0..n {
            // kappa^1 vanishes on a flat frame.
            for v in 0..3 {
                for c in 0..3 {
                    assert_abs_diff_eq!(ops.k1[v][c][k], 0.0, epsilon = 1e-13);
                }
            }
            // Membrane strain is the symmetric gradient of (u1, u2).
            assert_abs_diff_eq!(ops.bm[0][0][k], basis.d1[0][k], epsilon = 1e-14);
            assert_abs_diff_eq!(ops.bm[1][1][k], basis.d1[1][k], epsilon = 1e-14);
            assert_abs_diff_eq!(ops.bm[2][0][k], basis.d1[1][k], epsilon = 1e-14);
            assert_abs_diff_eq!(ops.bm[2][1][k], basis.d1[0][k], epsilon = 1e-14);
            assert_abs_diff_eq!(ops.bm[0][2][k], 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn flat_quadratic_transverse_field_bends() {
        // u3 = (xi1)^2 on a flat patch: bending strain k11 = 2, rest 0.
        let frame = identity_frame();
        let space = TensorSpace::uniform(2, 1, 1).unwrap();
        let basis = eval_basis(&space, [0.37, 0.81], 2).unwrap();
        let ops = strain_operators(&frame, &basis).unwrap();
        // Coefficients of (xi1)^2 in the Bernstein basis: (0, 0, 1) x (1, 1, 1).
        let coef = |gi: usize| -> f64 {
            let i = gi % 3;
            [0.0, 0.0, 1.0][i]
        };
        let mut kappa = [0.0; 3];
        for (k, &gi) in basis.active.iter().enumerate() {
            for v in 0..3 {
                kappa[v] += (ops.hess[v][k] + ops.k1[v][2][k]) * coef(gi);
            }
        }
        assert_abs_diff_eq!(kappa[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(kappa[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(kappa[2], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn sym_curl_examples() {
        // psi = (xi2, 0): d2 psi1 = 1.
        let m = sym_curl([[0.0, 1.0], [0.0, 0.0]]);
        assert_eq!(m, Matrix2::new(1.0, 0.0, 0.0, 0.0));
        // psi = (0, xi1): d1 psi2 = 1 -> [[0, 0], [0, -1]].
        let m = sym_curl([[0.0, 0.0], [1.0, 0.0]]);
        assert_eq!(m, Matrix2::new(0.0, 0.0, 0.0, -1.0));
        // Constant psi.
        let m = sym_curl([[0.0, 0.0], [0.0, 0.0]]);
        assert_eq!(m, Matrix2::zeros());
    }

    /// Rigid translations produce zero membrane and bending strain. The
    /// covariant components u_i = t . A_i of a rigid translation are rational
    /// in xi, so the check evaluates the strain formulas with their exact
    /// pointwise jets obtained from the surface map derivatives.
    #[test]
    fn rigid_translation_zero_strain_pointwise() {
        let cases = [
            benchmark_geometry(BenchCase::ScordelisLo, PatchLayout::Single).unwrap(),
            benchmark_geometry(BenchCase::Hemisphere, PatchLayout::Four).unwrap(),
            benchmark_geometry(BenchCase::PinchedCylinder, PatchLayout::Four).unwrap(),
            benchmark_geometry(BenchCase::CylinderStrip, PatchLayout::Single).unwrap(),
        ];
        let dirs = [Vector3::x(), Vector3::y(), Vector3::z()];
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for surf in &cases {
            for _ in 0..60 {
                let k = rng.gen_range(0..surf.patches.len());
                let xi = [rng.gen_range(0.02..0.98), rng.gen_range(0.02..0.9)];
                let patch = &surf.patches[k];
                let jet = patch.eval(xi, 3).unwrap();
                let frame = surface_frame(patch, xi).unwrap();
                let scale = frame.aab.norm().max(1.0);
                for t in dirs {
                    // u_i = t . A_i; derivatives from second/third map partials.
                    let u = [t.dot(&frame.a1), t.dot(&frame.a2), t.dot(&frame.a3)];
                    let mut du = [[0.0; 2]; 3];
                    for b in 0..2 {
                        du[0][b] = t.dot(&jet.d2(0, b));
                        du[1][b] = t.dot(&jet.d2(1, b));
                        // d_b A3 = -B^s_b A_s
                        let da3 = -(frame.bmixed[(0, b)] * frame.a1
                            + frame.bmixed[(1, b)] * frame.a2);
                        du[2][b] = t.dot(&da3);
                    }
                    let mut ddu3 = [0.0; 3];
                    for (v, (al, be)) in [(0, (0, 0)), (1, (1, 1)), (2, (0, 1))] {
                        // d_b d_a A3 by differentiating Weingarten, with
                        // d_b B^s_a = B^s_a|_b - G^s_{bt} B^t_a + G^t_{ba} B^s_t.
                        let mut v3 = Vector3::zeros();
                        for s in 0..2 {
                            let db_bsa = frame.bmixed_cd[be][s][al]
                                - frame.gamma[s][be][0] * frame.bmixed[(0, al)]
                                - frame.gamma[s][be][1] * frame.bmixed[(1, al)]
                                + frame.gamma[0][be][al] * frame.bmixed[(s, 0)]
                                + frame.gamma[1][be][al] * frame.bmixed[(s, 1)];
                            v3 -= db_bsa * frame.tangent(s);
                            v3 -= frame.bmixed[(s, al)] * jet.d2(s, be);
                        }
                        ddu3[v] = t.dot(&v3);
                    }
                    let (eps, kap) = strains_from_jet(&frame, u, du, ddu3);
                    assert!(
                        eps.norm() < 1e-9 * scale,
                        "membrane strain {} for translation",
                        eps.norm()
                    );
                    assert!(
                        kap.norm() < 1e-9 * scale,
                        "bending strain {} for translation",
                        kap.norm()
                    );
                }
            }
        }
    }

    /// Full bending strain from an independent direct implementation equals
    /// hess + kappa^1 from the row operators for random DOF vectors.
    #[test]
    fn bending_split_identity() {
        let surf = benchmark_geometry(BenchCase::ScordelisLo, PatchLayout::Single).unwrap();
        let patch = &surf.patches[0];
        let space = TensorSpace::uniform(3, 3, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = space.dof_count();
        let coeffs: Vec<[f64; 3]> = (0..n)
            .map(|_| [rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5])
            .collect();
        for _ in 0..40 {
            let xi = [rng.gen::<f64>(), rng.gen::<f64>()];
            let frame = surface_frame(patch, xi).unwrap();
            let basis = eval_basis(&space, xi, 2).unwrap();
            let ops = strain_operators(&frame, &basis).unwrap();

            // Route 1: rows.
            let mut kap_rows = [0.0; 3];
            for (k, &gi) in basis.active.iter().enumerate() {
                for v in 0..3 {
                    for c in 0..3 {
                        kap_rows[v] += ops.k1[v][c][k] * coeffs[gi][c];
                    }
                    kap_rows[v] += ops.hess[v][k] * coeffs[gi][2];
                }
            }

            // Route 2: direct formula on the interpolated field jets.
            let mut u = [0.0; 3];
            let mut du = [[0.0; 2]; 3];
            let mut ddu3 = [0.0; 3];
            for (k, &gi) in basis.active.iter().enumerate() {
                for c in 0..3 {
                    u[c] += basis.values[k] * coeffs[gi][c];
                    du[c][0] += basis.d1[0][k] * coeffs[gi][c];
                    du[c][1] += basis.d1[1][k] * coeffs[gi][c];
                }
                ddu3[0] += basis.d2[0][k] * coeffs[gi][2];
                ddu3[1] += basis.d2[2][k] * coeffs[gi][2];
                ddu3[2] += basis.d2[1][k] * coeffs[gi][2];
            }
            let (_, kap) = strains_from_jet(&frame, u, du, ddu3);
            let scale = kap.norm().max(1.0);
            assert!((kap_rows[0] - kap[(0, 0)]).abs() < 1e-13 * scale);
            assert!((kap_rows[1] - kap[(1, 1)]).abs() < 1e-13 * scale);
            assert!((kap_rows[2] - 2.0 * kap[(0, 1)]).abs() < 1e-13 * scale);
        }
    }

    /// div Div (symCurl psi) = 0: integrate symCurl psi against Hessians of
    /// interior basis functions (value and gradient vanish on the boundary).
    #[test]
    fn sym_curl_in_div_div_kernel() {
        let space = TensorSpace::uniform(3, 4, 4).unwrap();
        let rule = crate::assembly::gauss_rule(4);
        // Cubic potential.
        let psi = |x: f64, y: f64| -> [[f64; 2]; 2] {
            // psi1 = x^2 y + y^3, psi2 = x^3 - 2 x y^2
            [
                [2.0 * x * y, x * x + 3.0 * y * y],
                [3.0 * x * x - 2.0 * y * y, -4.0 * x * y],
            ]
        };
        let nu = space.dim_u();
        let nv = space.dim_v();
        let bp = space.space_u.breakpoints();
        let mut integrals = vec![0.0; space.dof_count()];
        for eu in 0..bp.len() - 1 {
            for ev in 0..bp.len() - 1 {
                for (gu, wu) in rule.points.iter().zip(&rule.weights) {
                    for (gv, wv) in rule.points.iter().zip(&rule.weights) {
                        let x = bp[eu] + (bp[eu + 1] - bp[eu]) * gu;
                        let y = bp[ev] + (bp[ev + 1] - bp[ev]) * gv;
                        let w = wu * wv * (bp[eu + 1] - bp[eu]) * (bp[ev + 1] - bp[ev]);
                        let m = sym_curl(psi(x, y));
                        let basis = eval_basis(&space, [x, y], 2).unwrap();
                        for (k, &gi) in basis.active.iter().enumerate() {
                            let contract = m[(0, 0)] * basis.d2[0][k]
                                + m[(1, 1)] * basis.d2[2][k]
                                + 2.0 * m[(0, 1)] * basis.d2[1][k];
                            integrals[gi] += w * contract;
                        }
                    }
                }
            }
        }
        for j in 2..nv - 2 {
            for i in 2..nu - 2 {
                assert!(
                    integrals[space.index_of(i, j)].abs() < 1e-11,
                    "div Div kernel violated: {}",
                    integrals[space.index_of(i, j)]
                );
            }
        }
    }
}
