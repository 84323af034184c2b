//! Univariate and tensor-product B-spline/NURBS evaluation.
//!
//! Basis functions and their derivatives up to third order are computed with
//! the Cox-de Boor recursion (Algorithms A2.1-A2.3 of Piegl & Tiller). Rational
//! surface derivatives come from repeated quotient-rule differentiation of the
//! weighted form, so they are exact up to round-off.

use crate::error::{KlError, Result};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Open (clamped) knot vector on [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    degree: usize,
    knots: Vec<f64>,
}

impl KnotVector {
    /// Build from raw data, validating the clamped-knot invariants.
    pub fn new(degree: usize, knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 * (degree + 1) {
            return Err(KlError::InvalidArgument(format!(
                "knot vector too short for degree {degree}: {} knots",
                knots.len()
            )));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(KlError::InvalidArgument("knots must be nondecreasing".into()));
        }
        let first = knots[0];
        let last = *knots.last().unwrap();
        if knots[..degree + 1].iter().any(|&k| k != first)
            || knots[knots.len() - degree - 1..].iter().any(|&k| k != last)
        {
            return Err(KlError::InvalidArgument(
                "first and last knots must repeat degree+1 times".into(),
            ));
        }
        Ok(KnotVector { degree, knots })
    }

    /// Uniform open knot vector with `n_elements` spans and the given
    /// continuity at interior breakpoints (interior multiplicity is
    /// `degree - continuity`). Continuity -1 yields an element-wise
    /// discontinuous space.
    pub fn open_uniform(degree: usize, n_elements: usize, continuity: i64) -> Result<Self> {
        if n_elements < 1 {
            return Err(KlError::InvalidArgument("n_elements must be >= 1".into()));
        }
        if continuity < -1 || continuity > degree as i64 - 1 {
            return Err(KlError::InvalidArgument(format!(
                "continuity {continuity} out of range [-1, {}] for degree {degree}",
                degree as i64 - 1
            )));
        }
        let mult = (degree as i64 - continuity) as usize;
        let mut knots = vec![0.0; degree + 1];
        for i in 1..n_elements {
            let b = i as f64 / n_elements as f64;
            knots.extend(std::iter::repeat(b).take(mult));
        }
        knots.extend(std::iter::repeat(1.0).take(degree + 1));
        let kv = KnotVector { degree, knots };
        debug_assert_eq!(
            kv.num_basis(),
            n_elements * mult + (continuity + 1) as usize
        );
        Ok(kv)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Dimension of the spline space.
    pub fn num_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// Distinct breakpoints (element boundaries) including 0 and 1.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b = Vec::new();
        for &k in &self.knots {
            if b.last().map_or(true, |&l: &f64| k > l) {
                b.push(k);
            }
        }
        b
    }

    /// Number of nontrivial spans.
    pub fn num_elements(&self) -> usize {
        self.breakpoints().len() - 1
    }

    /// Knot span index containing `u` (right-open, clamped at 1).
    pub fn find_span(&self, u: f64) -> usize {
        let n = self.num_basis() - 1;
        let p = self.degree;
        if u >= self.knots[n + 1] {
            return n;
        }
        if u <= self.knots[p] {
            return p;
        }
        let mut lo = p;
        let mut hi = n + 1;
        let mut mid = (lo + hi) / 2;
        while u < self.knots[mid] || u >= self.knots[mid + 1] {
            if u < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
            mid = (lo + hi) / 2;
        }
        mid
    }

    /// Nonzero basis functions and derivatives at `u`.
    ///
    /// Returns `(span, ders)` where `ders[k][j]` is the k-th derivative of
    /// basis function `span - degree + j`. Derivative orders beyond the
    /// degree are identically zero.
    pub fn eval_ders(&self, u: f64, n_ders: usize) -> (usize, Vec<Vec<f64>>) {
        let p = self.degree;
        let span = self.find_span(u);
        let kn = &self.knots;
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = u - kn[span + 1 - j];
            right[j] = kn[span + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let mut ders = vec![vec![0.0; p + 1]; n_ders + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let ncap = n_ders.min(p);
        let mut a = vec![vec![0.0; p + 1]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=ncap {
                let mut d = 0.0;
                let rk = r as i64 - k as i64;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r as i64 - 1 <= pk as i64 { k - 1 } else { p - r };
                for j in j1..=j2 {
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][(rk + j as i64) as usize];
                    d += a[s2][j] * ndu[(rk + j as i64) as usize][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut f = p as f64;
        for k in 1..=ncap {
            for j in 0..=p {
                ders[k][j] *= f;
            }
            f *= (p - k) as f64;
        }
        (span, ders)
    }

    /// Greville abscissae (knot averages; span midpoints for degree 0).
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree;
        let n = self.num_basis();
        if p == 0 {
            return (0..n)
                .map(|i| 0.5 * (self.knots[i] + self.knots[i + 1]))
                .collect();
        }
        (0..n)
            .map(|i| self.knots[i + 1..i + 1 + p].iter().sum::<f64>() / p as f64)
            .collect()
    }
}

/// Bivariate tensor-product spline space; DOF indexing is lexicographic
/// with the u index running fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpace {
    pub space_u: KnotVector,
    pub space_v: KnotVector,
}

impl TensorSpace {
    pub fn new(space_u: KnotVector, space_v: KnotVector) -> Self {
        TensorSpace { space_u, space_v }
    }

    /// Equal-degree, maximum-smoothness space on an n_u x n_v element grid.
    pub fn uniform(degree: usize, n_elems_u: usize, n_elems_v: usize) -> Result<Self> {
        Ok(TensorSpace {
            space_u: KnotVector::open_uniform(degree, n_elems_u, degree as i64 - 1)?,
            space_v: KnotVector::open_uniform(degree, n_elems_v, degree as i64 - 1)?,
        })
    }

    pub fn dim_u(&self) -> usize {
        self.space_u.num_basis()
    }

    pub fn dim_v(&self) -> usize {
        self.space_v.num_basis()
    }

    pub fn dof_count(&self) -> usize {
        self.dim_u() * self.dim_v()
    }

    pub fn index_of(&self, i: usize, j: usize) -> usize {
        j * self.dim_u() + i
    }
}

/// Active basis functions at one parametric point with derivatives.
///
/// Derivative layout: `d1 = [d/dxi1, d/dxi2]`, `d2 = [d11, d12, d22]`,
/// `d3 = [d111, d112, d122, d222]`.
#[derive(Debug, Clone)]
pub struct BasisEval {
    pub active: Vec<usize>,
    pub values: Vec<f64>,
    pub d1: [Vec<f64>; 2],
    pub d2: [Vec<f64>; 3],
    pub d3: Option<[Vec<f64>; 4]>,
}

/// Evaluate the tensor-product basis at `xi` in the closed unit square.
pub fn eval_basis(space: &TensorSpace, xi: [f64; 2], max_deriv: usize) -> Result<BasisEval> {
    if max_deriv > 3 {
        return Err(KlError::Unsupported(format!(
            "basis derivatives of order {max_deriv} (max 3)"
        )));
    }
    if !(0.0..=1.0).contains(&xi[0]) || !(0.0..=1.0).contains(&xi[1]) {
        return Err(KlError::InvalidArgument(format!(
            "xi = ({}, {}) outside the unit square",
            xi[0], xi[1]
        )));
    }
    let (su, du) = space.space_u.eval_ders(xi[0], max_deriv);
    let (sv, dv) = space.space_v.eval_ders(xi[1], max_deriv);
    let pu = space.space_u.degree();
    let pv = space.space_v.degree();
    let nu = space.dim_u();
    let n_active = (pu + 1) * (pv + 1);

    let mut active = Vec::with_capacity(n_active);
    let take = |ku: usize, kv: usize| -> Vec<f64> {
        let mut out = Vec::with_capacity(n_active);
        for b in 0..=pv {
            for a in 0..=pu {
                out.push(du[ku][a] * dv[kv][b]);
            }
        }
        out
    };
    for b in 0..=pv {
        for a in 0..=pu {
            active.push((sv - pv + b) * nu + (su - pu + a));
        }
    }
    let values = take(0, 0);
    let d1 = if max_deriv >= 1 {
        [take(1, 0), take(0, 1)]
    } else {
        Default::default()
    };
    let d2 = if max_deriv >= 2 {
        [take(2, 0), take(1, 1), take(0, 2)]
    } else {
        Default::default()
    };
    let d3 = if max_deriv >= 3 {
        Some([take(3, 0), take(2, 1), take(1, 2), take(0, 3)])
    } else {
        None
    };
    Ok(BasisEval {
        active,
        values,
        d1,
        d2,
        d3,
    })
}

/// Map from 2D partial-derivative multi-index (a, b) with a + b <= 3 to a
/// flat slot; order: value, d1, d11, d12, d22, d111, d112, d122, d222.
pub const JET_INDEX: [(usize, usize); 10] = [
    (0, 0),
    (1, 0),
    (0, 1),
    (2, 0),
    (1, 1),
    (0, 2),
    (3, 0),
    (2, 1),
    (1, 2),
    (0, 3),
];

fn jet_slot(a: usize, b: usize) -> usize {
    JET_INDEX.iter().position(|&(x, y)| x == a && y == b).unwrap()
}

/// Point on a surface together with partial derivatives up to `max_deriv`.
#[derive(Debug, Clone)]
pub struct SurfaceJet {
    pub max_deriv: usize,
    d: [Vector3<f64>; 10],
}

impl SurfaceJet {
    pub fn from_slots(max_deriv: usize, d: [Vector3<f64>; 10]) -> Self {
        SurfaceJet { max_deriv, d }
    }

    pub fn point(&self) -> Vector3<f64> {
        self.d[0]
    }

    /// First partial d/dxi^alpha, alpha in {0, 1}.
    pub fn d1(&self, alpha: usize) -> Vector3<f64> {
        self.d[1 + alpha]
    }

    /// Second partial, symmetric in (alpha, beta).
    pub fn d2(&self, alpha: usize, beta: usize) -> Vector3<f64> {
        self.d[jet_slot(
            (alpha == 0) as usize + (beta == 0) as usize,
            (alpha == 1) as usize + (beta == 1) as usize,
        )]
    }

    /// Third partial, symmetric in all indices.
    pub fn d3(&self, alpha: usize, beta: usize, gamma: usize) -> Vector3<f64> {
        let a = (alpha == 0) as usize + (beta == 0) as usize + (gamma == 0) as usize;
        self.d[jet_slot(a, 3 - a)]
    }
}

/// NURBS surface patch over the unit square.
#[derive(Debug, Clone)]
pub struct NurbsPatch {
    pub space: TensorSpace,
    pub control_points: Vec<Vector3<f64>>,
    pub weights: Vec<f64>,
}

impl NurbsPatch {
    pub fn new(
        space: TensorSpace,
        control_points: Vec<Vector3<f64>>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let n = space.dof_count();
        if control_points.len() != n || weights.len() != n {
            return Err(KlError::InvalidArgument(format!(
                "control net size mismatch: space has {n} DOFs, got {} points / {} weights",
                control_points.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|&w| w <= 0.0) {
            return Err(KlError::InvalidArgument("weights must be positive".into()));
        }
        Ok(NurbsPatch {
            space,
            control_points,
            weights,
        })
    }

    /// Evaluate the midsurface map and its partials by the quotient rule on
    /// the weighted form.
    pub fn eval(&self, xi: [f64; 2], max_deriv: usize) -> Result<SurfaceJet> {
        let basis = eval_basis(&self.space, xi, max_deriv)?;
        let mut aw = [Vector3::zeros(); 10];
        let mut w = [0.0f64; 10];
        let mut accum = |slot: usize, ders: &[f64], basis: &BasisEval| {
            for (k, &gi) in basis.active.iter().enumerate() {
                let wk = self.weights[gi];
                aw[slot] += ders[k] * wk * self.control_points[gi];
                w[slot] += ders[k] * wk;
            }
        };
        accum(0, &basis.values, &basis);
        if max_deriv >= 1 {
            accum(1, &basis.d1[0], &basis);
            accum(2, &basis.d1[1], &basis);
        }
        if max_deriv >= 2 {
            accum(3, &basis.d2[0], &basis);
            accum(4, &basis.d2[1], &basis);
            accum(5, &basis.d2[2], &basis);
        }
        if max_deriv >= 3 {
            let d3 = basis.d3.as_ref().unwrap();
            accum(6, &d3[0], &basis);
            accum(7, &d3[1], &basis);
            accum(8, &d3[2], &basis);
            accum(9, &d3[3], &basis);
        }

        let binom = |n: usize, k: usize| -> f64 {
            match (n, k) {
                (_, 0) => 1.0,
                (n, k) if k == n => 1.0,
                (2, 1) => 2.0,
                (3, 1) | (3, 2) => 3.0,
                _ => 1.0,
            }
        };
        let mut s = [Vector3::zeros(); 10];
        for (slot, &(a, b)) in JET_INDEX.iter().enumerate() {
            if a + b > max_deriv {
                break;
            }
            let mut num = aw[slot];
            for c in 0..=a {
                for d in 0..=b {
                    if c == 0 && d == 0 {
                        continue;
                    }
                    num -= binom(a, c) * binom(b, d) * w[jet_slot(c, d)] * s[jet_slot(a - c, b - d)];
                }
            }
            s[slot] = num / w[0];
        }
        Ok(SurfaceJet::from_slots(max_deriv, s))
    }

    /// Insert a knot in the given direction (0 = u, 1 = v) via Boehm's
    /// algorithm on homogeneous coordinates. Geometry is unchanged.
    pub fn insert_knot(&self, dir: usize, u: f64) -> Result<NurbsPatch> {
        if !(0.0 < u && u < 1.0) {
            return Err(KlError::InvalidArgument(format!(
                "inserted knot {u} must lie strictly inside (0, 1)"
            )));
        }
        let (kv, other) = if dir == 0 {
            (&self.space.space_u, &self.space.space_v)
        } else {
            (&self.space.space_v, &self.space.space_u)
        };
        let p = kv.degree();
        let span = kv.find_span(u);
        let old = kv.knots();
        let nu = self.space.dim_u();
        let n_rows = other.num_basis();

        // Homogeneous 4D control net addressed as (i along dir, row).
        let get = |i: usize, row: usize| -> [f64; 4] {
            let gi = if dir == 0 {
                row * nu + i
            } else {
                i * nu + row
            };
            let wk = self.weights[gi];
            let pcp = self.control_points[gi];
            [pcp.x * wk, pcp.y * wk, pcp.z * wk, wk]
        };

        let n_old = kv.num_basis();
        let mut new_ctrl = vec![[0.0; 4]; (n_old + 1) * n_rows];
        let mut set = |i: usize, row: usize, v: [f64; 4]| {
            new_ctrl[row * (n_old + 1) + i] = v;
        };
        for row in 0..n_rows {
            for i in 0..=span - p {
                set(i, row, get(i, row));
            }
            for i in span - p + 1..=span {
                let alpha = (u - old[i]) / (old[i + p] - old[i]);
                let a = get(i, row);
                let b = get(i - 1, row);
                let mut v = [0.0; 4];
                for c in 0..4 {
                    v[c] = alpha * a[c] + (1.0 - alpha) * b[c];
                }
                set(i, row, v);
            }
            for i in span + 1..=n_old {
                set(i, row, get(i - 1, row));
            }
        }

        let mut knots = old.to_vec();
        knots.insert(span + 1, u);
        let new_kv = KnotVector::new(p, knots)?;
        let (space, reorder): (TensorSpace, Box<dyn Fn(usize, usize) -> usize>) = if dir == 0 {
            let s = TensorSpace::new(new_kv, self.space.space_v.clone());
            let w = s.dim_u();
            (s, Box::new(move |i, row| row * w + i))
        } else {
            let s = TensorSpace::new(self.space.space_u.clone(), new_kv);
            (s, Box::new(move |i, row| i * nu + row))
        };
        let n_total = space.dof_count();
        let mut cps = vec![Vector3::zeros(); n_total];
        let mut ws = vec![0.0; n_total];
        for row in 0..n_rows {
            for i in 0..=n_old {
                let h = new_ctrl[row * (n_old + 1) + i];
                let gi = reorder(i, row);
                ws[gi] = h[3];
                cps[gi] = Vector3::new(h[0], h[1], h[2]) / h[3];
            }
        }
        NurbsPatch::new(space, cps, ws)
    }

    /// Dyadic refinement: insert the midpoint of every span in both directions.
    pub fn refine_dyadic(&self) -> Result<NurbsPatch> {
        let mut patch = self.clone();
        for dir in 0..2 {
            let kv = if dir == 0 {
                &patch.space.space_u
            } else {
                &patch.space.space_v
            };
            let mids: Vec<f64> = kv
                .breakpoints()
                .windows(2)
                .map(|w| 0.5 * (w[0] + w[1]))
                .collect();
            for m in mids {
                patch = patch.insert_knot(dir, m)?;
            }
        }
        Ok(patch)
    }
}

/// Serialized patch form: `{degree_u, degree_v, knots_u, knots_v,
/// control_points: [[x, y, z, w], ...]}`.
#[derive(Debug, Serialize, Deserialize)]
pub struct PatchJson {
    pub degree_u: usize,
    pub degree_v: usize,
    pub knots_u: Vec<f64>,
    pub knots_v: Vec<f64>,
    pub control_points: Vec<[f64; 4]>,
}

impl From<&NurbsPatch> for PatchJson {
    fn from(p: &NurbsPatch) -> Self {
        PatchJson {
            degree_u: p.space.space_u.degree(),
            degree_v: p.space.space_v.degree(),
            knots_u: p.space.space_u.knots().to_vec(),
            knots_v: p.space.space_v.knots().to_vec(),
            control_points: p
                .control_points
                .iter()
                .zip(&p.weights)
                .map(|(c, &w)| [c.x, c.y, c.z, w])
                .collect(),
        }
    }
}

impl TryFrom<PatchJson> for NurbsPatch {
    type Error = KlError;

    fn try_from(j: PatchJson) -> Result<Self> {
        let space = TensorSpace::new(
            KnotVector::new(j.degree_u, j.knots_u)?,
            KnotVector::new(j.degree_v, j.knots_v)?,
        );
        let (cps, ws) = j
            .control_points
            .iter()
            .map(|c| (Vector3::new(c[0], c[1], c[2]), c[3]))
            .unzip();
        NurbsPatch::new(space, cps, ws)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_square_patch() -> NurbsPatch {
        let space = TensorSpace::uniform(1, 1, 1).unwrap();
        let cps = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
        ];
        NurbsPatch::new(space, cps, vec![1.0; 4]).unwrap()
    }

    /// Rational quadratic quarter circle of radius `r` in the x-y plane,
    /// swept linearly in z to make a surface patch.
    pub(crate) fn quarter_circle_strip(r: f64) -> NurbsPatch {
        let w = (0.5f64).sqrt();
        let space = TensorSpace::new(
            KnotVector::open_uniform(2, 1, 1).unwrap(),
            KnotVector::open_uniform(1, 1, 0).unwrap(),
        );
        let arc = [
            (Vector3::new(r, 0.0, 0.0), 1.0),
            (Vector3::new(r, r, 0.0), w),
            (Vector3::new(0.0, r, 0.0), 1.0),
        ];
        let mut cps = Vec::new();
        let mut ws = Vec::new();
        for z in [0.0, 1.0] {
            for (c, wk) in arc {
                cps.push(Vector3::new(c.x, c.y, z));
                ws.push(wk);
            }
        }
        NurbsPatch::new(space, cps, ws).unwrap()
    }

    #[test]
    fn open_knot_vector_examples() {
        let kv = KnotVector::open_uniform(1, 1, 0).unwrap();
        assert_eq!(kv.knots(), &[0.0, 0.0, 1.0, 1.0]);
        assert_eq!(kv.num_basis(), 2);

        let kv = KnotVector::open_uniform(2, 2, 1).unwrap();
        assert_eq!(kv.knots(), &[0.0, 0.0, 0.0, 0.5, 1.0, 1.0, 1.0]);
        assert_eq!(kv.num_basis(), 4);

        // Dimension formula checked against a brute-force basis count: the
        // multiplicity-2 interior knot splits the space into two C0-joined
        // quadratic Bezier segments, 3 + 3 - 1 = 5 functions.
        let kv = KnotVector::open_uniform(2, 2, 0).unwrap();
        assert_eq!(kv.knots(), &[0.0, 0.0, 0.0, 0.5, 0.5, 1.0, 1.0, 1.0]);
        assert_eq!(kv.num_basis(), 5);

        assert!(KnotVector::open_uniform(2, 2, 2).is_err());
        assert!(KnotVector::open_uniform(2, 2, -2).is_err());

        // Discontinuous piecewise constants for the degree-0 HS factor.
        let kv = KnotVector::open_uniform(0, 2, -1).unwrap();
        assert_eq!(kv.num_basis(), 2);
    }

    #[test]
    fn bilinear_hat_symmetry() {
        let space = TensorSpace::uniform(1, 1, 1).unwrap();
        let b = eval_basis(&space, [0.5, 0.5], 1).unwrap();
        assert_eq!(b.values.len(), 4);
        for v in &b.values {
            assert_abs_diff_eq!(*v, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn bernstein_quadratic_at_half() {
        // (1-x)^2, 2x(1-x), x^2 and their derivatives at x = 0.5.
        let kv = KnotVector::open_uniform(2, 1, 1).unwrap();
        let (_, d) = kv.eval_ders(0.5, 2);
        assert_abs_diff_eq!(d[0][0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(d[0][1], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(d[0][2], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(d[1][0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(d[1][1], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(d[1][2], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(d[2][0], 2.0, epsilon = 1e-13);
        assert_abs_diff_eq!(d[2][1], -4.0, epsilon = 1e-13);
        assert_abs_diff_eq!(d[2][2], 2.0, epsilon = 1e-13);
    }

    #[test]
    fn partition_of_unity_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for (p, ne) in [(2usize, 5usize), (3, 4), (4, 3), (1, 7)] {
            let space = TensorSpace::uniform(p, ne, ne + 1).unwrap();
            for _ in 0..250 {
                let xi = [rng.gen::<f64>(), rng.gen::<f64>()];
                let b = eval_basis(&space, xi, 2).unwrap();
                let s: f64 = b.values.iter().sum();
                assert!((s - 1.0).abs() < 1e-13, "PU violated: {s}");
                for d in &b.d1 {
                    let sd: f64 = d.iter().sum();
                    assert!(sd.abs() < 1e-11, "derivative sum {sd}");
                }
            }
        }
    }

    #[test]
    fn derivative_finite_difference_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let kv = KnotVector::open_uniform(3, 4, 2).unwrap();
        let h = 1e-6;
        for _ in 0..50 {
            let u = rng.gen_range(0.01..0.99);
            let (sp, d) = kv.eval_ders(u, 3);
            let (sp_p, dp) = kv.eval_ders(u + h, 2);
            let (sp_m, dm) = kv.eval_ders(u - h, 2);
            if sp_p != sp || sp_m != sp {
                continue; // straddles a knot; FD not meaningful
            }
            for j in 0..=3 {
                for k in 0..3usize {
                    let fd = (dp[k][j] - dm[k][j]) / (2.0 * h);
                    let ex = d[k + 1][j];
                    let scale = ex.abs().max(1.0);
                    assert!(
                        (fd - ex).abs() / scale < 1e-6 * 10.0,
                        "order {k}->{} mismatch: fd {fd} vs {ex}",
                        k + 1
                    );
                }
            }
        }
    }

    #[test]
    fn flat_patch_is_identity_map() {
        let p = unit_square_patch();
        let j = p.eval([0.3, 0.7], 3).unwrap();
        assert_abs_diff_eq!(j.point().x, 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(j.point().y, 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(j.point().z, 0.0, epsilon = 1e-15);
        for (a, b) in [(0, 0), (0, 1), (1, 1)] {
            assert!(j.d2(a, b).norm() < 1e-14);
        }
        for (a, b, c) in [(0, 0, 0), (0, 0, 1), (0, 1, 1), (1, 1, 1)] {
            assert!(j.d3(a, b, c).norm() < 1e-14);
        }
    }

    #[test]
    fn nurbs_circle_exactness() {
        let r = 2.5;
        let p = quarter_circle_strip(r);
        let j = p.eval([0.5, 0.5], 0).unwrap();
        let rad = (j.point().x * j.point().x + j.point().y * j.point().y).sqrt();
        assert_abs_diff_eq!(rad, r, epsilon = 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let xi = [rng.gen::<f64>(), rng.gen::<f64>()];
            let j = p.eval(xi, 0).unwrap();
            let rad = (j.point().x * j.point().x + j.point().y * j.point().y).sqrt();
            assert!((rad - r).abs() < 1e-13);
        }
    }

    #[test]
    fn corner_evaluation_is_clamped() {
        let p = quarter_circle_strip(1.0);
        let j = p.eval([0.0, 0.0], 0).unwrap();
        assert!((j.point() - p.control_points[0]).norm() < 1e-15);
        let j = p.eval([1.0, 1.0], 0).unwrap();
        assert!((j.point() - *p.control_points.last().unwrap()).norm() < 1e-15);
    }

    #[test]
    fn rational_derivatives_match_finite_differences() {
        let p = quarter_circle_strip(1.7);
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let xi = [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)];
            let j = p.eval(xi, 3).unwrap();
            for alpha in 0..2usize {
                let mut xp = xi;
                let mut xm = xi;
                xp[alpha] += h;
                xm[alpha] -= h;
                let jp = p.eval(xp, 2).unwrap();
                let jm = p.eval(xm, 2).unwrap();
                let fd1 = (jp.point() - jm.point()) / (2.0 * h);
                assert!((fd1 - j.d1(alpha)).norm() < 2e-6 * j.d1(alpha).norm().max(1.0));
                for beta in 0..2usize {
                    let fd2 = (jp.d1(beta) - jm.d1(beta)) / (2.0 * h);
                    assert!((fd2 - j.d2(alpha, beta)).norm() < 5e-6 * j.d2(alpha, beta).norm().max(1.0));
                    for gamma in beta..2usize {
                        let fd3 = (jp.d2(beta, gamma) - jm.d2(beta, gamma)) / (2.0 * h);
                        assert!(
                            (fd3 - j.d3(alpha, beta, gamma)).norm()
                                < 1e-5 * j.d3(alpha, beta, gamma).norm().max(1.0)
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn knot_insertion_preserves_geometry() {
        let p = quarter_circle_strip(3.0);
        let refined = p.refine_dyadic().unwrap().refine_dyadic().unwrap();
        assert_eq!(refined.space.space_u.num_elements(), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let xi = [rng.gen::<f64>(), rng.gen::<f64>()];
            let a = p.eval(xi, 1).unwrap();
            let b = refined.eval(xi, 1).unwrap();
            assert!((a.point() - b.point()).norm() < 1e-12);
            assert!((a.d1(0) - b.d1(0)).norm() < 1e-10);
        }
    }

    #[test]
    fn patch_json_round_trip() {
        let p = quarter_circle_strip(1.0);
        let json = serde_json::to_string(&PatchJson::from(&p)).unwrap();
        let back: NurbsPatch = serde_json::from_str::<PatchJson>(&json)
            .unwrap()
            .try_into()
            .unwrap();
        for xi in [[0.2, 0.8], [0.6, 0.1]] {
            let a = p.eval(xi, 0).unwrap();
            let b = back.eval(xi, 0).unwrap();
            assert!((a.point() - b.point()).norm() < 1e-15);
        }
    }

    #[test]
    fn eval_error_paths() {
        let space = TensorSpace::uniform(2, 2, 2).unwrap();
        assert!(eval_basis(&space, [0.5, 0.5], 4).is_err());
        assert!(eval_basis(&space, [1.5, 0.5], 1).is_err());
    }
}
