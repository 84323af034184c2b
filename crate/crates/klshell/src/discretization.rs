//! Degrees-of-freedom management: C0 multi-patch gluing, essential boundary
//! conditions, and the boundary multiplier space with corner coupling.
//!
//! The multiplier components (mu_tau, mu_n) discretize the gradient traces
//! (dv3/dtau, dv3/dn) of transverse test displacements. At boundary corners
//! the incident edge components must represent a single gradient vector, so
//! corner coefficients are restricted to the feasible subspace spanned by a
//! virtual corner gradient; clamped and simply supported edges additionally
//! force that gradient's tangential (and for clamped also normal) component
//! to zero.

use crate::error::{KlError, Result};
use crate::geometry::{MultiPatchSurface, PatchEdge, ALL_EDGES};
use crate::splines::{KnotVector, TensorSpace};
use nalgebra::DMatrix;
use std::collections::HashMap;

/// Boundary condition of a non-interface patch edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeCondition {
    Clamped,
    SimplySupported,
    Free,
}

/// Per-edge boundary conditions; interface edges carry none.
#[derive(Debug, Clone)]
pub struct BoundarySpec {
    conditions: Vec<[Option<EdgeCondition>; 4]>,
}

fn edge_slot(e: PatchEdge) -> usize {
    match e {
        PatchEdge::West => 0,
        PatchEdge::East => 1,
        PatchEdge::South => 2,
        PatchEdge::North => 3,
    }
}

impl BoundarySpec {
    pub fn new(surface: &MultiPatchSurface) -> Self {
        BoundarySpec {
            conditions: vec![[None; 4]; surface.patches.len()],
        }
    }

    pub fn set(&mut self, patch: usize, edge: PatchEdge, cond: EdgeCondition) -> &mut Self {
        self.conditions[patch][edge_slot(edge)] = Some(cond);
        self
    }

    pub fn get(&self, patch: usize, edge: PatchEdge) -> Option<EdgeCondition> {
        self.conditions[patch][edge_slot(edge)]
    }

    /// Every non-interface edge must carry exactly one condition; interface
    /// edges must carry none.
    pub fn validate(&self, surface: &MultiPatchSurface) -> Result<()> {
        for p in 0..surface.patches.len() {
            for e in ALL_EDGES {
                let is_if = surface.is_interface(p, e);
                match (is_if, self.get(p, e)) {
                    (false, None) => {
                        return Err(KlError::InvalidSetup(format!(
                            "patch {p} edge {e:?} has no boundary condition"
                        )))
                    }
                    (true, Some(_)) => {
                        return Err(KlError::InvalidSetup(format!(
                            "patch {p} edge {e:?} is an interface but carries a condition"
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

/// Scalar unknown fields sharing the displacement space layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarField {
    P = 0,
    Phi1 = 1,
    Phi2 = 2,
    U1 = 3,
    U2 = 4,
    U3 = 5,
}

pub const SCALAR_FIELDS: [ScalarField; 6] = [
    ScalarField::P,
    ScalarField::Phi1,
    ScalarField::Phi2,
    ScalarField::U1,
    ScalarField::U2,
    ScalarField::U3,
];

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, i: usize) -> usize {
        if self.parent[i] != i {
            let root = self.find(self.parent[i]);
            self.parent[i] = root;
        }
        self.parent[i]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Lower root wins to keep numbering deterministic.
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.parent[hi] = lo;
        }
    }
}

/// Local DOF indices along a patch edge, ordered by the running coordinate.
pub fn edge_locals(space: &TensorSpace, edge: PatchEdge) -> Vec<usize> {
    let (nu, nv) = (space.dim_u(), space.dim_v());
    match edge {
        PatchEdge::West => (0..nv).map(|j| space.index_of(0, j)).collect(),
        PatchEdge::East => (0..nv).map(|j| space.index_of(nu - 1, j)).collect(),
        PatchEdge::South => (0..nu).map(|i| space.index_of(i, 0)).collect(),
        PatchEdge::North => (0..nu).map(|i| space.index_of(i, nv - 1)).collect(),
    }
}

/// C0-glued numbering of per-patch scalar spaces.
#[derive(Debug, Clone)]
pub struct GluedSpace {
    pub spaces: Vec<TensorSpace>,
    pub global_of: Vec<Vec<usize>>,
    pub n_glued: usize,
}

pub fn glue_spaces(spaces: Vec<TensorSpace>, surface: &MultiPatchSurface) -> Result<GluedSpace> {
    let offsets: Vec<usize> = spaces
        .iter()
        .scan(0, |acc, s| {
            let o = *acc;
            *acc += s.dof_count();
            Some(o)
        })
        .collect();
    let total: usize = spaces.iter().map(|s| s.dof_count()).sum();
    let mut uf = UnionFind::new(total);

    for g in &surface.interfaces {
        let la = edge_locals(&spaces[g.patch_a], g.edge_a);
        let lb = edge_locals(&spaces[g.patch_b], g.edge_b);
        if la.len() != lb.len() {
            return Err(KlError::NotSupported(format!(
                "nonconforming interface: patch {} {:?} has {} edge DOFs, patch {} {:?} has {}",
                g.patch_a,
                g.edge_a,
                la.len(),
                g.patch_b,
                g.edge_b,
                lb.len()
            )));
        }
        let ka = knot_along(&spaces[g.patch_a], g.edge_a);
        let kb = knot_along(&spaces[g.patch_b], g.edge_b);
        if ka.degree() != kb.degree()
            || ka.knots().len() != kb.knots().len()
            || ka
                .knots()
                .iter()
                .zip(kb.knots())
                .any(|(a, b)| (a - b).abs() > 1e-12)
        {
            return Err(KlError::NotSupported(format!(
                "nonconforming interface knots between patch {} and {}",
                g.patch_a, g.patch_b
            )));
        }
        for (i, &a) in la.iter().enumerate() {
            let bi = if g.reversed { lb.len() - 1 - i } else { i };
            uf.union(offsets[g.patch_a] + a, offsets[g.patch_b] + lb[bi]);
        }
    }

    let mut glued_id: HashMap<usize, usize> = HashMap::new();
    let mut global_of = Vec::with_capacity(spaces.len());
    let mut next = 0;
    for (p, s) in spaces.iter().enumerate() {
        let mut ids = Vec::with_capacity(s.dof_count());
        for l in 0..s.dof_count() {
            let root = uf.find(offsets[p] + l);
            let id = *glued_id.entry(root).or_insert_with(|| {
                let id = next;
                next += 1;
                id
            });
            ids.push(id);
        }
        global_of.push(ids);
    }
    Ok(GluedSpace {
        spaces,
        global_of,
        n_glued: next,
    })
}

fn knot_along(space: &TensorSpace, edge: PatchEdge) -> &KnotVector {
    if edge.running_dir() == 0 {
        &space.space_u
    } else {
        &space.space_v
    }
}

/// Free numbering of one scalar field after essential-BC elimination.
#[derive(Debug, Clone)]
pub struct FieldFree {
    pub free_of_glued: Vec<Option<usize>>,
    pub n_free: usize,
}

/// Block offsets inside the assembled saddle system: x = (p, phi1, phi2),
/// then the optional per-patch N components, then u = (u1, u2, u3), then
/// the multiplier rows.
#[derive(Debug, Clone)]
pub struct BlockLayout {
    pub off_field: [usize; 6],
    pub off_n: Option<[Vec<usize>; 3]>,
    pub off_lambda: usize,
    pub n_x: usize,
    pub n_n: usize,
    pub n_u: usize,
    pub n_lambda: usize,
    pub n_total: usize,
}

/// Global DOF map of all fields.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub scalar: GluedSpace,
    pub fields: [FieldFree; 6],
    pub n_spaces: Option<[Vec<TensorSpace>; 3]>,
    pub layout: BlockLayout,
}

impl DofMap {
    /// Global matrix index of a scalar-field DOF, or None if eliminated.
    pub fn index(&self, field: ScalarField, patch: usize, local: usize) -> Option<usize> {
        let f = field as usize;
        let g = self.scalar.global_of[patch][local];
        self.fields[f].free_of_glued[g].map(|i| self.layout.off_field[f] + i)
    }

    /// Global matrix index of a membrane-force DOF (component 0..3 = 11, 22, 12).
    pub fn index_n(&self, comp: usize, patch: usize, local: usize) -> usize {
        self.layout.off_n.as_ref().expect("no N fields")[comp][patch] + local
    }
}

/// Build the glued, eliminated DOF numbering.
///
/// `n_spaces`, when present, holds the per-patch Hybrid-Stress spaces for the
/// contravariant membrane force components (kept discontinuous across
/// patches). `n_lambda` is the number of constraint rows (multiplier DOFs
/// plus point constraints).
pub fn build_dof_map(
    surface: &MultiPatchSurface,
    spaces: Vec<TensorSpace>,
    bc: &BoundarySpec,
    n_spaces: Option<[Vec<TensorSpace>; 3]>,
    n_lambda: usize,
) -> Result<DofMap> {
    bc.validate(surface)?;
    let scalar = glue_spaces(spaces, surface)?;

    // Glued ids eliminated per field.
    let mut eliminated: [Vec<bool>; 6] = std::array::from_fn(|_| vec![false; scalar.n_glued]);
    for p in 0..surface.patches.len() {
        for e in ALL_EDGES {
            let Some(cond) = bc.get(p, e) else { continue };
            let kill: &[ScalarField] = match cond {
                EdgeCondition::Clamped => &[
                    ScalarField::P,
                    ScalarField::U1,
                    ScalarField::U2,
                    ScalarField::U3,
                ],
                EdgeCondition::SimplySupported => {
                    &[ScalarField::P, ScalarField::U1, ScalarField::U3]
                }
                EdgeCondition::Free => &[],
            };
            for l in edge_locals(&scalar.spaces[p], e) {
                let g = scalar.global_of[p][l];
                for &f in kill {
                    eliminated[f as usize][g] = true;
                }
            }
        }
    }

    let fields: [FieldFree; 6] = std::array::from_fn(|f| {
        let mut free_of_glued = vec![None; scalar.n_glued];
        let mut n_free = 0;
        for g in 0..scalar.n_glued {
            if !eliminated[f][g] {
                free_of_glued[g] = Some(n_free);
                n_free += 1;
            }
        }
        FieldFree {
            free_of_glued,
            n_free,
        }
    });

    let mut off_field = [0usize; 6];
    let mut cursor = 0;
    // x block: p, phi1, phi2.
    for f in [ScalarField::P, ScalarField::Phi1, ScalarField::Phi2] {
        off_field[f as usize] = cursor;
        cursor += fields[f as usize].n_free;
    }
    let n_x = cursor;
    // N block.
    let mut n_n = 0;
    let off_n = n_spaces.as_ref().map(|ns| {
        let offs: [Vec<usize>; 3] = std::array::from_fn(|c| {
            ns[c]
                .iter()
                .map(|s| {
                    let o = cursor + n_n;
                    n_n += s.dof_count();
                    o
                })
                .collect()
        });
        offs
    });
    cursor += n_n;
    // u block.
    for f in [ScalarField::U1, ScalarField::U2, ScalarField::U3] {
        off_field[f as usize] = cursor;
        cursor += fields[f as usize].n_free;
    }
    let n_u = cursor - n_x - n_n;
    let off_lambda = cursor;
    let n_total = cursor + n_lambda;

    Ok(DofMap {
        scalar,
        fields,
        n_spaces,
        layout: BlockLayout {
            off_field,
            off_n,
            off_lambda,
            n_x,
            n_n,
            n_u,
            n_lambda,
            n_total,
        },
    })
}

/// Hybrid-Stress spaces for the contravariant membrane force components on an
/// element grid: N11 drops one degree and one smoothness order in xi1, N22 in
/// xi2, N12 in both.
pub fn hybrid_stress_spaces(degree: usize, n_elems: [usize; 2]) -> Result<[TensorSpace; 3]> {
    let p = degree as i64;
    let full = |ne: usize| KnotVector::open_uniform(degree, ne, p - 1);
    let red = |ne: usize| KnotVector::open_uniform(degree - 1, ne, p - 2);
    Ok([
        TensorSpace::new(red(n_elems[0])?, full(n_elems[1])?),
        TensorSpace::new(full(n_elems[0])?, red(n_elems[1])?),
        TensorSpace::new(red(n_elems[0])?, red(n_elems[1])?),
    ])
}

/// Multiplier component kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MultComp {
    Tau,
    Nrm,
}

/// One edge-wise multiplier component space.
#[derive(Debug, Clone)]
pub struct MultComponent {
    pub patch: usize,
    pub edge: PatchEdge,
    pub comp: MultComp,
    pub knot: KnotVector,
    /// Raw coefficient -> list of (reduced DOF, weight).
    pub scatter: Vec<Vec<(usize, f64)>>,
}

/// The discrete multiplier space after corner coupling.
#[derive(Debug, Clone)]
pub struct MultiplierSpace {
    pub components: Vec<MultComponent>,
    pub n_reduced: usize,
}

struct Junction {
    /// (component index, end 0/1) of incident multiplier coefficients.
    slots: Vec<(usize, usize)>,
    /// Direction each slot represents (tau or n of its edge).
    dirs: Vec<[f64; 2]>,
    /// Gradient conditions from incident clamped/simply supported edges.
    conditions: Vec<[f64; 2]>,
}

/// Build the multiplier space: mu_n on simply supported and free edges,
/// mu_tau on free edges, each a trace spline of degree p-1 with maximal
/// smoothness on the edge's breakpoints, coupled at boundary corners.
pub fn build_multiplier_space(
    surface: &MultiPatchSurface,
    bc: &BoundarySpec,
    degree: usize,
    scalar_spaces: &[TensorSpace],
) -> Result<MultiplierSpace> {
    bc.validate(surface)?;
    let n_patches = surface.patches.len();

    // Multiplier components per constrained edge, in deterministic order.
    let mut components = Vec::new();
    for p in 0..n_patches {
        for e in ALL_EDGES {
            let Some(cond) = bc.get(p, e) else { continue };
            let comps: &[MultComp] = match cond {
                EdgeCondition::SimplySupported => &[MultComp::Nrm],
                EdgeCondition::Free => &[MultComp::Tau, MultComp::Nrm],
                EdgeCondition::Clamped => &[],
            };
            if comps.is_empty() {
                continue;
            }
            let ne = knot_along(&scalar_spaces[p], e).num_elements();
            let knot = KnotVector::open_uniform(degree - 1, ne, degree as i64 - 2)?;
            for &c in comps {
                components.push(MultComponent {
                    patch: p,
                    edge: e,
                    comp: c,
                    knot: knot.clone(),
                    scatter: Vec::new(),
                });
            }
        }
    }

    // Identify patch corners across interfaces. Corner id = patch * 4 + cy*2 + cx.
    let corner_id = |p: usize, xy: [f64; 2]| -> usize {
        p * 4 + (xy[1].round() as usize) * 2 + (xy[0].round() as usize)
    };
    let mut uf = UnionFind::new(4 * n_patches);
    for g in &surface.interfaces {
        let (a0, a1) = g.edge_a.endpoints();
        let (b0, b1) = g.edge_b.endpoints();
        let (b0, b1) = if g.reversed { (b1, b0) } else { (b0, b1) };
        uf.union(corner_id(g.patch_a, a0), corner_id(g.patch_b, b0));
        uf.union(corner_id(g.patch_a, a1), corner_id(g.patch_b, b1));
    }

    // Gather junction data.
    let mut junctions: HashMap<usize, Junction> = HashMap::new();
    let mut junction_of_slot: HashMap<(usize, usize), usize> = HashMap::new();
    for (ci, comp) in components.iter().enumerate() {
        let (e0, e1) = comp.edge.endpoints();
        for (end, xy) in [(0usize, e0), (1usize, e1)] {
            let j = uf.find(corner_id(comp.patch, xy));
            let entry = junctions.entry(j).or_insert_with(|| Junction {
                slots: Vec::new(),
                dirs: Vec::new(),
                conditions: Vec::new(),
            });
            entry.slots.push((ci, end));
            entry.dirs.push(match comp.comp {
                MultComp::Tau => comp.edge.tangent(),
                MultComp::Nrm => comp.edge.normal(),
            });
            junction_of_slot.insert((ci, end), j);
        }
    }
    // Gradient conditions at junctions from clamped / simply supported edges.
    for p in 0..n_patches {
        for e in ALL_EDGES {
            let Some(cond) = bc.get(p, e) else { continue };
            let (c0, c1) = e.endpoints();
            for xy in [c0, c1] {
                let j = uf.find(corner_id(p, xy));
                if let Some(junc) = junctions.get_mut(&j) {
                    match cond {
                        EdgeCondition::Clamped => {
                            junc.conditions.push(e.tangent());
                            junc.conditions.push(e.normal());
                        }
                        EdgeCondition::SimplySupported => {
                            junc.conditions.push(e.tangent());
                        }
                        EdgeCondition::Free => {}
                    }
                }
            }
        }
    }

    // Cluster junctions linked by single-coefficient components (both ends
    // are the same raw coefficient).
    let junc_keys: Vec<usize> = {
        let mut k: Vec<usize> = junctions.keys().copied().collect();
        k.sort_unstable();
        k
    };
    let jpos: HashMap<usize, usize> = junc_keys.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    let mut juf = UnionFind::new(junc_keys.len());
    for (ci, comp) in components.iter().enumerate() {
        if comp.knot.num_basis() == 1 {
            let j0 = jpos[&junction_of_slot[&(ci, 0)]];
            let j1 = jpos[&junction_of_slot[&(ci, 1)]];
            juf.union(j0, j1);
        }
    }
    let mut clusters: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, &k) in junc_keys.iter().enumerate() {
        clusters.entry(juf.find(i)).or_default().push(k);
    }
    let mut cluster_roots: Vec<usize> = clusters.keys().copied().collect();
    cluster_roots.sort_unstable();

    // Reduced numbering: interior coefficients first (component order), then
    // per-cluster corner parameters.
    let mut scatter: Vec<Vec<Vec<(usize, f64)>>> = components
        .iter()
        .map(|c| vec![Vec::new(); c.knot.num_basis()])
        .collect();
    let mut n_reduced = 0;
    for (ci, comp) in components.iter().enumerate() {
        let m = comp.knot.num_basis();
        if m > 2 {
            for r in 1..m - 1 {
                scatter[ci][r].push((n_reduced, 1.0));
                n_reduced += 1;
            }
        }
    }

    for &root in &cluster_roots {
        let members = &clusters[&root];
        // Variables: gradient (2 per junction of the cluster), in member order.
        let var_of: HashMap<usize, usize> = members.iter().enumerate().map(|(i, &j)| (j, 2 * i)).collect();
        let nvar = 2 * members.len();

        // Constraint rows: per-junction gradient conditions plus consistency
        // rows of single-coefficient components joining two junctions.
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for &j in members {
            let junc = &junctions[&j];
            for cond in &junc.conditions {
                let mut row = vec![0.0; nvar];
                row[var_of[&j]] = cond[0];
                row[var_of[&j] + 1] = cond[1];
                rows.push(row);
            }
        }
        // Raw corner coefficients of the cluster, deduplicated for m == 1.
        let mut coef_rows: Vec<((usize, usize), Vec<f64>)> = Vec::new();
        for &j in members {
            let junc = &junctions[&j];
            for (s, &(ci, end)) in junc.slots.iter().enumerate() {
                let m = components[ci].knot.num_basis();
                let raw = if end == 0 { 0 } else { m - 1 };
                let dir = junc.dirs[s];
                let mut row = vec![0.0; nvar];
                row[var_of[&j]] = dir[0];
                row[var_of[&j] + 1] = dir[1];
                if m == 1 && end == 1 {
                    // Same raw coefficient as end 0; enforce consistency.
                    let prev = coef_rows
                        .iter()
                        .find(|((c, _), _)| *c == ci)
                        .map(|(_, r)| r.clone())
                        .expect("end 0 visited first");
                    let cons: Vec<f64> = prev.iter().zip(&row).map(|(a, b)| a - b).collect();
                    rows.push(cons);
                } else {
                    coef_rows.push(((ci, raw), row));
                }
            }
        }

        // Feasible corner values: columns of P * null(R).
        let z = if rows.is_empty() {
            DMatrix::identity(nvar, nvar)
        } else {
            let r = DMatrix::from_fn(rows.len(), nvar, |i, j| rows[i][j]);
            null_space(&r)
        };
        if z.ncols() == 0 || coef_rows.is_empty() {
            continue; // all corner coefficients forced to zero
        }
        let p_mat = DMatrix::from_fn(coef_rows.len(), nvar, |i, j| coef_rows[i].1[j]);
        let m_mat = &p_mat * &z;
        let basis = column_space(&m_mat);
        for c in 0..basis.ncols() {
            for (i, &((ci, raw), _)) in coef_rows.iter().enumerate() {
                let w = basis[(i, c)];
                if w.abs() > 1e-14 {
                    scatter[ci][raw].push((n_reduced, w));
                }
            }
            n_reduced += 1;
        }
    }

    for (ci, s) in scatter.into_iter().enumerate() {
        components[ci].scatter = s;
    }

    let mut space = MultiplierSpace {
        components,
        n_reduced,
    };
    prune_closed_free_loops(surface, bc, &mut space);
    Ok(space)
}

/// Orthonormal basis of the null space of `m` by modified Gram-Schmidt on
/// the orthogonal complement of the row space (small dense, few columns).
fn null_space(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.ncols();
    let scale = m.amax().max(1.0);
    let tol = 1e-10 * scale;
    // Orthonormalize the rows to get a row-space basis.
    let mut basis: Vec<nalgebra::DVector<f64>> = Vec::new();
    for i in 0..m.nrows() {
        let mut v = m.row(i).transpose();
        for b in &basis {
            let proj = b.dot(&v);
            v -= proj * b;
        }
        if v.norm() > tol {
            let nv = v.norm();
            basis.push(v / nv);
        }
    }
    // Complete to a full basis; the complement spans the null space.
    let mut null: Vec<nalgebra::DVector<f64>> = Vec::new();
    for k in 0..n {
        let mut v = nalgebra::DVector::zeros(n);
        v[k] = 1.0;
        for b in basis.iter().chain(null.iter()) {
            let proj = b.dot(&v);
            v -= proj * b;
        }
        if v.norm() > 1e-10 {
            let nv = v.norm();
            null.push(v / nv);
        }
    }
    let mut out = DMatrix::zeros(n, null.len());
    for (c, v) in null.iter().enumerate() {
        out.set_column(c, v);
    }
    out
}

/// Orthonormal basis of the column space of `m` by modified Gram-Schmidt
/// (small dense, few columns).
fn column_space(m: &DMatrix<f64>) -> DMatrix<f64> {
    let scale = m.amax().max(1.0);
    let tol = 1e-10 * scale;
    let mut basis: Vec<nalgebra::DVector<f64>> = Vec::new();
    for c in 0..m.ncols() {
        let mut v = m.column(c).into_owned();
        for b in &basis {
            let proj = b.dot(&v);
            v -= proj * b;
        }
        if v.norm() > tol {
            let nv = v.norm();
            basis.push(v / nv);
        }
    }
    let mut out = DMatrix::zeros(m.nrows(), basis.len());
    for (c, v) in basis.iter().enumerate() {
        out.set_column(c, v);
    }
    out
}

/// On a closed boundary loop made entirely of free edges whose junctions are
/// all collinear (parametric tangents continue across every junction), the
/// loop-constant mu_tau multiplier annihilates the coupling form: the
/// tangential term telescopes around the loop. Drop one dependent reduced DOF
/// per such loop so the constraint rows stay linearly independent.
fn prune_closed_free_loops(
    surface: &MultiPatchSurface,
    bc: &BoundarySpec,
    space: &mut MultiplierSpace,
) {
    // Boundary loop detection over constrained/boundary edges via corners.
    let n_patches = surface.patches.len();
    let corner_id = |p: usize, xy: [f64; 2]| -> usize {
        p * 4 + (xy[1].round() as usize) * 2 + (xy[0].round() as usize)
    };
    let mut uf = UnionFind::new(4 * n_patches);
    for g in &surface.interfaces {
        let (a0, a1) = g.edge_a.endpoints();
        let (b0, b1) = g.edge_b.endpoints();
        let (b0, b1) = if g.reversed { (b1, b0) } else { (b0, b1) };
        uf.union(corner_id(g.patch_a, a0), corner_id(g.patch_b, b0));
        uf.union(corner_id(g.patch_a, a1), corner_id(g.patch_b, b1));
    }
    // Adjacency: junction -> boundary edges.
    let mut boundary_edges: Vec<(usize, PatchEdge, usize, usize)> = Vec::new(); // patch, edge, j0, j1
    for p in 0..n_patches {
        for e in ALL_EDGES {
            if surface.is_interface(p, e) {
                continue;
            }
            let (c0, c1) = e.endpoints();
            boundary_edges.push((p, e, uf.find(corner_id(p, c0)), uf.find(corner_id(p, c1))));
        }
    }
    let mut adj: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, &(_, _, j0, j1)) in boundary_edges.iter().enumerate() {
        adj.entry(j0).or_default().push(i);
        adj.entry(j1).or_default().push(i);
    }
    // Connected components of boundary edges = loops (manifold boundary).
    let mut visited = vec![false; boundary_edges.len()];
    let mut loops: Vec<Vec<usize>> = Vec::new();
    for start in 0..boundary_edges.len() {
        if visited[start] {
            continue;
        }
        let mut stack = vec![start];
        let mut comp = Vec::new();
        visited[start] = true;
        while let Some(e) = stack.pop() {
            comp.push(e);
            let (_, _, j0, j1) = boundary_edges[e];
            for &j in [j0, j1].iter() {
                for &other in &adj[&j] {
                    if !visited[other] {
                        visited[other] = true;
                        stack.push(other);
                    }
                }
            }
        }
        comp.sort_unstable();
        loops.push(comp);
    }

    for lp in loops {
        let all_free = lp.iter().all(|&e| {
            let (p, edge, _, _) = boundary_edges[e];
            bc.get(p, edge) == Some(EdgeCondition::Free)
        });
        if !all_free {
            continue;
        }
        // Collinearity: at every junction of the loop, the two incident edge
        // tangents must coincide (same CCW direction in the shared frame).
        let mut collinear = true;
        let mut by_junction: HashMap<usize, Vec<usize>> = HashMap::new();
        for &e in &lp {
            let (_, _, j0, j1) = boundary_edges[e];
            by_junction.entry(j0).or_default().push(e);
            by_junction.entry(j1).or_default().push(e);
        }
        for edges in by_junction.values() {
            if edges.len() != 2 {
                collinear = false;
                break;
            }
            let t0 = boundary_edges[edges[0]].1.tangent();
            let t1 = boundary_edges[edges[1]].1.tangent();
            if (t0[0] - t1[0]).abs() > 1e-12 || (t0[1] - t1[1]).abs() > 1e-12 {
                collinear = false;
                break;
            }
        }
        if !collinear {
            continue;
        }

        // Null vector: mu_tau = 1 on every loop edge. Express in reduced
        // coordinates through the scatter maps and drop the largest entry.
        let mut weight = vec![0.0f64; space.n_reduced];
        for &e in &lp {
            let (p, edge, _, _) = boundary_edges[e];
            for comp in &space.components {
                if comp.patch == p && comp.edge == edge && comp.comp == MultComp::Tau {
                    for rs in &comp.scatter {
                        for &(red, w) in rs {
                            weight[red] += w;
                        }
                    }
                }
            }
        }
        let Some((drop, _)) = weight
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap().then(b.0.cmp(&a.0)))
        else {
            continue;
        };
        if weight[drop].abs() < 1e-12 {
            continue;
        }
        for comp in &mut space.components {
            for rs in comp.scatter.iter_mut() {
                rs.retain(|&(red, _)| red != drop);
                for entry in rs.iter_mut() {
                    if entry.0 > drop {
                        entry.0 -= 1;
                    }
                }
            }
        }
        space.n_reduced -= 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{benchmark_geometry, BenchCase, PatchLayout};
    use crate::splines::eval_basis;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn square_surface() -> MultiPatchSurface {
        benchmark_geometry(BenchCase::CylinderStrip, PatchLayout::Single).unwrap()
    }

    fn all_edges_bc(surface: &MultiPatchSurface, cond: EdgeCondition) -> BoundarySpec {
        let mut bc = BoundarySpec::new(surface);
        for p in 0..surface.patches.len() {
            for e in ALL_EDGES {
                if !surface.is_interface(p, e) {
                    bc.set(p, e, cond);
                }
            }
        }
        bc
    }

    #[test]
    fn clamped_square_free_counts() {
        let surface = square_surface();
        let bc = all_edges_bc(&surface, EdgeCondition::Clamped);
        let spaces = vec![TensorSpace::uniform(2, 2, 2).unwrap()];
        let dofs = build_dof_map(&surface, spaces, &bc, None, 0).unwrap();
        // 4x4 scalar DOFs; boundary ring eliminated leaves (4-2)^2 = 4.
        for f in [ScalarField::U1, ScalarField::U2, ScalarField::U3, ScalarField::P] {
            assert_eq!(dofs.fields[f as usize].n_free, 4, "{f:?}");
        }
        for f in [ScalarField::Phi1, ScalarField::Phi2] {
            assert_eq!(dofs.fields[f as usize].n_free, 16);
        }
        // Empty multiplier space when everything is clamped.
        let mult = build_multiplier_space(&surface, &bc, 2, &dofs.scalar.spaces).unwrap();
        assert_eq!(mult.n_reduced, 0);
        assert!(mult.components.is_empty());
    }

    #[test]
    fn four_patch_glue_count_matches_point_dedup() {
        let surface = benchmark_geometry(BenchCase::ScordelisLo, PatchLayout::Four).unwrap();
        let bc = all_edges_bc(&surface, EdgeCondition::Free);
        let spaces: Vec<TensorSpace> = (0..4)
            .map(|_| TensorSpace::uniform(2, 3, 3).unwrap())
            .collect();
        let dofs = build_dof_map(&surface, spaces, &bc, None, 0).unwrap();

        // Brute-force oracle: deduplicate physical Greville images.
        let mut uniq: Vec<[i64; 3]> = Vec::new();
        for (p, patch) in surface.patches.iter().enumerate() {
            let s = &dofs.scalar.spaces[p];
            let gu = s.space_u.greville();
            let gv = s.space_v.greville();
            for &v in &gv {
                for &u in &gu {
                    let pt = patch.eval([u, v], 0).unwrap().point();
                    let key = [
                        (pt.x * 1e7).round() as i64,
                        (pt.y * 1e7).round() as i64,
                        (pt.z * 1e7).round() as i64,
                    ];
                    if !uniq.contains(&key) {
                        uniq.push(key);
                    }
                }
            }
        }
        assert_eq!(dofs.scalar.n_glued, uniq.len());
        // 4 patches of 5x5 minus shared edges: 100 - (3 interfaces... ) = dedup value.
        assert_eq!(dofs.fields[ScalarField::U3 as usize].n_free, uniq.len());
    }

    #[test]
    fn strip_clamped_edge_elimination() {
        let surface = square_surface();
        let mut bc = BoundarySpec::new(&surface);
        bc.set(0, PatchEdge::West, EdgeCondition::Clamped);
        bc.set(0, PatchEdge::East, EdgeCondition::Free);
        bc.set(0, PatchEdge::South, EdgeCondition::Free);
        bc.set(0, PatchEdge::North, EdgeCondition::Free);
        let spaces = vec![TensorSpace::uniform(2, 4, 2).unwrap()];
        let dofs = build_dof_map(&surface, spaces, &bc, None, 0).unwrap();
        let n = 6 * 4; // 6x4 net
        assert_eq!(dofs.fields[ScalarField::U1 as usize].n_free, n - 4);
        assert_eq!(dofs.fields[ScalarField::U2 as usize].n_free, n - 4);
        assert_eq!(dofs.fields[ScalarField::P as usize].n_free, n - 4);
        assert_eq!(dofs.fields[ScalarField::Phi1 as usize].n_free, n);
    }

    #[test]
    fn multiplier_dimension_bookkeeping() {
        // Square patch, all edges free, p = 2, 4 elements per edge:
        // each edge carries 5 mu_n + 5 mu_tau coefficients; each corner
        // restricts 4 coefficients to a 2-dimensional subspace.
        let surface = square_surface();
        let bc = all_edges_bc(&surface, EdgeCondition::Free);
        let spaces = vec![TensorSpace::uniform(2, 4, 4).unwrap()];
        let mult = build_multiplier_space(&surface, &bc, 2, &spaces).unwrap();
        assert_eq!(mult.components.len(), 8);
        for c in &mult.components {
            assert_eq!(c.knot.num_basis(), 5);
        }
        // 8 * 5 raw = 40; minus 4 corners x (4 raw -> 2 params) = 32.
        assert_eq!(mult.n_reduced, 32);
    }

    #[test]
    fn roof_multiplier_components() {
        let surface = benchmark_geometry(BenchCase::ScordelisLo, PatchLayout::Single).unwrap();
        let mut bc = BoundarySpec::new(&surface);
        bc.set(0, PatchEdge::South, EdgeCondition::SimplySupported);
        bc.set(0, PatchEdge::North, EdgeCondition::SimplySupported);
        bc.set(0, PatchEdge::West, EdgeCondition::Free);
        bc.set(0, PatchEdge::East, EdgeCondition::Free);
        let spaces = vec![TensorSpace::uniform(2, 4, 4).unwrap()];
        let mult = build_multiplier_space(&surface, &bc, 2, &spaces).unwrap();
        // Diaphragm edges carry mu_n only; free edges carry both.
        let tally: Vec<(PatchEdge, MultComp)> =
            mult.components.iter().map(|c| (c.edge, c.comp)).collect();
        assert!(tally.contains(&(PatchEdge::South, MultComp::Nrm)));
        assert!(!tally.contains(&(PatchEdge::South, MultComp::Tau)));
        assert!(tally.contains(&(PatchEdge::West, MultComp::Tau)));
        assert!(tally.contains(&(PatchEdge::West, MultComp::Nrm)));
        // Corner count: s-f corners have conditions g.tau_s = 0; feasible
        // dim 1 per corner; mu_n(s-edge) couples with mu_tau(f-edge) and
        // mu_n(f-edge) end vanishes.
        // raw: 4 edges, s-edges 1 comp (5), f-edges 2 comps (10) = 30.
        // interior: s: 3 each = 6; f: 2 x 3 = 6 each = 12; corners: 4 x 1 = 4.
        assert_eq!(mult.n_reduced, 6 + 12 + 4);
    }

    #[test]
    fn hemisphere_equator_loop_pruned() {
        let surface = benchmark_geometry(BenchCase::Hemisphere, PatchLayout::Four).unwrap();
        let mut bc = BoundarySpec::new(&surface);
        for p in 0..4 {
            bc.set(p, PatchEdge::South, EdgeCondition::Free);
            bc.set(p, PatchEdge::North, EdgeCondition::Clamped);
        }
        let spaces: Vec<TensorSpace> = (0..4)
            .map(|_| TensorSpace::uniform(2, 4, 4).unwrap())
            .collect();
        let mult = build_multiplier_space(&surface, &bc, 2, &spaces).unwrap();
        // 4 free edges x 2 comps x 5 raw = 40; 4 collinear junctions identify
        // end pairs (4 x 2 params from 4 raw), interiors 8 x 3 = 24, total
        // 24 + 8 = 32, minus the loop-constant mu_tau defect = 31.
        assert_eq!(mult.n_reduced, 31);
    }

    #[test]
    fn glued_field_single_valued_on_interfaces() {
        let surface = benchmark_geometry(BenchCase::PinchedCylinder, PatchLayout::Four).unwrap();
        let bc = all_edges_bc(&surface, EdgeCondition::Free);
        let spaces: Vec<TensorSpace> = (0..4)
            .map(|_| TensorSpace::uniform(3, 5, 5).unwrap())
            .collect();
        let dofs = build_dof_map(&surface, spaces, &bc, None, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let coeffs: Vec<f64> = (0..dofs.scalar.n_glued).map(|_| rng.gen()).collect();
        let eval_field = |patch: usize, xi: [f64; 2]| -> f64 {
            let b = eval_basis(&dofs.scalar.spaces[patch], xi, 0).unwrap();
            b.active
                .iter()
                .zip(&b.values)
                .map(|(&l, &v)| coeffs[dofs.scalar.global_of[patch][l]] * v)
                .sum()
        };
        for g in &surface.interfaces {
            for _ in 0..25 {
                let s = rng.gen::<f64>();
                let sb = if g.reversed { 1.0 - s } else { s };
                let a = eval_field(g.patch_a, g.edge_a.point_at(s));
                let b = eval_field(g.patch_b, g.edge_b.point_at(sb));
                assert!((a - b).abs() < 1e-12, "glued field jump {}", (a - b).abs());
            }
        }
    }

    #[test]
    fn essential_bc_holds_at_boundary_greville_points() {
        let surface = benchmark_geometry(BenchCase::ScordelisLo, PatchLayout::Single).unwrap();
        let mut bc = BoundarySpec::new(&surface);
        bc.set(0, PatchEdge::South, EdgeCondition::SimplySupported);
        bc.set(0, PatchEdge::North, EdgeCondition::SimplySupported);
        bc.set(0, PatchEdge::West, EdgeCondition::Free);
        bc.set(0, PatchEdge::East, EdgeCondition::Free);
        let spaces = vec![TensorSpace::uniform(2, 5, 5).unwrap()];
        let dofs = build_dof_map(&surface, spaces, &bc, None, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        // Random free coefficients for u1; eliminated stay zero.
        let f = &dofs.fields[ScalarField::U1 as usize];
        let coeffs: Vec<f64> = (0..dofs.scalar.n_glued)
            .map(|g| if f.free_of_glued[g].is_some() { rng.gen() } else { 0.0 })
            .collect();
        let space = &dofs.scalar.spaces[0];
        let gu = space.space_u.greville();
        for &u in &gu {
            for v in [0.0, 1.0] {
                let b = eval_basis(space, [u, v], 0).unwrap();
                let val: f64 = b
                    .active
                    .iter()
                    .zip(&b.values)
                    .map(|(&l, &x)| coeffs[dofs.scalar.global_of[0][l]] * x)
                    .sum();
                assert!(val.abs() < 1e-13, "u1 not zero on diaphragm: {val}");
            }
        }
    }

    #[test]
    fn hybrid_stress_space_shapes() {
        let [n11, n22, n12] = hybrid_stress_spaces(2, [4, 3]).unwrap();
        assert_eq!(n11.space_u.degree(), 1);
        assert_eq!(n11.space_v.degree(), 2);
        assert_eq!(n11.dim_u(), 5); // degree 1, C0: ne + 1
        assert_eq!(n22.space_u.degree(), 2);
        assert_eq!(n22.space_v.degree(), 1);
        assert_eq!(n12.space_u.degree(), 1);
        assert_eq!(n12.space_v.degree(), 1);
        // p = 1: degree-0 discontinuous factors.
        let [n11, _, n12] = hybrid_stress_spaces(1, [4, 3]).unwrap();
        assert_eq!(n11.space_u.degree(), 0);
        assert_eq!(n11.dim_u(), 4);
        assert_eq!(n12.dof_count(), 12);
    }

    #[test]
    fn reduced_multiplier_indices_are_dense() {
        let surface = benchmark_geometry(BenchCase::Hemisphere, PatchLayout::Four).unwrap();
        let mut bc = BoundarySpec::new(&surface);
        for p in 0..4 {
            bc.set(p, PatchEdge::South, EdgeCondition::Free);
            bc.set(p, PatchEdge::North, EdgeCondition::Clamped);
        }
        let spaces: Vec<TensorSpace> = (0..4)
            .map(|_| TensorSpace::uniform(3, 4, 4).unwrap())
            .collect();
        let mult = build_multiplier_space(&surface, &bc, 3, &spaces).unwrap();
        let mut seen = HashSet::new();
        for c in &mult.components {
            for rs in &c.scatter {
                for &(r, _) in rs {
                    assert!(r < mult.n_reduced);
                    seen.insert(r);
                }
            }
        }
        assert_eq!(seen.len(), mult.n_reduced);
    }
}
