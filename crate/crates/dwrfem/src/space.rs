//! Continuous Lagrange finite element spaces of degree 1..=4 on mesh views.
//!
//! Reference nodes are the equispaced points with barycentric indices
//! (i,j,k), i+j+k = p. Shared vertex and edge nodes receive one global dof;
//! edge nodes are keyed by the sorted endpoint ids so adjacent cells agree on
//! both identity and position. Dof ids are assigned by first occurrence in
//! ascending cell order, which makes every numbering deterministic.

use std::collections::HashMap;
use std::sync::Arc;

use crate::mesh::{MeshForest, MeshView, VertexId};
use crate::{Error, Result};

/// Evaluated reference basis at one point: values, gradients and second
/// derivatives with respect to the reference coordinates.
#[derive(Debug, Clone)]
pub struct BasisEval {
    pub phi: Vec<f64>,
    pub grad: Vec<[f64; 2]>,
    /// (d_xx, d_xy, d_yy) per basis function.
    pub hess: Vec<[f64; 3]>,
}

/// Reference element of one degree: node layout and basis evaluation.
#[derive(Debug, Clone)]
pub struct ReferenceElement {
    pub degree: usize,
    /// Barycentric integer triples per local node.
    pub nodes: Vec<[usize; 3]>,
    /// Reference coordinates (l1, l2) per local node.
    pub node_coords: Vec<[f64; 2]>,
}

impl ReferenceElement {
    pub fn new(degree: usize) -> Result<Self> {
        if !(1..=4).contains(&degree) {
            return Err(Error::BadDegree(degree));
        }
        let p = degree;
        let mut nodes = Vec::new();
        // Vertices.
        nodes.push([p, 0, 0]);
        nodes.push([0, p, 0]);
        nodes.push([0, 0, p]);
        // Edge nodes: (v0,v1), (v1,v2), (v2,v0), each walked from the first
        // local vertex of the edge.
        for t in 1..p {
            nodes.push([p - t, t, 0]);
        }
        for t in 1..p {
            nodes.push([0, p - t, t]);
        }
        for t in 1..p {
            nodes.push([t, 0, p - t]);
        }
        // Interior nodes, deterministic lexicographic order.
        for i in 1..p {
            for j in 1..p {
                if i + j < p {
                    nodes.push([p - i - j, i, j]);
                }
            }
        }
        debug_assert_eq!(nodes.len(), (p + 1) * (p + 2) / 2);
        let node_coords = nodes
            .iter()
            .map(|&[_, j, k]| [j as f64 / p as f64, k as f64 / p as f64])
            .collect();
        Ok(Self {
            degree,
            nodes,
            node_coords,
        })
    }

    pub fn n_local(&self) -> usize {
        self.nodes.len()
    }

    /// Evaluates all basis functions at reference point (l1, l2).
    pub fn eval(&self, l: [f64; 2]) -> BasisEval {
        let p = self.degree as f64;
        let lam = [1.0 - l[0] - l[1], l[0], l[1]];
        // Value and first two derivatives of the one-dimensional factors
        // P_i(p * lambda_c) for every needed index i and coordinate c.
        let mut fac = [[(0.0, 0.0, 0.0); 3]; 5];
        for (i, row) in fac.iter_mut().enumerate().take(self.degree + 1) {
            for c in 0..3 {
                *row = {
                    let mut r = *row;
                    r[c] = silvester_factor(i, p * lam[c]);
                    r
                };
            }
        }
        let n = self.n_local();
        let mut phi = Vec::with_capacity(n);
        let mut grad = Vec::with_capacity(n);
        let mut hess = Vec::with_capacity(n);
        // dlam/dl1 = (-1, 1, 0), dlam/dl2 = (-1, 0, 1).
        const DL: [[f64; 3]; 2] = [[-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]];
        for &[i, j, k] in &self.nodes {
            let (a, da, dda) = fac[i][0];
            let (b, db, ddb) = fac[j][1];
            let (c, dc, ddc) = fac[k][2];
            phi.push(a * b * c);
            // d phi / d lam_m, times p from the inner argument.
            let dphi_dlam = [p * da * b * c, p * a * db * c, p * a * b * dc];
            let mut g = [0.0; 2];
            for d in 0..2 {
                g[d] = (0..3).map(|m| dphi_dlam[m] * DL[d][m]).sum();
            }
            grad.push(g);
            // Second derivatives: d2 phi / d lam_m d lam_n, times p^2.
            let p2 = p * p;
            let d2 = [
                [p2 * dda * b * c, p2 * da * db * c, p2 * da * b * dc],
                [p2 * da * db * c, p2 * a * ddb * c, p2 * a * db * dc],
                [p2 * da * b * dc, p2 * a * db * dc, p2 * a * b * ddc],
            ];
            let mut h = [0.0; 3];
            let pairs = [(0usize, 0usize), (0, 1), (1, 1)];
            for (t, &(r, s)) in pairs.iter().enumerate() {
                let mut sum = 0.0;
                for m in 0..3 {
                    for nn in 0..3 {
                        sum += d2[m][nn] * DL[r][m] * DL[s][nn];
                    }
                }
                h[t] = sum;
            }
            hess.push(h);
        }
        BasisEval { phi, grad, hess }
    }

    /// Tabulates the basis at a fixed set of reference points.
    pub fn tabulate(&self, points: &[[f64; 2]]) -> Vec<BasisEval> {
        points.iter().map(|&p| self.eval(p)).collect()
    }
}

/// (value, d/dt, d2/dt2) of P_i(t) = prod_{r=0}^{i-1} (t - r) / (i - r).
fn silvester_factor(i: usize, t: f64) -> (f64, f64, f64) {
    let mut v = 1.0;
    let mut d = 0.0;
    let mut dd = 0.0;
    for r in 0..i {
        let denom = (i - r) as f64;
        let f = (t - r as f64) / denom;
        let g = 1.0 / denom;
        dd = dd * f + 2.0 * d * g;
        d = d * f + v * g;
        v *= f;
    }
    (v, d, dd)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum DofKey {
    Vertex(VertexId),
    /// Sorted endpoints and step 1..p-1 counted from the lower id.
    Edge(VertexId, VertexId, usize),
    Interior(usize, usize),
}

#[derive(Debug, Clone)]
pub struct FeSpace {
    pub degree: usize,
    pub reference: ReferenceElement,
    pub view: Arc<MeshView>,
    pub n_dofs: usize,
    pub cell_dofs: Vec<Vec<usize>>,
    /// Ascending global dof ids on the Dirichlet boundary.
    pub boundary_dofs: Vec<usize>,
    pub dof_coords: Vec<[f64; 2]>,
    /// First-occurrence owner of each dof: (view cell, reference coords).
    pub dof_owner: Vec<(usize, [f64; 2])>,
}

pub fn build_space(view: Arc<MeshView>, degree: usize) -> Result<Arc<FeSpace>> {
    let reference = ReferenceElement::new(degree)?;
    let p = degree;
    let mut key_to_id: HashMap<DofKey, usize> = HashMap::new();
    let mut cell_dofs = Vec::with_capacity(view.n_cells());
    let mut dof_coords = Vec::new();
    let mut dof_owner = Vec::new();
    let mut n_interior_seen;
    for k in 0..view.n_cells() {
        let tri = view.cell_vertices[k];
        let mut local = Vec::with_capacity(reference.n_local());
        n_interior_seen = 0;
        for (ln, &[i, j, kk]) in reference.nodes.iter().enumerate() {
            let key = if i == p || j == p || kk == p {
                let lv = if i == p {
                    0
                } else if j == p {
                    1
                } else {
                    2
                };
                DofKey::Vertex(tri[lv])
            } else if i == 0 || j == 0 || kk == 0 {
                // Edge node. Local edges: k=0 -> (v1,v2); i=0? Work out which
                // barycentric entry is zero: entry m == 0 means the node lies
                // on the edge opposite local vertex m.
                let (a, b, t) = if kk == 0 {
                    (tri[0], tri[1], j) // on edge (v0, v1), step counted from v0
                } else if i == 0 {
                    (tri[1], tri[2], kk) // on edge (v1, v2), step from v1
                } else {
                    (tri[2], tri[0], i) // on edge (v2, v0), step from v2
                };
                if a < b {
                    DofKey::Edge(a, b, t)
                } else {
                    DofKey::Edge(b, a, p - t)
                }
            } else {
                n_interior_seen += 1;
                DofKey::Interior(k, n_interior_seen - 1)
            };
            let next = key_to_id.len();
            let id = *key_to_id.entry(key).or_insert(next);
            if id == next {
                dof_coords.push(view.map_ref(k, reference.node_coords[ln]));
                dof_owner.push((k, reference.node_coords[ln]));
            }
            local.push(id);
        }
        cell_dofs.push(local);
    }
    let n_dofs = key_to_id.len();

    // Boundary dofs: all nodes on edges with a single adjacent cell.
    let mut on_boundary = vec![false; n_dofs];
    for e in view.edges.iter().filter(|e| e.cells.len() == 1) {
        for t in 1..p {
            let key = DofKey::Edge(e.v[0], e.v[1], t);
            if let Some(&id) = key_to_id.get(&key) {
                on_boundary[id] = true;
            }
        }
        for &v in &e.v {
            if let Some(&id) = key_to_id.get(&DofKey::Vertex(v)) {
                on_boundary[id] = true;
            }
        }
    }
    let boundary_dofs = (0..n_dofs).filter(|&i| on_boundary[i]).collect();

    Ok(Arc::new(FeSpace {
        degree,
        reference,
        view,
        n_dofs,
        cell_dofs,
        boundary_dofs,
        dof_coords,
        dof_owner,
    }))
}

impl FeSpace {
    pub fn zero_function(self: &Arc<Self>) -> FeFunction {
        FeFunction {
            space: Arc::clone(self),
            coeffs: vec![0.0; self.n_dofs],
        }
    }

    pub fn function_from(self: &Arc<Self>, coeffs: Vec<f64>) -> FeFunction {
        assert_eq!(coeffs.len(), self.n_dofs);
        FeFunction {
            space: Arc::clone(self),
            coeffs,
        }
    }

    /// Nodal interpolant of a closure.
    pub fn interpolate(self: &Arc<Self>, f: impl Fn([f64; 2]) -> f64) -> FeFunction {
        let coeffs = self.dof_coords.iter().map(|&x| f(x)).collect();
        self.function_from(coeffs)
    }

    /// Function that is `g` on the Dirichlet boundary and zero inside.
    pub fn interpolate_boundary(self: &Arc<Self>, g: impl Fn([f64; 2]) -> f64) -> FeFunction {
        let mut u = self.zero_function();
        for &d in &self.boundary_dofs {
            u.coeffs[d] = g(self.dof_coords[d]);
        }
        u
    }

    /// Ids of dofs not on the Dirichlet boundary.
    pub fn free_dofs(&self) -> Vec<usize> {
        let mut bnd = vec![false; self.n_dofs];
        for &d in &self.boundary_dofs {
            bnd[d] = true;
        }
        (0..self.n_dofs).filter(|&i| !bnd[i]).collect()
    }

    /// Vertex dof ids (degree-independent corners), ascending.
    pub fn vertex_dofs(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .cell_dofs
            .iter()
            .flat_map(|d| d[..3].iter().copied())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

#[derive(Debug, Clone)]
pub struct FeFunction {
    pub space: Arc<FeSpace>,
    pub coeffs: Vec<f64>,
}

impl FeFunction {
    /// Value and physical gradient at reference point `l` of view cell `k`.
    pub fn value_grad(&self, k: usize, l: [f64; 2]) -> (f64, [f64; 2]) {
        let basis = self.space.reference.eval(l);
        self.value_grad_tab(k, &basis)
    }

    /// Same as `value_grad` with a pre-evaluated reference basis.
    pub fn value_grad_tab(&self, k: usize, basis: &BasisEval) -> (f64, [f64; 2]) {
        let dofs = &self.space.cell_dofs[k];
        let geo = &self.space.view.geo[k];
        let mut v = 0.0;
        let mut gref = [0.0; 2];
        for (i, &d) in dofs.iter().enumerate() {
            let c = self.coeffs[d];
            v += c * basis.phi[i];
            gref[0] += c * basis.grad[i][0];
            gref[1] += c * basis.grad[i][1];
        }
        (v, geo.push_gradient(gref))
    }

    /// Physical Laplacian at reference point `l` of view cell `k`
    /// (zero for degree 1).
    pub fn laplacian(&self, k: usize, l: [f64; 2]) -> f64 {
        let basis = self.space.reference.eval(l);
        self.laplacian_tab(k, &basis)
    }

    pub fn laplacian_tab(&self, k: usize, basis: &BasisEval) -> f64 {
        if self.space.degree == 1 {
            return 0.0;
        }
        let dofs = &self.space.cell_dofs[k];
        let geo = &self.space.view.geo[k];
        let mut h = [0.0; 3];
        for (i, &d) in dofs.iter().enumerate() {
            let c = self.coeffs[d];
            h[0] += c * basis.hess[i][0];
            h[1] += c * basis.hess[i][1];
            h[2] += c * basis.hess[i][2];
        }
        let hp = geo.push_hessian(h);
        hp[0] + hp[2]
    }

    /// Value at a physical point located on this function's mesh.
    pub fn value_at(&self, forest: &MeshForest, x: [f64; 2]) -> Result<f64> {
        let (cell, bary) = forest.locate(&self.space.view.cell_ids, x)?;
        let k = self.space.view.local_index(cell).expect("located cell is active");
        Ok(self.value_grad(k, [bary[1], bary[2]]).0)
    }

    /// Nodal interpolation onto a (lower degree) space on the same mesh.
    pub fn interpolate_down(&self, target: &Arc<FeSpace>) -> FeFunction {
        assert_eq!(
            self.space.view.cell_ids, target.view.cell_ids,
            "interpolate_down requires the same mesh"
        );
        let mut coeffs = vec![0.0; target.n_dofs];
        for d in 0..target.n_dofs {
            let (k, l) = target.dof_owner[d];
            coeffs[d] = self.value_grad(k, l).0;
        }
        target.function_from(coeffs)
    }

    /// Transfers this function to a space on another mesh of the same
    /// forest: exact on refinements, nodal interpolation on coarsenings.
    pub fn transfer(&self, forest: &MeshForest, target: &Arc<FeSpace>) -> FeFunction {
        let source_cells = &self.space.view.cell_ids;
        let mut coeffs = vec![0.0; target.n_dofs];
        for d in 0..target.n_dofs {
            let (tk, tl) = target.dof_owner[d];
            let x = target.view.map_ref(tk, tl);
            let start = target.view.cell_ids[tk];
            let (sc, bary) = forest
                .locate_from(source_cells, start, x)
                .expect("meshes of one forest cover the same domain");
            let sk = self.space.view.local_index(sc).expect("active source cell");
            coeffs[d] = self.value_grad(sk, [bary[1], bary[2]]).0;
        }
        target.function_from(coeffs)
    }

    /// Pointwise linear combination; spaces must match.
    pub fn axpy(&mut self, a: f64, other: &FeFunction) {
        assert_eq!(self.coeffs.len(), other.coeffs.len());
        for (c, o) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *c += a * o;
        }
    }

    /// max - min over vertex values.
    pub fn vertex_variation(&self) -> f64 {
        let vd = self.space.vertex_dofs();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for d in vd {
            lo = lo.min(self.coeffs[d]);
            hi = hi.max(self.coeffs[d]);
        }
        hi - lo
    }
}

/// Locates which source cell contains each target dof and evaluates; shared
/// helper for tests wanting plain closure interpolation errors.
pub fn l2_error(
    space: &Arc<FeSpace>,
    u: &FeFunction,
    exact: impl Fn([f64; 2]) -> f64,
    quad_degree: usize,
) -> f64 {
    let rule = crate::quadrature::triangle_rule(quad_degree).expect("valid degree");
    let tab = space.reference.tabulate(&rule.points);
    let mut sum = 0.0;
    for k in 0..space.view.n_cells() {
        let geo = &space.view.geo[k];
        for (q, basis) in tab.iter().enumerate() {
            let x = space.view.map_ref(k, rule.points[q]);
            let (v, _) = u.value_grad_tab(k, basis);
            let d = v - exact(x);
            sum += 2.0 * geo.area * rule.weights[q] * d * d;
        }
    }
    sum.sqrt()
}
