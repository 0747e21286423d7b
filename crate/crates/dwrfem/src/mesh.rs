//! Triangular meshes organized as a shared newest-vertex-bisection forest.
//!
//! Every mesh in a computation (one per time interval, plus their common
//! refinement) is a cut through the same binary forest, so any two meshes are
//! nested cell by cell and finite element data can be moved between them
//! without interpolation error. Cells store their vertices with the newest
//! vertex first; the refinement edge is always the edge opposite it.

use std::collections::HashMap;
use std::sync::Arc;

use crate::{Error, Result};

pub type CellId = usize;
pub type VertexId = usize;

/// Barycentric tolerance used by point location and containment checks.
pub const LOCATE_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Cell {
    /// Vertex ids, counterclockwise, newest vertex (peak) first.
    /// The refinement edge is (v[1], v[2]).
    pub v: [VertexId; 3],
    pub parent: Option<CellId>,
    pub children: Option<[CellId; 2]>,
    pub level: u32,
}

impl Cell {
    /// Refinement edge as a sorted vertex pair.
    pub fn refinement_edge(&self) -> (VertexId, VertexId) {
        sorted_pair(self.v[1], self.v[2])
    }

    /// The three edges as sorted vertex pairs, in local order
    /// (v0,v1), (v1,v2), (v2,v0).
    pub fn edges(&self) -> [(VertexId, VertexId); 3] {
        [
            sorted_pair(self.v[0], self.v[1]),
            sorted_pair(self.v[1], self.v[2]),
            sorted_pair(self.v[2], self.v[0]),
        ]
    }
}

fn sorted_pair(a: VertexId, b: VertexId) -> (VertexId, VertexId) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Shared refinement hierarchy plus the active cell set of every time
/// interval. Steady computations use a single interval.
#[derive(Debug, Clone)]
pub struct MeshForest {
    vertices: Vec<[f64; 2]>,
    cells: Vec<Cell>,
    n_roots: usize,
    /// Midpoint vertex of every edge that has been split anywhere, keyed by
    /// the sorted endpoint pair. Shared across intervals so coincident
    /// refinements reuse vertices.
    edge_midpoint: HashMap<(VertexId, VertexId), VertexId>,
    /// Active (leaf-in-use) cells per time interval, ascending ids.
    pub per_interval_active: Vec<Vec<CellId>>,
}

impl MeshForest {
    /// Builds a forest from explicit root cells. Triples must be
    /// counterclockwise; the refinement edge of each root is its longest edge
    /// (first of the longest on ties, scanning edges opposite v0, v1, v2).
    pub fn from_roots(vertices: Vec<[f64; 2]>, triangles: &[[VertexId; 3]]) -> Result<Self> {
        let mut cells = Vec::with_capacity(triangles.len());
        for tri in triangles {
            for &v in tri {
                if v >= vertices.len() {
                    return Err(Error::Mesh(format!("vertex id {v} out of range")));
                }
            }
            let p = [vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]];
            let area2 = cross(sub(p[1], p[0]), sub(p[2], p[0]));
            if area2 <= 0.0 {
                return Err(Error::Mesh(format!(
                    "root triangle {tri:?} is degenerate or clockwise"
                )));
            }
            // Edge opposite local vertex k has endpoints (k+1, k+2).
            let mut peak = 0;
            let mut best = -1.0;
            for k in 0..3 {
                let len = norm(sub(p[(k + 2) % 3], p[(k + 1) % 3]));
                if len > best + 1e-14 {
                    best = len;
                    peak = k;
                }
            }
            let v = [tri[peak], tri[(peak + 1) % 3], tri[(peak + 2) % 3]];
            cells.push(Cell {
                v,
                parent: None,
                children: None,
                level: 0,
            });
        }
        let n_roots = cells.len();
        let active = (0..n_roots).collect();
        Ok(Self {
            vertices,
            cells,
            n_roots,
            edge_midpoint: HashMap::new(),
            per_interval_active: vec![active],
        })
    }

    /// Criss-cross mesh of the unit square: n x n quads, each split into four
    /// triangles around its center vertex.
    pub fn unit_square_crisscross(n: usize) -> Self {
        assert!(n >= 1);
        let h = 1.0 / n as f64;
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1) + n * n);
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([i as f64 * h, j as f64 * h]);
            }
        }
        let grid = |i: usize, j: usize| j * (n + 1) + i;
        let center_base = (n + 1) * (n + 1);
        for j in 0..n {
            for i in 0..n {
                vertices.push([(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]);
            }
        }
        let mut triangles = Vec::with_capacity(4 * n * n);
        for j in 0..n {
            for i in 0..n {
                let c = center_base + j * n + i;
                let ll = grid(i, j);
                let lr = grid(i + 1, j);
                let ur = grid(i + 1, j + 1);
                let ul = grid(i, j + 1);
                triangles.push([c, ll, lr]);
                triangles.push([c, lr, ur]);
                triangles.push([c, ur, ul]);
                triangles.push([c, ul, ll]);
            }
        }
        Self::from_roots(vertices, &triangles).expect("criss-cross roots are valid")
    }

    /// Unit square split into two triangles along the diagonal (0,0)-(1,1).
    pub fn unit_square_two_triangles() -> Self {
        let vertices = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        Self::from_roots(vertices, &[[0, 1, 2], [0, 2, 3]]).expect("valid roots")
    }

    /// Single reference-like right triangle (0,0), (1,0), (0,1).
    pub fn single_triangle() -> Self {
        let vertices = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        Self::from_roots(vertices, &[[0, 1, 2]]).expect("valid root")
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_roots(&self) -> usize {
        self.n_roots
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn cell(&self, id: CellId) -> &Cell {
        &self.cells[id]
    }

    pub fn vertex(&self, id: VertexId) -> [f64; 2] {
        self.vertices[id]
    }

    pub fn cell_points(&self, id: CellId) -> [[f64; 2]; 3] {
        let v = self.cells[id].v;
        [self.vertices[v[0]], self.vertices[v[1]], self.vertices[v[2]]]
    }

    pub fn n_intervals(&self) -> usize {
        self.per_interval_active.len()
    }

    /// Replicates the current single active set across `m` intervals.
    /// Intended for run setup; requires the forest to hold one interval.
    pub fn replicate_interval(&mut self, m: usize) {
        assert_eq!(self.per_interval_active.len(), 1);
        assert!(m >= 1);
        let base = self.per_interval_active[0].clone();
        self.per_interval_active = vec![base; m];
    }

    /// Duplicates interval `m`'s mesh in place (used when a time interval is
    /// halved: both halves start from the parent interval's mesh).
    pub fn split_interval(&mut self, m: usize) {
        let mesh = self.per_interval_active[m].clone();
        self.per_interval_active.insert(m, mesh);
    }

    fn alloc_midpoint(&mut self, e: (VertexId, VertexId)) -> VertexId {
        if let Some(&w) = self.edge_midpoint.get(&e) {
            return w;
        }
        let a = self.vertices[e.0];
        let b = self.vertices[e.1];
        let w = self.vertices.len();
        self.vertices.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
        self.edge_midpoint.insert(e, w);
        w
    }

    /// Splits `id` at its refinement edge, creating children if this cell has
    /// never been split in any interval. Returns the child ids.
    fn bisect_cell(&mut self, id: CellId) -> [CellId; 2] {
        if let Some(ch) = self.cells[id].children {
            return ch;
        }
        let cell = self.cells[id].clone();
        let w = self.alloc_midpoint(cell.refinement_edge());
        let [p, a, b] = cell.v;
        let c0 = self.cells.len();
        let c1 = c0 + 1;
        self.cells.push(Cell {
            v: [w, p, a],
            parent: Some(id),
            children: None,
            level: cell.level + 1,
        });
        self.cells.push(Cell {
            v: [w, b, p],
            parent: Some(id),
            children: None,
            level: cell.level + 1,
        });
        self.cells[id].children = Some([c0, c1]);
        [c0, c1]
    }

    /// Newest-vertex bisection of `marked` cells on interval `interval`,
    /// followed by recursive conformity closure. Returns the new active set.
    /// Marking a cell that is not active on the interval is an error; an
    /// empty marked set leaves the mesh unchanged.
    pub fn refine(&mut self, interval: usize, marked: &[CellId]) -> Result<Vec<CellId>> {
        let active_list = self.per_interval_active[interval].clone();
        let mut active: HashMap<CellId, ()> = active_list.iter().map(|&c| (c, ())).collect();
        for &m in marked {
            if !active.contains_key(&m) {
                return Err(Error::InactiveCell(m));
            }
        }
        // Edge -> active cells sharing it (1 on the boundary, 2 inside).
        let mut edge_cells: HashMap<(VertexId, VertexId), Vec<CellId>> = HashMap::new();
        for &c in &active_list {
            for e in self.cells[c].edges() {
                edge_cells.entry(e).or_default().push(c);
            }
        }

        let neighbor_across = |edge_cells: &HashMap<(VertexId, VertexId), Vec<CellId>>,
                               c: CellId,
                               e: (VertexId, VertexId)|
         -> Option<CellId> {
            edge_cells
                .get(&e)
                .and_then(|v| v.iter().copied().find(|&x| x != c))
        };

        for &m in marked {
            if !active.contains_key(&m) {
                continue; // already split by an earlier closure chain
            }
            let mut stack = vec![m];
            while let Some(&top) = stack.last() {
                if !active.contains_key(&top) {
                    stack.pop();
                    continue;
                }
                if stack.len() > self.cells.len() + 4 {
                    return Err(Error::Mesh(
                        "conformity closure did not terminate".to_string(),
                    ));
                }
                let e = self.cells[top].refinement_edge();
                let nb = neighbor_across(&edge_cells, top, e);
                match nb {
                    Some(n) if self.cells[n].refinement_edge() != e => {
                        stack.push(n);
                    }
                    _ => {
                        // Compatible pair (or boundary edge): split together.
                        let mut to_split = vec![top];
                        if let Some(n) = nb {
                            to_split.push(n);
                        }
                        for c in to_split {
                            let ch = self.bisect_cell(c);
                            active.remove(&c);
                            for edge in self.cells[c].edges() {
                                if let Some(list) = edge_cells.get_mut(&edge) {
                                    list.retain(|&x| x != c);
                                }
                            }
                            for &child in &ch {
                                active.insert(child, ());
                                for edge in self.cells[child].edges() {
                                    edge_cells.entry(edge).or_default().push(child);
                                }
                            }
                        }
                        stack.pop();
                    }
                }
            }
        }

        let mut new_active: Vec<CellId> = active.into_keys().collect();
        new_active.sort_unstable();
        self.per_interval_active[interval] = new_active.clone();
        Ok(new_active)
    }

    /// Refines every active cell of the interval at least once.
    pub fn refine_uniform(&mut self, interval: usize) -> Vec<CellId> {
        let marked = self.per_interval_active[interval].clone();
        self.refine(interval, &marked).expect("marked cells active")
    }

    /// Active set of the finest common refinement of all interval meshes:
    /// at every point the deepest cell used by any interval.
    pub fn union_mesh(&self) -> Vec<CellId> {
        let mut active_any = vec![false; self.cells.len()];
        for interval in &self.per_interval_active {
            for &c in interval {
                active_any[c] = true;
            }
        }
        // strict_desc[c]: some strict descendant of c is active somewhere.
        let mut strict_desc = vec![false; self.cells.len()];
        // Children have larger ids than parents, so one reverse sweep works.
        for id in (0..self.cells.len()).rev() {
            if let Some([a, b]) = self.cells[id].children {
                strict_desc[id] =
                    strict_desc[a] || strict_desc[b] || active_any[a] || active_any[b];
            }
        }
        let mut out = Vec::new();
        let mut stack: Vec<CellId> = (0..self.n_roots).rev().collect();
        while let Some(c) = stack.pop() {
            if strict_desc[c] {
                let [a, b] = self.cells[c].children.expect("strict descendant implies children");
                stack.push(b);
                stack.push(a);
            } else {
                out.push(c);
            }
        }
        out.sort_unstable();
        out
    }

    /// Barycentric coordinates of `x` in cell `id`; `None` if outside beyond
    /// the tolerance. Coordinates are clamped to [0,1] and renormalized.
    pub fn barycentric_in(&self, id: CellId, x: [f64; 2]) -> Option<[f64; 3]> {
        let p = self.cell_points(id);
        barycentric(&p, x)
    }

    /// Locates `x` among the given active cells (an ascending cut of the
    /// forest). On shared edges/vertices the lowest containing cell id wins.
    pub fn locate(&self, active: &[CellId], x: [f64; 2]) -> Result<(CellId, [f64; 3])> {
        let mut hits: Vec<(CellId, [f64; 3])> = Vec::new();
        let mut stack: Vec<CellId> = (0..self.n_roots).collect();
        while let Some(c) = stack.pop() {
            let Some(bary) = self.barycentric_in(c, x) else {
                continue;
            };
            if active.binary_search(&c).is_ok() {
                hits.push((c, bary));
                continue;
            }
            if let Some([a, b]) = self.cells[c].children {
                stack.push(a);
                stack.push(b);
            }
        }
        hits.sort_by_key(|&(c, _)| c);
        hits.into_iter()
            .next()
            .ok_or(Error::PointOutsideMesh(x[0], x[1]))
    }

    /// Walks from `start` (a forest cell containing `x`) to the cell of
    /// `active` containing `x`, moving up or down as needed.
    pub fn locate_from(
        &self,
        active: &[CellId],
        start: CellId,
        x: [f64; 2],
    ) -> Result<(CellId, [f64; 3])> {
        // Ascend to the first ancestor-or-self that is active or covers x.
        let mut c = start;
        loop {
            if active.binary_search(&c).is_ok() {
                let bary = self
                    .barycentric_in(c, x)
                    .ok_or(Error::PointOutsideMesh(x[0], x[1]))?;
                return Ok((c, bary));
            }
            match self.cells[c].parent {
                Some(p) => c = p,
                None => break,
            }
        }
        // start's root does not carry an active ancestor: descend instead.
        let mut hits: Vec<(CellId, [f64; 3])> = Vec::new();
        let mut stack = vec![c];
        while let Some(t) = stack.pop() {
            let Some(bary) = self.barycentric_in(t, x) else {
                continue;
            };
            if active.binary_search(&t).is_ok() {
                hits.push((t, bary));
                continue;
            }
            if let Some([a, b]) = self.cells[t].children {
                stack.push(a);
                stack.push(b);
            }
        }
        hits.sort_by_key(|&(c, _)| c);
        hits.into_iter()
            .next()
            .ok_or(Error::PointOutsideMesh(x[0], x[1]))
    }

    /// Ancestor of `id` (possibly itself) active in `active`, if any.
    pub fn active_ancestor(&self, active: &[CellId], id: CellId) -> Option<CellId> {
        let mut c = id;
        loop {
            if active.binary_search(&c).is_ok() {
                return Some(c);
            }
            c = self.cells[c].parent?;
        }
    }

    /// Immutable snapshot of all vertex coordinates.
    pub fn vertex_snapshot(&self) -> Arc<Vec<[f64; 2]>> {
        Arc::new(self.vertices.clone())
    }

    /// Builds the geometric view of one interval's active mesh.
    pub fn view(&self, interval: usize) -> MeshView {
        MeshView::build(self, self.per_interval_active[interval].clone())
    }

    /// Builds the geometric view of an arbitrary active set.
    pub fn view_of(&self, active: Vec<CellId>) -> MeshView {
        MeshView::build(self, active)
    }
}

/// Geometry of one active mesh: cells, affine maps, edges with neighbor and
/// orientation data. Cell indices into this view are ascending forest ids.
#[derive(Debug, Clone)]
pub struct MeshView {
    pub vertices: Arc<Vec<[f64; 2]>>,
    /// Active forest cell ids, ascending.
    pub cell_ids: Vec<CellId>,
    /// Vertex triples per view cell (forest orientation: peak first, CCW).
    pub cell_vertices: Vec<[VertexId; 3]>,
    pub geo: Vec<CellGeometry>,
    pub edges: Vec<EdgeInfo>,
    /// Sorted ids of vertices used by this view.
    pub vertex_ids: Vec<VertexId>,
}

/// Per-cell geometry of the affine reference map
/// x(l) = p0 + J [l1, l2]^T with reference triangle (0,0),(1,0),(0,1).
#[derive(Debug, Clone)]
pub struct CellGeometry {
    pub area: f64,
    /// Longest edge length.
    pub h: f64,
    pub origin: [f64; 2],
    pub jac: [[f64; 2]; 2],
    pub inv_jac: [[f64; 2]; 2],
}

#[derive(Debug, Clone)]
pub struct EdgeInfo {
    /// Sorted endpoint vertex ids.
    pub v: [VertexId; 2],
    /// Adjacent view-cell indices, ascending; boundary edges have one.
    pub cells: Vec<usize>,
    pub length: f64,
    /// Unit normal. Interior: points from the higher adjacent forest cell id
    /// into the lower. Boundary: outward.
    pub normal: [f64; 2],
}

impl MeshView {
    pub fn build(forest: &MeshForest, active: Vec<CellId>) -> Self {
        let vertices = forest.vertex_snapshot();
        let mut cell_vertices = Vec::with_capacity(active.len());
        let mut geo = Vec::with_capacity(active.len());
        let mut edge_map: HashMap<(VertexId, VertexId), Vec<usize>> = HashMap::new();
        for (k, &c) in active.iter().enumerate() {
            let cell = forest.cell(c);
            cell_vertices.push(cell.v);
            let p = forest.cell_points(c);
            geo.push(CellGeometry::from_points(&p));
            for e in cell.edges() {
                edge_map.entry(e).or_default().push(k);
            }
        }
        let mut edge_keys: Vec<(VertexId, VertexId)> = edge_map.keys().copied().collect();
        edge_keys.sort_unstable();
        let mut edges = Vec::with_capacity(edge_keys.len());
        for key in edge_keys {
            let mut cells = edge_map.remove(&key).unwrap();
            cells.sort_unstable();
            debug_assert!(cells.len() <= 2, "non-conforming edge {key:?}");
            let a = vertices[key.0];
            let b = vertices[key.1];
            let d = sub(b, a);
            let length = norm(d);
            let mut normal = [d[1] / length, -d[0] / length];
            let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
            // Orient: interior edges from the higher forest id cell into the
            // lower; boundary edges outward.
            let centroid = |k: usize| -> [f64; 2] {
                let t = cell_vertices[k];
                let p = [vertices[t[0]], vertices[t[1]], vertices[t[2]]];
                [
                    (p[0][0] + p[1][0] + p[2][0]) / 3.0,
                    (p[0][1] + p[1][1] + p[2][1]) / 3.0,
                ]
            };
            let toward = if cells.len() == 2 {
                // cells is ascending in view index == ascending forest id;
                // normal points toward the first (lower id) cell.
                sub(centroid(cells[0]), mid)
            } else {
                // Outward: away from the only cell.
                sub(mid, centroid(cells[0]))
            };
            if dot(normal, toward) < 0.0 {
                normal = [-normal[0], -normal[1]];
            }
            edges.push(EdgeInfo {
                v: [key.0, key.1],
                cells,
                length,
                normal,
            });
        }
        let mut vertex_ids: Vec<VertexId> = cell_vertices
            .iter()
            .flat_map(|t| t.iter().copied())
            .collect();
        vertex_ids.sort_unstable();
        vertex_ids.dedup();
        Self {
            vertices,
            cell_ids: active,
            cell_vertices,
            geo,
            edges,
            vertex_ids,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.cell_ids.len()
    }

    /// View-local index of a forest cell id.
    pub fn local_index(&self, id: CellId) -> Option<usize> {
        self.cell_ids.binary_search(&id).ok()
    }

    pub fn points(&self, k: usize) -> [[f64; 2]; 3] {
        let t = self.cell_vertices[k];
        [
            self.vertices[t[0]],
            self.vertices[t[1]],
            self.vertices[t[2]],
        ]
    }

    /// Physical point of reference coordinates (l1, l2) in view cell `k`.
    pub fn map_ref(&self, k: usize, l: [f64; 2]) -> [f64; 2] {
        let g = &self.geo[k];
        [
            g.origin[0] + g.jac[0][0] * l[0] + g.jac[0][1] * l[1],
            g.origin[1] + g.jac[1][0] * l[0] + g.jac[1][1] * l[1],
        ]
    }

    /// Reference coordinates of physical `x` in view cell `k`.
    pub fn map_phys(&self, k: usize, x: [f64; 2]) -> [f64; 2] {
        let g = &self.geo[k];
        let d = sub(x, g.origin);
        [
            g.inv_jac[0][0] * d[0] + g.inv_jac[0][1] * d[1],
            g.inv_jac[1][0] * d[0] + g.inv_jac[1][1] * d[1],
        ]
    }

    pub fn total_area(&self) -> f64 {
        self.geo.iter().map(|g| g.area).sum()
    }

    /// Minimum interior angle over all cells, in degrees.
    pub fn min_angle_deg(&self) -> f64 {
        let mut min = f64::INFINITY;
        for k in 0..self.n_cells() {
            let p = self.points(k);
            for i in 0..3 {
                let a = sub(p[(i + 1) % 3], p[i]);
                let b = sub(p[(i + 2) % 3], p[i]);
                let ang = (dot(a, b) / (norm(a) * norm(b))).clamp(-1.0, 1.0).acos();
                min = min.min(ang.to_degrees());
            }
        }
        min
    }

    /// Checks conformity: every edge is shared by at most two cells and no
    /// used vertex lies strictly inside an edge (no hanging nodes).
    pub fn is_conforming(&self) -> bool {
        for e in &self.edges {
            if e.cells.len() > 2 {
                return false;
            }
        }
        for e in &self.edges {
            let a = self.vertices[e.v[0]];
            let b = self.vertices[e.v[1]];
            for &v in &self.vertex_ids {
                if v == e.v[0] || v == e.v[1] {
                    continue;
                }
                let x = self.vertices[v];
                let ab = sub(b, a);
                let ax = sub(x, a);
                let t = dot(ax, ab) / dot(ab, ab);
                if t > 1e-9 && t < 1.0 - 1e-9 {
                    let proj = [a[0] + t * ab[0], a[1] + t * ab[1]];
                    if norm(sub(x, proj)) < 1e-12 {
                        return false;
                    }
                }
            }
        }
        true
    }
}

impl CellGeometry {
    pub fn from_points(p: &[[f64; 2]; 3]) -> Self {
        let jac = [
            [p[1][0] - p[0][0], p[2][0] - p[0][0]],
            [p[1][1] - p[0][1], p[2][1] - p[0][1]],
        ];
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        debug_assert!(det > 0.0, "clockwise or degenerate cell");
        let inv_jac = [
            [jac[1][1] / det, -jac[0][1] / det],
            [-jac[1][0] / det, jac[0][0] / det],
        ];
        let h = norm(sub(p[1], p[0]))
            .max(norm(sub(p[2], p[1])))
            .max(norm(sub(p[0], p[2])));
        Self {
            area: 0.5 * det,
            h,
            origin: p[0],
            jac,
            inv_jac,
        }
    }

    /// Pushes a reference gradient to physical coordinates: J^{-T} g.
    pub fn push_gradient(&self, g: [f64; 2]) -> [f64; 2] {
        [
            self.inv_jac[0][0] * g[0] + self.inv_jac[1][0] * g[1],
            self.inv_jac[0][1] * g[0] + self.inv_jac[1][1] * g[1],
        ]
    }

    /// Pushes a reference Hessian (h11, h12, h22) to physical coordinates:
    /// J^{-T} H J^{-1} (the map is affine, so there is no curvature term).
    pub fn push_hessian(&self, h: [f64; 3]) -> [f64; 3] {
        let a = self.inv_jac; // a[r][c] = dl_r / dx_c
        let href = [[h[0], h[1]], [h[1], h[2]]];
        let mut out = [0.0; 3];
        let idx = [(0usize, 0usize), (0, 1), (1, 1)];
        for (n, &(i, j)) in idx.iter().enumerate() {
            let mut s = 0.0;
            for r in 0..2 {
                for c in 0..2 {
                    s += a[r][i] * href[r][c] * a[c][j];
                }
            }
            out[n] = s;
        }
        out
    }
}

pub fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

pub fn norm(a: [f64; 2]) -> f64 {
    dot(a, a).sqrt()
}

/// Barycentric coordinates of `x` in the triangle `p`, or `None` if outside
/// beyond `LOCATE_TOL`. Clamped to [0,1] and renormalized so they sum to 1.
pub fn barycentric(p: &[[f64; 2]; 3], x: [f64; 2]) -> Option<[f64; 3]> {
    let det = cross(sub(p[1], p[0]), sub(p[2], p[0]));
    let l1 = cross(sub(x, p[0]), sub(p[2], p[0])) / det;
    let l2 = cross(sub(p[1], p[0]), sub(x, p[0])) / det;
    let l0 = 1.0 - l1 - l2;
    let tol = LOCATE_TOL;
    if l0 < -tol || l1 < -tol || l2 < -tol {
        return None;
    }
    let mut l = [l0.max(0.0), l1.max(0.0), l2.max(0.0)];
    let s = l[0] + l[1] + l[2];
    for li in &mut l {
        *li /= s;
    }
    Some(l)
}
