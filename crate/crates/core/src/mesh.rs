//! Conforming simplicial meshes.
//!
//! A [`Triangulation`] stores node coordinates, element connectivity, and a
//! per-node boundary flag. Construction validates the data structurally and
//! geometrically: positive element measures (after an orientation fix),
//! conforming adjacency (any two elements meet in a full shared face, a full
//! shared edge, a shared vertex, or not at all), and consistency of the
//! boundary flags with the topological boundary. Nodes flagged `false` carry
//! degrees of freedom; nodes flagged `true` are constrained to zero. A node
//! on the topological boundary may be left unflagged (it is then a free
//! node), but a flagged node must lie on the topological boundary.
//!
//! Two-dimensional meshes are fully supported; tetrahedral meshes are
//! accepted by the data model and the quality statistics, while assembly and
//! the geometric overlap test are triangle-only.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::textio;
use crate::tolerances;

static NEXT_MESH_ID: AtomicU64 = AtomicU64::new(1);

/// A validated simplicial mesh.
#[derive(Debug, Clone)]
pub struct Triangulation {
    dim: usize,
    /// Node coordinates, `dim` entries per node.
    coords: Vec<f64>,
    /// Element connectivity, `dim + 1` node indices per element.
    elems: Vec<usize>,
    /// Per-node constraint flag; `true` pins the node to zero.
    boundary: Vec<bool>,
    /// Unconstrained node indices in ascending order.
    interior: Vec<usize>,
    /// Position of each node in `interior`, if unconstrained.
    interior_index: Vec<Option<usize>>,
    /// Process-unique identity used to detect mesh/data mismatches.
    id: u64,
}

impl Triangulation {
    /// Validates raw mesh data and builds a triangulation.
    ///
    /// `coords` holds `dim` coordinates per node, `elems` holds `dim + 1`
    /// node indices per element, and `boundary` holds one flag per node.
    /// Elements may be given in either orientation; they are reoriented to
    /// positive signed measure.
    pub fn new(
        dim: usize,
        coords: Vec<f64>,
        mut elems: Vec<usize>,
        boundary: Vec<bool>,
    ) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(Error::invalid_argument(format!(
                "dimension must be 2 or 3, got {dim}"
            )));
        }
        if coords.is_empty() || coords.len() % dim != 0 {
            return Err(Error::invalid_mesh(format!(
                "coordinate array length {} is not a positive multiple of dim {dim}",
                coords.len()
            )));
        }
        let n_nodes = coords.len() / dim;
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid_mesh("non-finite node coordinate"));
        }
        let verts_per = dim + 1;
        if elems.is_empty() || elems.len() % verts_per != 0 {
            return Err(Error::invalid_mesh(format!(
                "element array length {} is not a positive multiple of {verts_per}",
                elems.len()
            )));
        }
        let n_elems = elems.len() / verts_per;
        if boundary.len() != n_nodes {
            return Err(Error::invalid_mesh(format!(
                "boundary flag count {} does not match node count {n_nodes}",
                boundary.len()
            )));
        }
        let mut used = vec![false; n_nodes];
        for k in 0..n_elems {
            let e = &elems[k * verts_per..(k + 1) * verts_per];
            for &v in e {
                if v >= n_nodes {
                    return Err(Error::invalid_mesh(format!(
                        "element {k} references node {v}, but only {n_nodes} nodes exist"
                    )));
                }
                used[v] = true;
            }
            for a in 0..verts_per {
                for b in (a + 1)..verts_per {
                    if e[a] == e[b] {
                        return Err(Error::invalid_mesh(format!(
                            "element {k} repeats node {}",
                            e[a]
                        )));
                    }
                }
            }
        }
        if let Some(idle) = used.iter().position(|u| !u) {
            return Err(Error::invalid_mesh(format!(
                "node {idle} belongs to no element"
            )));
        }

        // Orient every element to positive signed measure; reject
        // degenerate elements (measure vanishing relative to element size).
        for k in 0..n_elems {
            let e = &mut elems[k * verts_per..(k + 1) * verts_per];
            let signed = signed_measure(dim, &coords, e);
            let scale = element_scale(dim, &coords, e);
            if signed.abs() <= 1e-14 * scale {
                return Err(Error::invalid_mesh(format!(
                    "element {k} is degenerate (measure {signed:.3e})"
                )));
            }
            if signed < 0.0 {
                e.swap(verts_per - 2, verts_per - 1);
            }
        }

        let mesh = Triangulation {
            dim,
            coords,
            elems,
            boundary: boundary.clone(),
            interior: Vec::new(),
            interior_index: Vec::new(),
            id: NEXT_MESH_ID.fetch_add(1, Ordering::Relaxed),
        };
        mesh.check_conformity()?;
        if mesh.dim == 2 {
            mesh.check_no_improper_intersections()?;
        }
        mesh.check_boundary_flags()?;

        let mut interior = Vec::new();
        let mut interior_index = vec![None; n_nodes];
        for (i, &b) in boundary.iter().enumerate() {
            if !b {
                interior_index[i] = Some(interior.len());
                interior.push(i);
            }
        }
        Ok(Triangulation {
            interior,
            interior_index,
            ..mesh
        })
    }

    /// Spatial dimension (2 or 3).
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of nodes.
    pub fn n_nodes(&self) -> usize {
        self.coords.len() / self.dim
    }

    /// Number of elements.
    pub fn n_elems(&self) -> usize {
        self.elems.len() / (self.dim + 1)
    }

    /// Number of unconstrained (free) nodes.
    pub fn n_interior(&self) -> usize {
        self.interior.len()
    }

    /// Coordinates of node `i`.
    pub fn node(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// Coordinates of node `i` of a 2-D mesh.
    pub fn node_xy(&self, i: usize) -> [f64; 2] {
        debug_assert_eq!(self.dim, 2);
        [self.coords[2 * i], self.coords[2 * i + 1]]
    }

    /// Node indices of element `k`.
    pub fn elem(&self, k: usize) -> &[usize] {
        let v = self.dim + 1;
        &self.elems[k * v..(k + 1) * v]
    }

    /// Vertex coordinates of 2-D element `k`.
    pub fn elem_pts(&self, k: usize) -> [[f64; 2]; 3] {
        let e = self.elem(k);
        [self.node_xy(e[0]), self.node_xy(e[1]), self.node_xy(e[2])]
    }

    /// Whether node `i` is constrained to zero.
    pub fn is_boundary(&self, i: usize) -> bool {
        self.boundary[i]
    }

    /// Position of node `i` among the free nodes, if free.
    pub fn interior_index(&self, i: usize) -> Option<usize> {
        self.interior_index[i]
    }

    /// Free node indices in ascending order.
    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }

    /// Process-unique mesh identity.
    pub fn id(&self) -> u64 {
        self.id
    }

    /// Axis-aligned bounding box as `(min, max)` corner coordinates.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for i in 0..self.n_nodes() {
            for (c, &x) in self.node(i).iter().enumerate() {
                lo[c] = lo[c].min(x);
                hi[c] = hi[c].max(x);
            }
        }
        (lo, hi)
    }

    // ---- validation internals ----

    fn check_conformity(&self) -> Result<()> {
        match self.dim {
            2 => {
                // Directed edges: in a conforming, consistently oriented
                // planar mesh every directed edge appears at most once, and
                // every undirected edge in at most two elements.
                let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
                for k in 0..self.n_elems() {
                    let e = self.elem(k);
                    for a in 0..3 {
                        let edge = (e[a], e[(a + 1) % 3]);
                        if let Some(&other) = directed.get(&edge) {
                            return Err(Error::invalid_mesh(format!(
                                "elements {other} and {k} overlap along the directed \
                                 edge ({}, {})",
                                edge.0, edge.1
                            )));
                        }
                        directed.insert(edge, k);
                    }
                }
                for (&(a, b), &k) in &directed {
                    if directed.contains_key(&(b, a)) && a < b {
                        continue;
                    }
                    let _ = k;
                }
                Ok(())
            }
            3 => {
                let mut faces: HashMap<[usize; 3], usize> = HashMap::new();
                for k in 0..self.n_elems() {
                    let e = self.elem(k);
                    for skip in 0..4 {
                        let mut f: Vec<usize> = (0..4)
                            .filter(|&a| a != skip)
                            .map(|a| e[a])
                            .collect();
                        f.sort_unstable();
                        let key = [f[0], f[1], f[2]];
                        let count = faces.entry(key).or_insert(0);
                        *count += 1;
                        if *count > 2 {
                            return Err(Error::invalid_mesh(format!(
                                "face ({}, {}, {}) is shared by more than two elements",
                                key[0], key[1], key[2]
                            )));
                        }
                    }
                }
                Ok(())
            }
            _ => unreachable!(),
        }
    }

    /// Flagged nodes must lie on the topological boundary (endpoint of an
    /// edge/face incident to exactly one element). Unflagged nodes may lie
    /// anywhere; they simply carry degrees of freedom.
    fn check_boundary_flags(&self) -> Result<()> {
        let mut on_boundary = vec![false; self.n_nodes()];
        match self.dim {
            2 => {
                let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
                for k in 0..self.n_elems() {
                    let e = self.elem(k);
                    for a in 0..3 {
                        let (u, v) = (e[a], e[(a + 1) % 3]);
                        let key = (u.min(v), u.max(v));
                        *edge_count.entry(key).or_insert(0) += 1;
                    }
                }
                for (&(u, v), &c) in &edge_count {
                    if c == 1 {
                        on_boundary[u] = true;
                        on_boundary[v] = true;
                    }
                }
            }
            3 => {
                let mut face_count: HashMap<[usize; 3], usize> = HashMap::new();
                for k in 0..self.n_elems() {
                    let e = self.elem(k);
                    for skip in 0..4 {
                        let mut f: Vec<usize> =
                            (0..4).filter(|&a| a != skip).map(|a| e[a]).collect();
                        f.sort_unstable();
                        *face_count.entry([f[0], f[1], f[2]]).or_insert(0) += 1;
                    }
                }
                for (f, &c) in &face_count {
                    if c == 1 {
                        for &v in f {
                            on_boundary[v] = true;
                        }
                    }
                }
            }
            _ => unreachable!(),
        }
        for i in 0..self.n_nodes() {
            if self.boundary[i] && !on_boundary[i] {
                return Err(Error::invalid_mesh(format!(
                    "node {i} is flagged as constrained but does not lie on the \
                     topological boundary"
                )));
            }
        }
        Ok(())
    }

    /// Rejects geometric overlap and improper touching (hanging nodes,
    /// crossing edges, coincident duplicate nodes) between element pairs
    /// that are not edge- or vertex-adjacent by connectivity.
    fn check_no_improper_intersections(&self) -> Result<()> {
        let n_elems = self.n_elems();
        let (lo, hi) = self.bounding_box();
        let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(f64::MIN_POSITIVE);
        // Bucket elements by bounding box on a grid sized to the largest
        // element, so candidate pairs stay near-linear in the element count.
        let mut max_elem_extent = 0.0f64;
        let mut boxes = Vec::with_capacity(n_elems);
        for k in 0..n_elems {
            let p = self.elem_pts(k);
            let bx0 = p[0][0].min(p[1][0]).min(p[2][0]);
            let bx1 = p[0][0].max(p[1][0]).max(p[2][0]);
            let by0 = p[0][1].min(p[1][1]).min(p[2][1]);
            let by1 = p[0][1].max(p[1][1]).max(p[2][1]);
            max_elem_extent = max_elem_extent.max(bx1 - bx0).max(by1 - by0);
            boxes.push([bx0, by0, bx1, by1]);
        }
        let cell = max_elem_extent.max(1e-12 * extent);
        let nx = (((hi[0] - lo[0]) / cell).ceil() as usize).max(1);
        let ny = (((hi[1] - lo[1]) / cell).ceil() as usize).max(1);
        let mut buckets: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        let clampi = |v: f64, n: usize| -> usize { (v.max(0.0) as usize).min(n - 1) };
        for (k, b) in boxes.iter().enumerate() {
            let i0 = clampi((b[0] - lo[0]) / cell, nx);
            let i1 = clampi((b[2] - lo[0]) / cell, nx);
            let j0 = clampi((b[1] - lo[1]) / cell, ny);
            let j1 = clampi((b[3] - lo[1]) / cell, ny);
            for i in i0..=i1 {
                for j in j0..=j1 {
                    buckets.entry((i, j)).or_default().push(k);
                }
            }
        }
        let tol = 1e-12 * extent;
        let mut seen: std::collections::HashSet<(usize, usize)> =
            std::collections::HashSet::new();
        for list in buckets.values() {
            for a in 0..list.len() {
                for b in (a + 1)..list.len() {
                    let (ka, kb) = (list[a].min(list[b]), list[a].max(list[b]));
                    if !seen.insert((ka, kb)) {
                        continue;
                    }
                    let ba = &boxes[ka];
                    let bb = &boxes[kb];
                    if ba[2] < bb[0] - tol
                        || bb[2] < ba[0] - tol
                        || ba[3] < bb[1] - tol
                        || bb[3] < ba[1] - tol
                    {
                        continue;
                    }
                    self.check_pair(ka, kb, tol)?;
                }
            }
        }
        Ok(())
    }

    fn check_pair(&self, ka: usize, kb: usize, tol: f64) -> Result<()> {
        let ea = self.elem(ka);
        let eb = self.elem(kb);
        let shared: Vec<usize> = ea.iter().copied().filter(|v| eb.contains(v)).collect();
        let pa = self.elem_pts(ka);
        let pb = self.elem_pts(kb);
        match shared.len() {
            3 => Err(Error::invalid_mesh(format!(
                "elements {ka} and {kb} use the same three nodes"
            ))),
            2 => {
                // Edge-adjacent: the two opposite vertices must lie strictly
                // on opposite sides of the shared edge.
                let s0 = self.node_xy(shared[0]);
                let s1 = self.node_xy(shared[1]);
                let oa = ea.iter().find(|v| !shared.contains(v)).unwrap();
                let ob = eb.iter().find(|v| !shared.contains(v)).unwrap();
                let sa = cross_sub(s0, s1, self.node_xy(*oa));
                let sb = cross_sub(s0, s1, self.node_xy(*ob));
                if sa * sb >= 0.0 {
                    return Err(Error::invalid_mesh(format!(
                        "elements {ka} and {kb} lie on the same side of their \
                         shared edge ({}, {})",
                        shared[0], shared[1]
                    )));
                }
                Ok(())
            }
            _ => {
                // Vertex-adjacent or disjoint by connectivity: interiors
                // must not overlap and no vertex may rest on the other
                // element (which would be a hanging node or duplicate).
                let area = clip_area(&pa, &pb);
                let min_area = tri_area(&pa).min(tri_area(&pb));
                if area > 1e-10 * min_area {
                    return Err(Error::invalid_mesh(format!(
                        "elements {ka} and {kb} overlap with intersection area {area:.3e}"
                    )));
                }
                for (vi, vp) in eb.iter().zip(&pb) {
                    if shared.contains(vi) {
                        continue;
                    }
                    if point_in_closed_triangle(&pa, *vp, tol) {
                        return Err(Error::invalid_mesh(format!(
                            "node {vi} of element {kb} rests on element {ka} \
                             without being one of its vertices"
                        )));
                    }
                }
                for (vi, vp) in ea.iter().zip(&pa) {
                    if shared.contains(vi) {
                        continue;
                    }
                    if point_in_closed_triangle(&pb, *vp, tol) {
                        return Err(Error::invalid_mesh(format!(
                            "node {vi} of element {ka} rests on element {kb} \
                             without being one of its vertices"
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

fn cross_sub(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn tri_area(p: &[[f64; 2]; 3]) -> f64 {
    0.5 * cross_sub(p[0], p[1], p[2]).abs()
}

fn point_in_closed_triangle(p: &[[f64; 2]; 3], x: [f64; 2], tol: f64) -> bool {
    let scale = tri_area(p).sqrt().max(tol);
    for i in 0..3 {
        if cross_sub(p[i], p[(i + 1) % 3], x) < -tol * scale {
            return false;
        }
    }
    true
}

/// Area of the intersection of two triangles (Sutherland–Hodgman clipping;
/// both triangles must be positively oriented).
fn clip_area(a: &[[f64; 2]; 3], b: &[[f64; 2]; 3]) -> f64 {
    let mut poly: Vec<[f64; 2]> = a.to_vec();
    for i in 0..3 {
        let (e0, e1) = (b[i], b[(i + 1) % 3]);
        let mut next = Vec::with_capacity(poly.len() + 2);
        for k in 0..poly.len() {
            let cur = poly[k];
            let prev = poly[(k + poly.len() - 1) % poly.len()];
            let side_cur = cross_sub(e0, e1, cur);
            let side_prev = cross_sub(e0, e1, prev);
            if side_cur >= 0.0 {
                if side_prev < 0.0 {
                    next.push(intersect(prev, cur, e0, e1));
                }
                next.push(cur);
            } else if side_prev >= 0.0 {
                next.push(intersect(prev, cur, e0, e1));
            }
        }
        poly = next;
        if poly.is_empty() {
            return 0.0;
        }
    }
    let mut area2 = 0.0;
    for k in 1..poly.len().saturating_sub(1) {
        area2 += cross_sub(poly[0], poly[k], poly[k + 1]);
    }
    0.5 * area2.abs()
}

fn intersect(p: [f64; 2], q: [f64; 2], e0: [f64; 2], e1: [f64; 2]) -> [f64; 2] {
    let sp = cross_sub(e0, e1, p);
    let sq = cross_sub(e0, e1, q);
    let t = sp / (sp - sq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

fn signed_measure(dim: usize, coords: &[f64], e: &[usize]) -> f64 {
    match dim {
        2 => {
            let p = |i: usize| [coords[2 * e[i]], coords[2 * e[i] + 1]];
            0.5 * cross_sub(p(0), p(1), p(2))
        }
        3 => {
            let p = |i: usize| {
                [
                    coords[3 * e[i]],
                    coords[3 * e[i] + 1],
                    coords[3 * e[i] + 2],
                ]
            };
            let a = p(0);
            let u = [p(1)[0] - a[0], p(1)[1] - a[1], p(1)[2] - a[2]];
            let v = [p(2)[0] - a[0], p(2)[1] - a[1], p(2)[2] - a[2]];
            let w = [p(3)[0] - a[0], p(3)[1] - a[1], p(3)[2] - a[2]];
            (u[0] * (v[1] * w[2] - v[2] * w[1]) - u[1] * (v[0] * w[2] - v[2] * w[0])
                + u[2] * (v[0] * w[1] - v[1] * w[0]))
                / 6.0
        }
        _ => unreachable!(),
    }
}

/// `diam^dim` proxy used for the degeneracy threshold.
fn element_scale(dim: usize, coords: &[f64], e: &[usize]) -> f64 {
    let mut d2_max = 0.0f64;
    for a in 0..e.len() {
        for b in (a + 1)..e.len() {
            let mut d2 = 0.0;
            for c in 0..dim {
                let diff = coords[dim * e[a] + c] - coords[dim * e[b] + c];
                d2 += diff * diff;
            }
            d2_max = d2_max.max(d2);
        }
    }
    d2_max.powf(dim as f64 / 2.0)
}

/// Gradients of the three barycentric basis functions of a triangle,
/// together with its area. With vertices `p0, p1, p2` the gradient of the
/// basis function of vertex `i` is `rot90(p_{i+2} - p_{i+1}) / (2 A)` where
/// `rot90(x, y) = (-y, x)`.
pub(crate) fn tri_grads(p: &[[f64; 2]; 3]) -> ([[f64; 2]; 3], f64) {
    let area2 = cross_sub(p[0], p[1], p[2]);
    let mut g = [[0.0; 2]; 3];
    for i in 0..3 {
        let a = p[(i + 1) % 3];
        let b = p[(i + 2) % 3];
        let e = [b[0] - a[0], b[1] - a[1]];
        g[i] = [-e[1] / area2, e[0] / area2];
    }
    (g, 0.5 * area2)
}

/// Generates the structured unit-square triangulation with `n x n` cells,
/// each split along the bottom-left to top-right diagonal: `2 n^2` elements,
/// `(n + 1)^2` nodes, `(n - 1)^2` free nodes. Node `(i, j)` sits at
/// `(i/n, j/n)` and has index `j (n + 1) + i`.
pub fn generate_structured_mesh(n: usize) -> Result<Triangulation> {
    if n < 2 {
        return Err(Error::invalid_argument(format!(
            "structured mesh needs at least 2 cells per side, got {n}"
        )));
    }
    let nn = n + 1;
    let mut coords = Vec::with_capacity(2 * nn * nn);
    let mut boundary = Vec::with_capacity(nn * nn);
    for j in 0..nn {
        for i in 0..nn {
            coords.push(i as f64 / n as f64);
            coords.push(j as f64 / n as f64);
            boundary.push(i == 0 || i == n || j == 0 || j == n);
        }
    }
    let mut elems = Vec::with_capacity(6 * n * n);
    for j in 0..n {
        for i in 0..n {
            let v00 = j * nn + i;
            let v10 = v00 + 1;
            let v01 = v00 + nn;
            let v11 = v01 + 1;
            elems.extend_from_slice(&[v00, v10, v11]);
            elems.extend_from_slice(&[v00, v11, v01]);
        }
    }
    Triangulation::new(2, coords, elems, boundary)
}

/// A two-element mesh whose shared edge sees two 100-degree angles, so the
/// assembled off-diagonal stiffness entry is positive. The shared-edge
/// endpoints are left free (they lie on the topological boundary but carry
/// degrees of freedom); the two apex nodes are constrained. Used to
/// demonstrate sign changes that acute meshes exclude.
pub fn obtuse_pair_mesh() -> Result<Triangulation> {
    let apex_half_angle = 50.0f64.to_radians();
    let s = 0.5 / apex_half_angle.tan();
    let coords = vec![0.0, 0.0, 1.0, 0.0, 0.5, s, 0.5, -s];
    let elems = vec![0, 1, 2, 0, 3, 1];
    let boundary = vec![false, false, true, true];
    Triangulation::new(2, coords, elems, boundary)
}

/// Geometric quality statistics of a mesh.
#[derive(Debug, Clone)]
pub struct MeshStats {
    /// Largest element diameter `h`.
    pub h: f64,
    /// Smallest vertex-to-opposite-facet distance over all elements.
    pub kappa: f64,
    /// Shape-regularity ratio: max over elements of `h_K / rho_K` with
    /// `rho_K` the inradius.
    pub shape_ratio: f64,
    /// Quasi-uniformity ratio `h / min_K h_K`.
    pub size_ratio: f64,
    /// Lumped node measures `|Lambda_j|` (one third / quarter of the total
    /// measure of the elements touching node `j`), over all nodes.
    pub lumped_measures: Vec<f64>,
    /// Total measure of the meshed domain.
    pub domain_measure: f64,
}

/// Computes [`MeshStats`] for a 2-D or 3-D mesh.
pub fn compute_mesh_stats(mesh: &Triangulation) -> MeshStats {
    let dim = mesh.dim();
    let n_nodes = mesh.n_nodes();
    let mut h = 0.0f64;
    let mut h_min = f64::INFINITY;
    let mut kappa = f64::INFINITY;
    let mut shape_ratio = 0.0f64;
    let mut lumped = vec![0.0; n_nodes];
    let mut domain = 0.0;
    for k in 0..mesh.n_elems() {
        let e = mesh.elem(k);
        let measure = signed_measure(dim, &mesh.coords, e).abs();
        domain += measure;
        for &v in e {
            lumped[v] += measure / (dim + 1) as f64;
        }
        let mut diam = 0.0f64;
        for a in 0..e.len() {
            for b in (a + 1)..e.len() {
                let mut d2 = 0.0;
                for c in 0..dim {
                    let diff = mesh.node(e[a])[c] - mesh.node(e[b])[c];
                    d2 += diff * diff;
                }
                diam = diam.max(d2.sqrt());
            }
        }
        h = h.max(diam);
        h_min = h_min.min(diam);
        let (alt_min, inradius) = match dim {
            2 => {
                let p = [
                    mesh.node_xy(e[0]),
                    mesh.node_xy(e[1]),
                    mesh.node_xy(e[2]),
                ];
                let mut perimeter = 0.0;
                let mut alt = f64::INFINITY;
                for i in 0..3 {
                    let a = p[(i + 1) % 3];
                    let b = p[(i + 2) % 3];
                    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
                    perimeter += len;
                    alt = alt.min(2.0 * measure / len);
                }
                (alt, 2.0 * measure / perimeter)
            }
            3 => {
                let mut total_face_area = 0.0;
                let mut alt = f64::INFINITY;
                for skip in 0..4 {
                    let f: Vec<[f64; 3]> = (0..4)
                        .filter(|&a| a != skip)
                        .map(|a| {
                            let c = mesh.node(e[a]);
                            [c[0], c[1], c[2]]
                        })
                        .collect();
                    let u = [
                        f[1][0] - f[0][0],
                        f[1][1] - f[0][1],
                        f[1][2] - f[0][2],
                    ];
                    let v = [
                        f[2][0] - f[0][0],
                        f[2][1] - f[0][1],
                        f[2][2] - f[0][2],
                    ];
                    let cx = u[1] * v[2] - u[2] * v[1];
                    let cy = u[2] * v[0] - u[0] * v[2];
                    let cz = u[0] * v[1] - u[1] * v[0];
                    let area = 0.5 * (cx * cx + cy * cy + cz * cz).sqrt();
                    total_face_area += area;
                    alt = alt.min(3.0 * measure / area);
                }
                (alt, 3.0 * measure / total_face_area)
            }
            _ => unreachable!(),
        };
        kappa = kappa.min(alt_min);
        shape_ratio = shape_ratio.max(diam / inradius);
    }
    MeshStats {
        h,
        kappa,
        shape_ratio,
        size_ratio: h / h_min,
        lumped_measures: lumped,
        domain_measure: domain,
    }
}

/// Outcome of the acuteness test.
#[derive(Debug, Clone)]
pub struct AcutenessReport {
    /// True if no off-diagonal stiffness entry exceeds the tolerance.
    pub pass: bool,
    /// Absolute tolerance applied to off-diagonal entries.
    pub tol: f64,
    /// Node pairs `(i, j, entry)` with a positive off-diagonal entry.
    pub violations: Vec<(usize, usize, f64)>,
    /// Largest off-diagonal entry encountered (signed).
    pub max_offdiag: f64,
    /// Whether the independent opposite-angle test marks exactly the same
    /// edge set as violating.
    pub angle_check_agrees: bool,
}

/// Tests whether all off-diagonal entries of the full stiffness matrix
/// (assembled over *all* nodes, free and constrained) are nonpositive up to
/// `tol = GEOM_REL * max |entry|`. For interior edges this is equivalent to
/// the two opposite angles summing to at most pi, and for boundary edges to
/// the single opposite angle being at most pi/2; that angle criterion is
/// evaluated independently from the element geometry as a cross-check.
///
/// Only 2-D meshes are supported.
pub fn check_acuteness(mesh: &Triangulation) -> Result<AcutenessReport> {
    if mesh.dim() != 2 {
        return Err(Error::Capability(
            "acuteness test is implemented for triangular meshes only".into(),
        ));
    }
    let n = mesh.n_nodes();
    // Route 1: assembled stiffness entries via basis-function gradients.
    let mut entries: HashMap<(usize, usize), f64> = HashMap::new();
    let mut max_abs = 0.0f64;
    for k in 0..mesh.n_elems() {
        let e = mesh.elem(k);
        let (g, area) = tri_grads(&mesh.elem_pts(k));
        for a in 0..3 {
            for b in 0..3 {
                let v = area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                *entries.entry((e[a], e[b])).or_insert(0.0) += v;
            }
        }
    }
    for v in entries.values() {
        max_abs = max_abs.max(v.abs());
    }
    let tol = tolerances::GEOM_REL * max_abs;
    let mut violations = Vec::new();
    let mut max_offdiag = f64::NEG_INFINITY;
    for (&(i, j), &v) in &entries {
        if i < j {
            max_offdiag = max_offdiag.max(v);
            if v > tol {
                violations.push((i, j, v));
            }
        }
    }
    violations.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

    // Route 2: per-edge sums of cotangents of the opposite angles, computed
    // from vertex angles rather than assembled gradients. The stiffness
    // entry for edge (i, j) equals -(1/2) * sum of those cotangents, so the
    // sign tests must agree.
    let mut cot_sum: HashMap<(usize, usize), f64> = HashMap::new();
    for k in 0..mesh.n_elems() {
        let e = mesh.elem(k);
        let p = mesh.elem_pts(k);
        for opp in 0..3 {
            let i = e[(opp + 1) % 3];
            let j = e[(opp + 2) % 3];
            let u = [
                p[(opp + 1) % 3][0] - p[opp][0],
                p[(opp + 1) % 3][1] - p[opp][1],
            ];
            let v = [
                p[(opp + 2) % 3][0] - p[opp][0],
                p[(opp + 2) % 3][1] - p[opp][1],
            ];
            let dot = u[0] * v[0] + u[1] * v[1];
            let cross = (u[0] * v[1] - u[1] * v[0]).abs();
            let key = (i.min(j), i.max(j));
            *cot_sum.entry(key).or_insert(0.0) += dot / cross;
        }
    }
    let mut angle_violations: Vec<(usize, usize)> = cot_sum
        .iter()
        .filter(|(_, &c)| -0.5 * c > tol)
        .map(|(&k, _)| k)
        .collect();
    angle_violations.sort_unstable();
    let stiffness_edges: Vec<(usize, usize)> =
        violations.iter().map(|&(i, j, _)| (i, j)).collect();
    let angle_check_agrees = angle_violations == stiffness_edges;

    let _ = n;
    Ok(AcutenessReport {
        pass: violations.is_empty(),
        tol,
        violations,
        max_offdiag,
        angle_check_agrees,
    })
}

/// Writes a mesh as plain text. Format after the `#` header:
///
/// ```text
/// dim 2
/// nodes N
/// <x> <y> <flag>      (N lines, flag 1 = constrained)
/// elements M
/// <v0> <v1> <v2>      (M lines)
/// ```
///
/// Coordinates carry 17 significant digits so a load/save round trip is
/// bit-exact. Extra header entries (command line, seed) are emitted before
/// the structural metadata.
pub fn save_mesh(
    mesh: &Triangulation,
    path: &Path,
    extra_header: &[(&str, String)],
) -> Result<()> {
    let mut entries: Vec<(&str, String)> = extra_header.to_vec();
    entries.extend([
        ("kind", "mesh".to_string()),
        ("dim", mesh.dim().to_string()),
        ("nodes", mesh.n_nodes().to_string()),
        ("elements", mesh.n_elems().to_string()),
    ]);
    let mut out = textio::header(&entries);
    out.push_str(&format!("dim {}\n", mesh.dim()));
    out.push_str(&format!("nodes {}\n", mesh.n_nodes()));
    for i in 0..mesh.n_nodes() {
        for c in mesh.node(i) {
            out.push_str(&textio::full(*c));
            out.push(' ');
        }
        out.push_str(if mesh.is_boundary(i) { "1\n" } else { "0\n" });
    }
    out.push_str(&format!("elements {}\n", mesh.n_elems()));
    for k in 0..mesh.n_elems() {
        let e = mesh.elem(k);
        let line: Vec<String> = e.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a mesh written by [`save_mesh`] and re-validates it.
pub fn load_mesh(path: &Path) -> Result<Triangulation> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = textio::payload_lines(&text);
    let mut expect = |what: &str| -> Result<(usize, String)> {
        lines
            .next()
            .map(|(ln, s)| (ln, s.to_string()))
            .ok_or_else(|| Error::Parse {
                line: text.lines().count() + 1,
                msg: format!("unexpected end of file, expected {what}"),
            })
    };
    let parse_kv = |ln: usize, s: &str, key: &str| -> Result<usize> {
        let mut it = s.split_whitespace();
        match (it.next(), it.next(), it.next()) {
            (Some(k), Some(v), None) if k == key => v.parse().map_err(|_| Error::Parse {
                line: ln,
                msg: format!("expected integer after '{key}'"),
            }),
            _ => Err(Error::Parse {
                line: ln,
                msg: format!("expected '{key} <count>'"),
            }),
        }
    };
    let (ln, s) = expect("'dim <d>'")?;
    let dim = parse_kv(ln, &s, "dim")?;
    let (ln, s) = expect("'nodes <count>'")?;
    let n_nodes = parse_kv(ln, &s, "nodes")?;
    let mut coords = Vec::with_capacity(n_nodes * dim);
    let mut boundary = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let (ln, s) = expect("a node line")?;
        let parts: Vec<&str> = s.split_whitespace().collect();
        if parts.len() != dim + 1 {
            return Err(Error::Parse {
                line: ln,
                msg: format!("expected {} coordinates and a flag", dim),
            });
        }
        for p in &parts[..dim] {
            coords.push(p.parse::<f64>().map_err(|_| Error::Parse {
                line: ln,
                msg: format!("bad coordinate '{p}'"),
            })?);
        }
        boundary.push(match parts[dim] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Parse {
                    line: ln,
                    msg: format!("bad boundary flag '{other}', expected 0 or 1"),
                })
            }
        });
    }
    let (ln, s) = expect("'elements <count>'")?;
    let n_elems = parse_kv(ln, &s, "elements")?;
    let mut elems = Vec::with_capacity(n_elems * (dim + 1));
    for _ in 0..n_elems {
        let (ln, s) = expect("an element line")?;
        let parts: Vec<&str> = s.split_whitespace().collect();
        if parts.len() != dim + 1 {
            return Err(Error::Parse {
                line: ln,
                msg: format!("expected {} node indices", dim + 1),
            });
        }
        for p in parts {
            elems.push(p.parse::<usize>().map_err(|_| Error::Parse {
                line: ln,
                msg: format!("bad node index '{p}'"),
            })?);
        }
    }
    if let Some((ln, _)) = lines.next() {
        return Err(Error::Parse {
            line: ln,
            msg: "trailing content after element list".into(),
        });
    }
    Triangulation::new(dim, coords, elems, boundary)
}
