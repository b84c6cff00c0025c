//! P1 finite element assembly and the discrete operator calculus.
//!
//! For a triangulation with free (unconstrained) nodes `x_1 .. x_N`,
//! [`DiscreteOperatorSet`] holds the three matrices of the mass-lumped
//! method, all restricted to the free nodes:
//!
//! - the stiffness matrix `S_ij = integral of grad(phi_i) . grad(phi_j)`,
//! - the consistent mass matrix `M_ij = integral of phi_i phi_j`
//!   (elementwise `|K|/12 * (1 + delta_ij)` on triangles),
//! - the lumped mass diagonal `D_jj = |Lambda_j|`, the node measure, equal
//!   to the row sums of the full consistent mass matrix.
//!
//! Built on these are the discrete operators
//!
//! - `A_h = -D^{-1} S` (lumped discrete Laplacian),
//! - `L_h = -M^{-1} S` (consistent discrete Laplacian),
//! - `K_h = M^{-1} D` with inverse `D^{-1} M`, so that `L_h = K_h A_h`
//!   exactly as matrices,
//!
//! plus the L2 projection (mass solve against a load vector), the Ritz
//! projection (stiffness solve against a gradient load), nodal
//! interpolation, point evaluation, and plain-text matrix dumps.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use once_cell::sync::OnceCell;

use crate::error::{Error, Result};
use crate::linalg::{Csr, Scalar, SpdSolver};
use crate::mesh::{compute_mesh_stats, tri_grads, MeshStats, Triangulation};
use crate::quadrature::{self, QuadLevel};
use crate::textio;

/// A coefficient vector over the free nodes of a specific mesh.
///
/// The value type is `f64` for states and loads and `Complex64` for
/// spectral diagnostics. Values are indexed by free-node position (see
/// [`Triangulation::interior_nodes`]); constrained nodes are implicitly
/// zero.
#[derive(Debug, Clone)]
pub struct FemFunction<T: Scalar = f64> {
    vals: Vec<T>,
    mesh_id: u64,
}

impl<T: Scalar> FemFunction<T> {
    /// Values at the free nodes.
    pub fn values(&self) -> &[T] {
        &self.vals
    }

    /// Mutable values at the free nodes.
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.vals
    }

    /// Consumes the function, returning its values.
    pub fn into_values(self) -> Vec<T> {
        self.vals
    }

    /// Identity of the mesh this function lives on.
    pub fn mesh_id(&self) -> u64 {
        self.mesh_id
    }

    /// Number of free-node values.
    pub fn len(&self) -> usize {
        self.vals.len()
    }

    /// True for a function over zero free nodes.
    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    /// Largest modulus of any value.
    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.modulus()))
    }

    /// True if every value is finite.
    pub fn all_finite(&self) -> bool {
        self.vals.iter().all(|v| v.is_finite_scalar())
    }

    /// Returns `a * x + b * y`. Panics if the functions live on different
    /// meshes; combining across meshes is a programming error.
    pub fn linear_comb(a: f64, x: &Self, b: f64, y: &Self) -> Self {
        assert_eq!(
            x.mesh_id, y.mesh_id,
            "linear combination across different meshes"
        );
        assert_eq!(x.vals.len(), y.vals.len());
        FemFunction {
            vals: x
                .vals
                .iter()
                .zip(&y.vals)
                .map(|(&xv, &yv)| xv.scale(a) + yv.scale(b))
                .collect(),
            mesh_id: x.mesh_id,
        }
    }

    /// Returns `c * self`.
    pub fn scaled(&self, c: f64) -> Self {
        FemFunction {
            vals: self.vals.iter().map(|v| v.scale(c)).collect(),
            mesh_id: self.mesh_id,
        }
    }
}

/// Assembled matrices and discrete operators for one mesh.
pub struct DiscreteOperatorSet {
    mesh: Arc<Triangulation>,
    stats: MeshStats,
    stiffness: Csr,
    mass: Csr,
    lumped: Vec<f64>,
    quad: QuadLevel,
    dof_xy: Vec<[f64; 2]>,
    stiffness_solver: OnceCell<SpdSolver>,
    mass_solver: OnceCell<SpdSolver>,
    locator: OnceCell<Locator>,
}

impl DiscreteOperatorSet {
    /// Assembles stiffness, consistent mass, and lumped mass over the free
    /// nodes of a triangular mesh, with the standard quadrature level for
    /// the load integrals.
    pub fn assemble(mesh: Arc<Triangulation>) -> Result<Self> {
        Self::assemble_with_quad(mesh, QuadLevel::Standard)
    }

    /// Like [`assemble`](Self::assemble) with an explicit quadrature level
    /// for load vectors and nonlinear terms.
    pub fn assemble_with_quad(mesh: Arc<Triangulation>, quad: QuadLevel) -> Result<Self> {
        if mesh.dim() != 2 {
            return Err(Error::Capability(
                "assembly is implemented for triangular meshes only".into(),
            ));
        }
        let n = mesh.n_interior();
        if n == 0 {
            return Err(Error::invalid_argument(
                "mesh has no free nodes; nothing to assemble",
            ));
        }
        let stats = compute_mesh_stats(&mesh);
        let mut s_triplets = Vec::new();
        let mut m_triplets = Vec::new();
        for k in 0..mesh.n_elems() {
            let e = mesh.elem(k);
            let (g, area) = tri_grads(&mesh.elem_pts(k));
            let local: Vec<Option<usize>> =
                e.iter().map(|&v| mesh.interior_index(v)).collect();
            for a in 0..3 {
                let Some(ia) = local[a] else { continue };
                for b in 0..3 {
                    let Some(ib) = local[b] else { continue };
                    let sv = area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                    s_triplets.push((ia, ib, sv));
                    let mv = area / 12.0 * if a == b { 2.0 } else { 1.0 };
                    m_triplets.push((ia, ib, mv));
                }
            }
        }
        let stiffness = Csr::from_triplets(n, n, &s_triplets)?;
        let mass = Csr::from_triplets(n, n, &m_triplets)?;
        let lumped: Vec<f64> = mesh
            .interior_nodes()
            .iter()
            .map(|&v| stats.lumped_measures[v])
            .collect();
        let dof_xy = mesh.interior_nodes().iter().map(|&v| mesh.node_xy(v)).collect();
        Ok(DiscreteOperatorSet {
            mesh,
            stats,
            stiffness,
            mass,
            lumped,
            quad,
            dof_xy,
            stiffness_solver: OnceCell::new(),
            mass_solver: OnceCell::new(),
            locator: OnceCell::new(),
        })
    }

    /// The underlying mesh.
    pub fn mesh(&self) -> &Triangulation {
        &self.mesh
    }

    /// Shared handle to the underlying mesh.
    pub fn mesh_arc(&self) -> Arc<Triangulation> {
        Arc::clone(&self.mesh)
    }

    /// Geometric statistics of the mesh.
    pub fn stats(&self) -> &MeshStats {
        &self.stats
    }

    /// Number of degrees of freedom (free nodes).
    pub fn n_dofs(&self) -> usize {
        self.lumped.len()
    }

    /// The stiffness matrix over free nodes.
    pub fn stiffness(&self) -> &Csr {
        &self.stiffness
    }

    /// The consistent mass matrix over free nodes.
    pub fn mass(&self) -> &Csr {
        &self.mass
    }

    /// The lumped mass diagonal (free-node measures).
    pub fn lumped_masses(&self) -> &[f64] {
        &self.lumped
    }

    /// Quadrature level used for load integrals.
    pub fn quad_level(&self) -> QuadLevel {
        self.quad
    }

    /// Coordinates of degree of freedom `i`.
    pub fn dof_xy(&self, i: usize) -> [f64; 2] {
        self.dof_xy[i]
    }

    /// Wraps raw values as a function on this operator set's mesh.
    pub fn function_from_values<T: Scalar>(&self, vals: Vec<T>) -> Result<FemFunction<T>> {
        if vals.len() != self.n_dofs() {
            return Err(Error::invalid_argument(format!(
                "value count {} does not match {} degrees of freedom",
                vals.len(),
                self.n_dofs()
            )));
        }
        Ok(FemFunction {
            vals,
            mesh_id: self.mesh.id(),
        })
    }

    /// The zero function.
    pub fn zero_function<T: Scalar>(&self) -> FemFunction<T> {
        FemFunction {
            vals: vec![T::ZERO; self.n_dofs()],
            mesh_id: self.mesh.id(),
        }
    }

    /// Verifies that `f` belongs to this mesh.
    pub fn check<T: Scalar>(&self, f: &FemFunction<T>) -> Result<()> {
        if f.mesh_id != self.mesh.id() {
            return Err(Error::MeshMismatch(format!(
                "function was built on mesh {} but the operators use mesh {}",
                f.mesh_id,
                self.mesh.id()
            )));
        }
        if f.vals.len() != self.n_dofs() {
            return Err(Error::MeshMismatch(format!(
                "function has {} values but the mesh has {} degrees of freedom",
                f.vals.len(),
                self.n_dofs()
            )));
        }
        Ok(())
    }

    fn stiffness_solver(&self) -> Result<&SpdSolver> {
        self.stiffness_solver
            .get_or_try_init(|| SpdSolver::new(&self.stiffness))
    }

    fn mass_solver(&self) -> Result<&SpdSolver> {
        self.mass_solver.get_or_try_init(|| SpdSolver::new(&self.mass))
    }

    /// Solves `M x = b` with the consistent mass matrix. The factorization
    /// is built on first use and cached.
    pub fn mass_solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n_dofs() {
            return Err(Error::invalid_argument(format!(
                "right-hand side has {} entries, expected {}",
                b.len(),
                self.n_dofs()
            )));
        }
        self.mass_solver()?.solve(b)
    }

    /// Solves `S x = b` with the stiffness matrix. The factorization is
    /// built on first use and cached.
    pub fn stiffness_solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n_dofs() {
            return Err(Error::invalid_argument(format!(
                "right-hand side has {} entries, expected {}",
                b.len(),
                self.n_dofs()
            )));
        }
        self.stiffness_solver()?.solve(b)
    }

    /// Applies the lumped discrete Laplacian `A_h v = -D^{-1} S v`.
    pub fn apply_ah<T: Scalar>(&self, f: &FemFunction<T>) -> Result<FemFunction<T>> {
        self.check(f)?;
        let mut y = self.stiffness.matvec(&f.vals);
        for (yi, &d) in y.iter_mut().zip(&self.lumped) {
            *yi = (-*yi).scale(1.0 / d);
        }
        Ok(FemFunction {
            vals: y,
            mesh_id: f.mesh_id,
        })
    }

    /// Solves `A_h w = v`, i.e. `S w = -(D v)`.
    pub fn solve_ah(&self, f: &FemFunction) -> Result<FemFunction> {
        self.check(f)?;
        let rhs: Vec<f64> = f
            .vals
            .iter()
            .zip(&self.lumped)
            .map(|(&v, &d)| -v * d)
            .collect();
        let w = self.stiffness_solver()?.solve(&rhs)?;
        self.function_from_values(w)
    }

    /// Applies the consistent discrete Laplacian `L_h v = -M^{-1} S v`.
    pub fn apply_lh(&self, f: &FemFunction) -> Result<FemFunction> {
        self.check(f)?;
        let sv = self.stiffness.matvec(&f.vals);
        let rhs: Vec<f64> = sv.iter().map(|&v| -v).collect();
        let w = self.mass_solver()?.solve(&rhs)?;
        self.function_from_values(w)
    }

    /// Applies `K_h = M^{-1} D`.
    pub fn apply_kh(&self, f: &FemFunction) -> Result<FemFunction> {
        self.check(f)?;
        let rhs: Vec<f64> = f
            .vals
            .iter()
            .zip(&self.lumped)
            .map(|(&v, &d)| v * d)
            .collect();
        let w = self.mass_solver()?.solve(&rhs)?;
        self.function_from_values(w)
    }

    /// Applies `K_h^{-1} = D^{-1} M`.
    pub fn apply_kh_inverse(&self, f: &FemFunction) -> Result<FemFunction> {
        self.check(f)?;
        let mv = self.mass.matvec(&f.vals);
        let w: Vec<f64> = mv
            .iter()
            .zip(&self.lumped)
            .map(|(&v, &d)| v / d)
            .collect();
        self.function_from_values(w)
    }

    /// Load vector `b_j = integral of f(x) phi_j(x)` over the free nodes.
    pub fn load_vector(&self, f: &dyn Fn(f64, f64) -> f64) -> Vec<f64> {
        let mut b = vec![0.0; self.n_dofs()];
        for k in 0..self.mesh.n_elems() {
            let e = self.mesh.elem(k);
            let pts = self.mesh.elem_pts(k);
            let (_, area) = tri_grads(&pts);
            let local: Vec<Option<usize>> =
                e.iter().map(|&v| self.mesh.interior_index(v)).collect();
            quadrature::for_each_point_bary(&pts, area, self.quad, |x, y, w, lam| {
                let fv = w * f(x, y);
                for a in 0..3 {
                    if let Some(ia) = local[a] {
                        b[ia] += fv * lam[a];
                    }
                }
            });
        }
        b
    }

    /// Load vector of a composed nonlinearity,
    /// `b_j = integral of g(v_h(x)) phi_j(x)`, with `v_h` the P1 function
    /// given by `v` (zero on constrained nodes).
    pub fn nonlinear_load(
        &self,
        v: &FemFunction,
        g: &dyn Fn(f64) -> f64,
    ) -> Result<Vec<f64>> {
        self.check(v)?;
        let mut b = vec![0.0; self.n_dofs()];
        for k in 0..self.mesh.n_elems() {
            let e = self.mesh.elem(k);
            let pts = self.mesh.elem_pts(k);
            let (_, area) = tri_grads(&pts);
            let local: Vec<Option<usize>> =
                e.iter().map(|&v| self.mesh.interior_index(v)).collect();
            let nodal: Vec<f64> = local
                .iter()
                .map(|idx| idx.map_or(0.0, |i| v.vals[i]))
                .collect();
            quadrature::for_each_point_bary(&pts, area, self.quad, |_x, _y, w, lam| {
                let uval = lam[0] * nodal[0] + lam[1] * nodal[1] + lam[2] * nodal[2];
                let gv = w * g(uval);
                for a in 0..3 {
                    if let Some(ia) = local[a] {
                        b[ia] += gv * lam[a];
                    }
                }
            });
        }
        Ok(b)
    }

    /// L2 projection onto the free-node space: solves `M u = b(f)`.
    pub fn l2_projection(&self, f: &dyn Fn(f64, f64) -> f64) -> Result<FemFunction> {
        let b = self.load_vector(f);
        let u = self.mass_solver()?.solve(&b)?;
        self.function_from_values(u)
    }

    /// Ritz projection: solves `S u = b` with
    /// `b_j = integral of grad_f(x) . grad(phi_j)(x)`, where `grad_f`
    /// returns the gradient of the projected function.
    pub fn ritz_projection(
        &self,
        grad_f: &dyn Fn(f64, f64) -> [f64; 2],
    ) -> Result<FemFunction> {
        let mut b = vec![0.0; self.n_dofs()];
        for k in 0..self.mesh.n_elems() {
            let e = self.mesh.elem(k);
            let pts = self.mesh.elem_pts(k);
            let (g, area) = tri_grads(&pts);
            let mut gx = 0.0;
            let mut gy = 0.0;
            quadrature::for_each_point_bary(&pts, area, self.quad, |x, y, w, _| {
                let gr = grad_f(x, y);
                gx += w * gr[0];
                gy += w * gr[1];
            });
            for a in 0..3 {
                if let Some(ia) = self.mesh.interior_index(e[a]) {
                    b[ia] += gx * g[a][0] + gy * g[a][1];
                }
            }
        }
        let u = self.stiffness_solver()?.solve(&b)?;
        self.function_from_values(u)
    }

    /// Nodal interpolant: evaluates `f` at the free nodes.
    pub fn nodal_interpolant(&self, f: &dyn Fn(f64, f64) -> f64) -> FemFunction {
        let vals = self.dof_xy.iter().map(|&[x, y]| f(x, y)).collect();
        FemFunction {
            vals,
            mesh_id: self.mesh.id(),
        }
    }

    /// Values at all mesh nodes, with zeros at constrained nodes.
    pub fn full_nodal_values<T: Scalar>(&self, f: &FemFunction<T>) -> Result<Vec<T>> {
        self.check(f)?;
        let mut out = vec![T::ZERO; self.mesh.n_nodes()];
        for (pos, &node) in self.mesh.interior_nodes().iter().enumerate() {
            out[node] = f.vals[pos];
        }
        Ok(out)
    }

    /// Evaluates the P1 function at a point of the meshed domain.
    pub fn evaluate(&self, f: &FemFunction, x: f64, y: f64) -> Result<f64> {
        self.check(f)?;
        let loc = self.locator.get_or_init(|| Locator::build(&self.mesh));
        let (k, lam) = loc.locate(&self.mesh, x, y).ok_or_else(|| {
            Error::invalid_argument(format!("point ({x}, {y}) lies outside the mesh"))
        })?;
        let e = self.mesh.elem(k);
        let mut v = 0.0;
        for a in 0..3 {
            if let Some(ia) = self.mesh.interior_index(e[a]) {
                v += lam[a] * f.vals[ia];
            }
        }
        Ok(v)
    }

    /// Writes the three matrices as plain text (`stiffness.txt`, `mass.txt`
    /// as `row col value` triplets, `lumped.txt` as `index value`), with 17
    /// significant digits. Returns the paths written.
    pub fn dump_matrices(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let dump_csr = |name: &str, m: &Csr| -> Result<PathBuf> {
            let mut out = textio::header(&[
                ("kind", format!("matrix {name}")),
                ("rows", m.nrows().to_string()),
                ("cols", m.ncols().to_string()),
                ("nnz", m.nnz().to_string()),
                ("format", "row col value".to_string()),
            ]);
            for i in 0..m.nrows() {
                let (cols, vals) = m.row(i);
                for (&j, &v) in cols.iter().zip(vals) {
                    out.push_str(&format!("{i} {j} {}\n", textio::full(v)));
                }
            }
            let path = dir.join(format!("{name}.txt"));
            std::fs::write(&path, out)?;
            Ok(path)
        };
        written.push(dump_csr("stiffness", &self.stiffness)?);
        written.push(dump_csr("mass", &self.mass)?);
        let mut out = textio::header(&[
            ("kind", "matrix lumped".to_string()),
            ("rows", self.lumped.len().to_string()),
            ("format", "index value".to_string()),
        ]);
        for (i, &v) in self.lumped.iter().enumerate() {
            out.push_str(&format!("{i} {}\n", textio::full(v)));
        }
        let path = dir.join("lumped.txt");
        std::fs::write(&path, out)?;
        written.push(path);
        Ok(written)
    }

    /// Visits every quadrature point of every element with the free-node
    /// local indices and barycentric weights; the integration backbone for
    /// the norm routines.
    pub(crate) fn for_each_element_quad(
        &self,
        mut f: impl FnMut(&[Option<usize>; 3], f64, [f64; 3], f64),
    ) {
        for k in 0..self.mesh.n_elems() {
            let e = self.mesh.elem(k);
            let pts = self.mesh.elem_pts(k);
            let (_, area) = tri_grads(&pts);
            let local = [
                self.mesh.interior_index(e[0]),
                self.mesh.interior_index(e[1]),
                self.mesh.interior_index(e[2]),
            ];
            quadrature::for_each_point_bary(&pts, area, self.quad, |_x, _y, w, lam| {
                f(&local, w, lam, area);
            });
        }
    }

    /// Visits every element with its free-node local indices, basis
    /// gradients, and area.
    pub(crate) fn for_each_element(
        &self,
        mut f: impl FnMut(&[Option<usize>; 3], &[[f64; 2]; 3], f64),
    ) {
        for k in 0..self.mesh.n_elems() {
            let e = self.mesh.elem(k);
            let (g, area) = tri_grads(&self.mesh.elem_pts(k));
            let local = [
                self.mesh.interior_index(e[0]),
                self.mesh.interior_index(e[1]),
                self.mesh.interior_index(e[2]),
            ];
            f(&local, &g, area);
        }
    }
}

/// Uniform-grid point locator over element bounding boxes.
struct Locator {
    lo: [f64; 2],
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
    tol: f64,
}

impl Locator {
    fn build(mesh: &Triangulation) -> Self {
        let (lo, hi) = mesh.bounding_box();
        let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(f64::MIN_POSITIVE);
        // Aim for a few elements per bucket.
        let target = (mesh.n_elems() as f64).sqrt().ceil().max(1.0);
        let cell = (extent / target).max(1e-12 * extent);
        let nx = (((hi[0] - lo[0]) / cell).ceil() as usize).max(1);
        let ny = (((hi[1] - lo[1]) / cell).ceil() as usize).max(1);
        let mut buckets = vec![Vec::new(); nx * ny];
        let clampi = |v: f64, n: usize| -> usize { (v.max(0.0) as usize).min(n - 1) };
        for k in 0..mesh.n_elems() {
            let p = mesh.elem_pts(k);
            let bx0 = p[0][0].min(p[1][0]).min(p[2][0]);
            let bx1 = p[0][0].max(p[1][0]).max(p[2][0]);
            let by0 = p[0][1].min(p[1][1]).min(p[2][1]);
            let by1 = p[0][1].max(p[1][1]).max(p[2][1]);
            let i0 = clampi((bx0 - lo[0]) / cell, nx);
            let i1 = clampi((bx1 - lo[0]) / cell, nx);
            let j0 = clampi((by0 - lo[1]) / cell, ny);
            let j1 = clampi((by1 - lo[1]) / cell, ny);
            for i in i0..=i1 {
                for j in j0..=j1 {
                    buckets[j * nx + i].push(k);
                }
            }
        }
        Locator {
            lo: [lo[0], lo[1]],
            cell,
            nx,
            ny,
            buckets,
            tol: 1e-12 * extent,
        }
    }

    fn locate(&self, mesh: &Triangulation, x: f64, y: f64) -> Option<(usize, [f64; 3])> {
        let clampi = |v: f64, n: usize| -> usize { (v.max(0.0) as usize).min(n - 1) };
        let i = clampi((x - self.lo[0]) / self.cell, self.nx);
        let j = clampi((y - self.lo[1]) / self.cell, self.ny);
        for &k in &self.buckets[j * self.nx + i] {
            let p = mesh.elem_pts(k);
            let area2 = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
                - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0]);
            let l0 = ((p[1][0] - x) * (p[2][1] - y) - (p[1][1] - y) * (p[2][0] - x))
                / area2;
            let l1 = ((p[2][0] - x) * (p[0][1] - y) - (p[2][1] - y) * (p[0][0] - x))
                / area2;
            let l2 = 1.0 - l0 - l1;
            let slack = self.tol / area2.abs().sqrt().max(self.tol);
            if l0 >= -slack && l1 >= -slack && l2 >= -slack {
                return Some((k, [l0, l1, l2]));
            }
        }
        None
    }
}
