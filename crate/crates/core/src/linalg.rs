//! Sparse symmetric linear algebra: a compact CSR matrix, a scalar
//! abstraction over real and complex entries, and a positive-definite solver
//! that picks a sparse direct factorization for moderate sizes and falls
//! back to Jacobi-preconditioned conjugate gradients above
//! [`crate::tolerances::DIRECT_SOLVE_MAX_DOFS`].

use faer::linalg::solvers::Solve as _;
use faer::sparse::{SparseColMat, Triplet};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tolerances;

/// Entry type for vectors multiplied against real sparse matrices.
pub trait Scalar:
    Copy
    + Send
    + Sync
    + std::fmt::Debug
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::ops::SubAssign
    + 'static
{
    /// Additive identity.
    const ZERO: Self;
    /// Embeds a real number.
    fn from_real(x: f64) -> Self;
    /// Multiplies by a real coefficient.
    fn scale(self, c: f64) -> Self;
    /// Modulus |z|.
    fn modulus(self) -> f64;
    /// Squared modulus |z|^2, without the square root.
    fn modulus_sq(self) -> f64;
    /// Real part of `self * conj(other)`; the real inner-product kernel.
    fn dot(self, other: Self) -> f64;
    /// True if the value is finite (both components for complex numbers).
    fn is_finite_scalar(self) -> bool;
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    fn from_real(x: f64) -> Self {
        x
    }
    fn scale(self, c: f64) -> Self {
        self * c
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
    fn modulus_sq(self) -> f64 {
        self * self
    }
    fn dot(self, other: Self) -> f64 {
        self * other
    }
    fn is_finite_scalar(self) -> bool {
        self.is_finite()
    }
}

impl Scalar for Complex64 {
    const ZERO: Self = Complex64::new(0.0, 0.0);
    fn from_real(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn scale(self, c: f64) -> Self {
        Complex64::new(self.re * c, self.im * c)
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
    fn modulus_sq(self) -> f64 {
        self.norm_sqr()
    }
    fn dot(self, other: Self) -> f64 {
        self.re * other.re + self.im * other.im
    }
    fn is_finite_scalar(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

/// Compressed sparse row matrix with real entries.
#[derive(Debug, Clone)]
pub struct Csr {
    nrows: usize,
    ncols: usize,
    rowptr: Vec<usize>,
    colidx: Vec<usize>,
    vals: Vec<f64>,
}

impl Csr {
    /// Builds a CSR matrix from (row, col, value) triplets, summing
    /// duplicates. Triplet order does not affect the result pattern; values
    /// at a duplicate position are summed in the order given.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        for &(i, j, _) in triplets {
            if i >= nrows || j >= ncols {
                return Err(Error::invalid_argument(format!(
                    "triplet ({i}, {j}) outside {nrows} x {ncols} matrix"
                )));
            }
        }
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&k| (triplets[k].0, triplets[k].1));
        let mut rowptr = vec![0usize; nrows + 1];
        let mut colidx = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for &k in &order {
            let (i, j, v) = triplets[k];
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                rowptr[i + 1] += 1;
                colidx.push(j);
                vals.push(v);
                last = Some((i, j));
            }
        }
        for i in 0..nrows {
            rowptr[i + 1] += rowptr[i];
        }
        Ok(Csr {
            nrows,
            ncols,
            rowptr,
            colidx,
            vals,
        })
    }

    /// Number of rows.
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    /// Number of columns.
    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// Number of stored entries.
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.rowptr[i];
        let hi = self.rowptr[i + 1];
        (&self.colidx[lo..hi], &self.vals[lo..hi])
    }

    /// Entry (i, j), zero if not stored.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Largest entry magnitude (zero for an empty matrix).
    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// The diagonal as a vector (missing diagonal entries read as zero).
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols))
            .map(|i| self.get(i, i))
            .collect()
    }

    /// Matrix-vector product `A x` for real or complex `x`.
    pub fn matvec<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.ncols, "matvec dimension mismatch");
        let mut y = vec![T::ZERO; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    /// Matrix-vector product writing into a caller-provided buffer.
    pub fn matvec_into<T: Scalar>(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.ncols, "matvec dimension mismatch");
        assert_eq!(y.len(), self.nrows, "matvec output mismatch");
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut acc = T::ZERO;
            for (&j, &v) in cols.iter().zip(vals) {
                acc += x[j].scale(v);
            }
            y[i] = acc;
        }
    }

    /// Returns `alpha * self + diag(d)` (square matrices only). The result
    /// pattern is the union of the input pattern and the full diagonal.
    pub fn scaled_plus_diag(&self, alpha: f64, d: &[f64]) -> Result<Self> {
        if self.nrows != self.ncols || d.len() != self.nrows {
            return Err(Error::invalid_argument(
                "scaled_plus_diag needs a square matrix and a matching diagonal",
            ));
        }
        let mut triplets = Vec::with_capacity(self.nnz() + self.nrows);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                triplets.push((i, j, alpha * v));
            }
            triplets.push((i, i, d[i]));
        }
        Csr::from_triplets(self.nrows, self.ncols, &triplets)
    }

    /// Converts to a faer sparse column matrix.
    pub fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let mut triplets = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                triplets.push(Triplet::new(i, j, v));
            }
        }
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &triplets)
            .map_err(|e| Error::LinearSolve(format!("sparse conversion failed: {e:?}")))
    }

    /// Maximum symmetry defect `max |A_ij - A_ji|` (square matrices).
    pub fn symmetry_defect(&self) -> f64 {
        let mut d = 0.0f64;
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                d = d.max((v - self.get(j, i)).abs());
            }
        }
        d
    }
}

/// Strategy used by [`SpdSolver`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStrategy {
    /// Sparse Cholesky factorization (exact up to rounding).
    Direct,
    /// Jacobi-preconditioned conjugate gradients.
    ConjugateGradient,
}

enum SolverImpl {
    Direct(faer::sparse::linalg::solvers::Llt<usize, f64>),
    Cg { a: Csr, inv_diag: Vec<f64> },
}

/// Solver for symmetric positive definite systems. Construction picks the
/// strategy from the system size; both paths solve to at least
/// [`tolerances::CG_REL_RESIDUAL`] relative accuracy.
pub struct SpdSolver {
    n: usize,
    imp: SolverImpl,
}

impl SpdSolver {
    /// Builds a solver, choosing the direct factorization for systems of at
    /// most [`tolerances::DIRECT_SOLVE_MAX_DOFS`] unknowns.
    pub fn new(a: &Csr) -> Result<Self> {
        let strategy = if a.nrows() <= tolerances::DIRECT_SOLVE_MAX_DOFS {
            SolveStrategy::Direct
        } else {
            SolveStrategy::ConjugateGradient
        };
        Self::with_strategy(a, strategy)
    }

    /// Builds a solver with an explicit strategy.
    pub fn with_strategy(a: &Csr, strategy: SolveStrategy) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::invalid_argument("solver needs a square matrix"));
        }
        let n = a.nrows();
        let imp = match strategy {
            SolveStrategy::Direct => {
                let f = a.to_faer()?;
                let chol = f.sp_cholesky(faer::Side::Lower).map_err(|e| {
                    Error::LinearSolve(format!("Cholesky factorization failed: {e:?}"))
                })?;
                SolverImpl::Direct(chol)
            }
            SolveStrategy::ConjugateGradient => {
                let diag = a.diagonal();
                if diag.iter().any(|&d| d <= 0.0) {
                    return Err(Error::LinearSolve(
                        "nonpositive diagonal entry in SPD system".into(),
                    ));
                }
                let inv_diag = diag.iter().map(|d| 1.0 / d).collect();
                SolverImpl::Cg { a: a.clone(), inv_diag }
            }
        };
        Ok(SpdSolver { n, imp })
    }

    /// Strategy in use.
    pub fn strategy(&self) -> SolveStrategy {
        match self.imp {
            SolverImpl::Direct(_) => SolveStrategy::Direct,
            SolverImpl::Cg { .. } => SolveStrategy::ConjugateGradient,
        }
    }

    /// System size.
    pub fn len(&self) -> usize {
        self.n
    }

    /// True for the empty system.
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(Error::invalid_argument(format!(
                "right-hand side length {} does not match system size {}",
                b.len(),
                self.n
            )));
        }
        match &self.imp {
            SolverImpl::Direct(chol) => {
                let rhs = faer::Mat::from_fn(self.n, 1, |i, _| b[i]);
                let x = chol.solve(&rhs);
                Ok((0..self.n).map(|i| x[(i, 0)]).collect())
            }
            SolverImpl::Cg { a, inv_diag } => {
                let (x, _iters) = conjugate_gradient(
                    a,
                    inv_diag,
                    b,
                    tolerances::CG_REL_RESIDUAL,
                    tolerances::CG_MAX_ITERS,
                )?;
                Ok(x)
            }
        }
    }

    /// Solves `A x = b` for complex `b` by solving real and imaginary parts.
    pub fn solve_complex(&self, b: &[Complex64]) -> Result<Vec<Complex64>> {
        let re: Vec<f64> = b.iter().map(|z| z.re).collect();
        let im: Vec<f64> = b.iter().map(|z| z.im).collect();
        let xr = self.solve(&re)?;
        let xi = self.solve(&im)?;
        Ok(xr
            .into_iter()
            .zip(xi)
            .map(|(r, i)| Complex64::new(r, i))
            .collect())
    }
}

/// Jacobi-preconditioned conjugate gradients for SPD systems. Returns the
/// solution and the iteration count. Deterministic: no randomization, fixed
/// order of operations.
pub fn conjugate_gradient(
    a: &Csr,
    inv_diag: &[f64],
    b: &[f64],
    rel_tol: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, usize)> {
    let n = b.len();
    let norm_b = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm_b == 0.0 {
        return Ok((vec![0.0; n], 0));
    }
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    for iter in 0..max_iters {
        a.matvec_into(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::LinearSolve(
                "conjugate gradients hit a nonpositive curvature direction".into(),
            ));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let norm_r = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm_r <= rel_tol * norm_b {
            return Ok((x, iter + 1));
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::LinearSolve(format!(
        "conjugate gradients did not reach {rel_tol:.1e} in {max_iters} iterations"
    )))
}
