//! Numerical tolerances and capability limits, centralized so every module
//! draws the same constants and each value carries its justification.

/// Relative tolerance for geometric sign decisions (acuteness of stiffness
/// off-diagonals, degenerate-element detection, point location).
///
/// Assembled stiffness entries are short sums of products of coordinates, so
/// their relative rounding error is a small multiple of machine epsilon
/// (~2.2e-16). A factor of ~2e3 above epsilon absorbs cancellation in nearly
/// right-angled elements without masking genuine obtuse pairs, whose positive
/// entries are O(1) multiples of the entry scale.
pub const GEOM_REL: f64 = 1e-12;

/// Largest number of unknowns factorized with the sparse direct solver.
///
/// A 2-D P1 Cholesky factor for n unknowns costs O(n^{3/2}) flops and fill;
/// at 20 000 unknowns the factorization stays well below a second and under
/// ~100 MB, while iterative fallback above this size keeps memory bounded.
pub const DIRECT_SOLVE_MAX_DOFS: usize = 20_000;

/// Relative residual target for the conjugate-gradient fallback solver.
///
/// 1e-12 leaves solver error two orders of magnitude below the tightest
/// identity checks performed downstream (1e-10 relative).
pub const CG_REL_RESIDUAL: f64 = 1e-12;

/// Iteration cap for conjugate gradients. With Jacobi preconditioning the
/// stiffness systems solved here need O(sqrt(cond)) ~ hundreds of iterations;
/// 20 000 marks clear non-convergence rather than a tight budget.
pub const CG_MAX_ITERS: usize = 20_000;

/// Largest number of unknowns accepted by the dense generalized
/// eigendecomposition. Dense symmetric eigensolves cost O(n^3); 5 000
/// unknowns complete in seconds, which covers every structured mesh the
/// spectral diagnostics run on (up to 64x64 cells = 3 969 unknowns).
pub const DENSE_EIG_LIMIT: usize = 5_000;

/// Relative residual bound used to validate each computed eigenpair,
/// measured as |S v - lambda D v| / (|S v| + lambda |D v|).
///
/// Backward-stable dense eigensolvers deliver ~1e-15 here; 1e-10 flags a
/// broken decomposition without tripping on rounding.
pub const EIG_RESIDUAL_REL: f64 = 1e-10;

/// Number of geometric panels for the contour-integral fractional power.
///
/// With 4-point Gauss-Legendre per panel on a geometrically graded grid the
/// quadrature error decays exponentially in the panel count; 50 panels push
/// it below 1e-9 for exponents in (-1, 0) on the spectral windows that occur
/// here, comfortably inside the 1e-6 cross-validation target.
pub const FRAC_QUAD_PANELS: usize = 50;

/// Gauss-Legendre points per panel of the fractional-power quadrature.
pub const FRAC_QUAD_NODES: usize = 4;

/// Padding factor for the fractional-power integration window: the grid
/// spans [lambda_min / PAD, lambda_max * PAD]. A factor 100 makes the
/// truncated tails small enough that the analytic three-term tail
/// corrections bound the remainder near (1/PAD)^3.5 ~ 1e-7 of the result.
pub const FRAC_QUAD_PAD: f64 = 100.0;

/// Terms kept in each analytic tail correction of the fractional-power
/// quadrature. Three terms leave a remainder of order PAD^{-(3+1/2)} for the
/// half powers exercised most, below the quadrature error itself.
pub const FRAC_TAIL_TERMS: usize = 3;

/// Iterations of (deterministic, all-ones start) inverse power iteration
/// used to bracket the smallest generalized eigenvalue when no
/// eigendecomposition is available. Convergence is geometric with ratio
/// lambda_1/lambda_2 < 1/2 on these meshes, so 60 iterations give ~1e-9
/// relative accuracy; the bracket is widened by [`FRAC_QUAD_PAD`] anyway.
pub const POWER_ITERS: usize = 60;

/// Per-entry slack accepted in nonnegativity checks, relative to the data
/// scale. Exact nonnegativity survives rounding only up to a few ulps of the
/// intermediate sums; 1e-12 of the scale is far above that yet far below any
/// genuine sign violation produced by an obtuse pair.
pub const POSITIVITY_REL_SLACK: f64 = 1e-12;

/// Multiplicative slack (1 + this) for sharp-constant inequality checks
/// whose constant is exactly 1, absorbing quadrature and solver rounding.
pub const SHARP_CONSTANT_SLACK: f64 = 1e-7;

/// Relative floating-point slack when comparing a requested time step
/// against the stability bound, so a step computed by the same formula as
/// the bound itself compares as admissible.
pub const STABILITY_CMP_SLACK: f64 = 1e-12;
