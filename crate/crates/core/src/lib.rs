//! Mass-lumped P1 finite element toolkit for the heat equation on triangulated
//! polygonal domains.
//!
//! The library covers:
//!
//! - structured and file-based conforming triangulations with geometric
//!   quality statistics ([`mesh`]),
//! - stiffness, consistent-mass, and lumped-mass assembly plus the discrete
//!   operator calculus built on them ([`assembly`]),
//! - lumped and Lebesgue norms, gradient seminorms, and time-sequence norms
//!   ([`norms`]),
//! - theta-scheme time stepping with conditional-stability handling and a
//!   semi-implicit path for semilinear right-hand sides ([`stepper`]),
//! - spectral diagnostics: the generalized eigenvalue problem for the lumped
//!   discrete Laplacian, fractional and imaginary operator powers,
//!   numerical-range sampling, and scale-uniformity sweeps ([`spectral`]),
//! - manufactured-solution convergence studies with CSV report emission
//!   ([`experiments`]).
//!
//! All sampling routines take explicit seeds and are deterministic for a
//! fixed seed; no global RNG state is used anywhere.

pub mod assembly;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod mesh;
pub mod norms;
pub mod quadrature;
pub mod spectral;
pub mod stepper;
pub mod textio;
pub mod tolerances;

pub use error::{Error, Result};
pub use linalg::Scalar;

/// Crate version, recorded in every emitted file header.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Forces the dense linear-algebra backend into sequential mode. Front ends
/// that promise byte-identical output for identical inputs call this once at
/// startup; multi-threaded dense kernels can otherwise reorder floating-point
/// reductions between runs.
pub fn force_sequential_dense_algebra() {
    faer::set_global_parallelism(faer::Par::Seq);
}
