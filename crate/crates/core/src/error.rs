//! Error type shared by every module of the crate.

use thiserror::Error;

/// Unified error type for mesh handling, assembly, solvers, and diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied parameter is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A mesh failed structural or geometric validation.
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    /// A mesh or state file could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse {
        /// 1-based line number in the offending file.
        line: usize,
        /// Description of what was expected.
        msg: String,
    },

    /// Discrete data was combined with a mesh it does not belong to.
    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),

    /// A linear solve did not converge or the factorization failed.
    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    /// The request exceeds a documented capability limit.
    #[error("capability exceeded: {0}")]
    Capability(String),

    /// The time step violates the conditional stability bound.
    #[error("time step {tau:.6e} exceeds the stability bound tau_max = {tau_max:.6e}; \
             reduce the step or force the run")]
    Stability {
        /// Requested step size.
        tau: f64,
        /// Largest admissible step size for the given scheme and mesh.
        tau_max: f64,
    },

    /// The iteration produced a non-finite value.
    #[error("solution became non-finite at step {step}")]
    Overflow {
        /// Index of the first step with a non-finite entry.
        step: usize,
    },

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Convenience constructor for [`Error::InvalidArgument`].
    pub fn invalid_argument(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Convenience constructor for [`Error::InvalidMesh`].
    pub fn invalid_mesh(msg: impl Into<String>) -> Self {
        Error::InvalidMesh(msg.into())
    }
}
