//! Crate-wide error type.
//!
//! Contract violations (wrong vector lengths, negative Lipschitz radii)
//! panic via `assert!`; everything that can legitimately fail at run
//! time (solver breakdown, blow-up, non-convergence, infeasible
//! requests) comes back as an [`Error`].

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes of the solvers and constructors.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A constructor or solver was handed an invalid parameter.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An input field contained NaN or infinite entries.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// The semilinear blow-up guard tripped.
    #[error("state blow-up at step {step}: sup-norm {sup:.3e} exceeds guard {guard:.3e}")]
    BlowUp { step: usize, sup: f64, guard: f64 },

    /// A single time step could not be completed.
    #[error("time step {step} failed: {reason}")]
    StepFailure { step: usize, reason: String },

    /// An iterative solver ran out of its iteration budget.
    #[error("{what} did not converge within {iterations} iterations (best residual {best_residual:.3e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        best_residual: f64,
    },

    /// The requested steering problem is not solvable at the given tolerance.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// An operation that needs the dissipativity condition f(y)*y >= 0
    /// was given a nonlinearity without it, or observed it failing.
    #[error("sign condition f(y)*y >= 0 required: {0}")]
    SignCondition(String),

    /// File input/output failed.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// An exported artifact could not be parsed back.
    #[error("malformed artifact {path}: {reason}")]
    MalformedArtifact { path: String, reason: String },
}
