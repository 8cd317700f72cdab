use thiserror::Error;

/// Errors shared by every analysis in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A ReLU unit argument sits on (or numerically at) its kink, where the
    /// second derivative of the hypothesis does not exist.
    #[error("relu unit {unit} at kink (|a x + b| = {arg:.3e})")]
    AtKink { unit: usize, arg: f64 },

    /// Right-hand side of a Lyapunov solve has mass outside the range of the
    /// decay matrix, so no solution exists.
    #[error("inconsistent system: {0}")]
    Inconsistent(String),

    #[error("parameters diverged at step {step} (|theta| = {norm:.3e})")]
    Diverged { step: u64, norm: f64 },

    #[error("no zero-error point reached in {budget} iterations (best max residual {best:.3e})")]
    NotConverged { budget: u64, best: f64 },

    #[error("not a zero-error point: max residual {max_residual:.3e} > {tol:.3e}")]
    NotZeroError { max_residual: f64, tol: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("perturbation not applicable: {0}")]
    NotApplicable(String),
}

pub type Result<T> = std::result::Result<T, Error>;
