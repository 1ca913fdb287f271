use thiserror::Error;

/// Errors raised by the model, solvers and evaluators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("infeasible transition: b={b} x={x} y={y} e={e}")]
    InfeasibleTransition { b: usize, x: usize, y: usize, e: usize },

    #[error("no feasible purchase for b={b} x={x} e={e}")]
    NoFeasibleAction { b: usize, x: usize, e: usize },

    #[error("observation y={y} e={e} has zero predictive probability")]
    ZeroProbabilityObservation { y: usize, e: usize },

    #[error("value iteration did not converge after {iterations} iterations (span {span:e})")]
    NonConvergence { iterations: usize, span: f64 },

    #[error("horizon {horizon} needs more than {budget} tree nodes")]
    HorizonTooLarge { horizon: usize, budget: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("renewable process never recharges (p_e = 0)")]
    DegenerateProcess,

    #[error("malformed table: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code: 1 usage/IO, 2 numerical, 3 budget.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonConvergence { .. }
            | Error::ZeroProbabilityObservation { .. }
            | Error::InfeasibleTransition { .. }
            | Error::NoFeasibleAction { .. }
            | Error::DegenerateProcess
            | Error::Domain(_) => 2,
            Error::HorizonTooLarge { .. } => 3,
            Error::InvalidConfig(_) | Error::Format(_) | Error::Io(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
