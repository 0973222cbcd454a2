use thiserror::Error;

use crate::estimator::FittedCell;

pub type Result<T> = std::result::Result<T, Error>;

/// Error categories shared by all modules.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Data are malformed, degenerate or inconsistent.
    #[error("input error: {0}")]
    Input(String),
    /// The optimizer did not converge; carries the best point found.
    #[error("convergence failure: {message}")]
    Convergence {
        message: String,
        best: Option<Box<FittedCell>>,
    },
    /// The sensitivity parameter lies below the admissible floor.
    #[error("alpha {alpha} is infeasible: binding ratio is {ratio}")]
    InfeasibleAlpha { alpha: f64, ratio: f64 },
    /// A numerical invariant was violated.
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    /// Short category tag used by the command-line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Domain(_) | Error::Input(_) => "input",
            Error::Convergence { .. } => "convergence",
            Error::InfeasibleAlpha { .. } => "infeasible-alpha",
            Error::Internal(_) => "internal",
        }
    }
}
