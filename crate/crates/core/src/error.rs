use thiserror::Error;

use crate::reml::FittedModel;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("malformed input at line {line}: {message}")]
    MalformedInput { line: usize, message: String },

    #[error("non-identifiable design: {0}")]
    NonIdentifiable(String),

    #[error("covariance block for study {study} is not positive definite")]
    Factorization { study: usize },

    /// The optimizer ran out of iterations. `best` is the best state reached.
    #[error("REML optimization did not converge after {iterations} iterations")]
    NotConverged {
        iterations: usize,
        best: Box<FittedModel>,
    },

    #[error("Satterthwaite degrees of freedom undefined: {0}")]
    DfUndefined(String),

    #[error("Kenward-Roger adjusted variance is not positive ({0})")]
    AdjustmentFailed(f64),

    #[error("{failed} of {total} permutation refits failed (limit 5%)")]
    UnreliablePermutation { failed: usize, total: usize },

    #[error("{failed} of {total} simulation replicates failed (limit 10%)")]
    ScenarioFailed { failed: usize, total: usize },

    #[error("permutation distribution is empty")]
    NoDraws,

    #[error("no grid point in [{from}, {to}] rejected for the {side} bound")]
    OpenEndpoint {
        side: &'static str,
        from: f64,
        to: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit status used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 1,
            Error::MalformedInput { .. } | Error::InvalidDataset(_) => 3,
            Error::NonIdentifiable(_) | Error::Factorization { .. } => 4,
            Error::UnreliablePermutation { .. }
            | Error::NoDraws
            | Error::OpenEndpoint { .. }
            | Error::ScenarioFailed { .. } => 5,
            Error::NotConverged { .. } | Error::DfUndefined(_) | Error::AdjustmentFailed(_) => 6,
            Error::InvalidArgument(_) | Error::Config(_) => 7,
        }
    }
}
