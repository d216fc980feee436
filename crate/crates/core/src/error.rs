use thiserror::Error;

/// Errors raised by the operators, factor generators and solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("adjoint unavailable")]
    AdjointUnavailable,

    #[error("operator does not provide {0}")]
    CapabilityUnavailable(&'static str),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not symmetric (relative defect {defect:.3e})")]
    NotSymmetric { defect: f64 },

    #[error("not PSD: eigenvalue {min_eigenvalue:.3e} below -{threshold:.3e}")]
    NotPsd { min_eigenvalue: f64, threshold: f64 },

    #[error("linear system is singular or ill-conditioned: {0}")]
    Singular(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("iteration {k}: {source}")]
    AtIteration {
        k: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
