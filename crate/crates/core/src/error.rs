use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid loss: {0}")]
    InvalidLoss(String),

    #[error("invalid population model: {0}")]
    InvalidModel(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("resolvent is not positive definite: {0}")]
    Resolvent(String),

    #[error("fixed-point solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
