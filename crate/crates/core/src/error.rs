use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("matrix is not symplectic (max deviation {0:.3e})")]
    NotSymplectic(f64),
    #[error("channel is not completely positive (min eigenvalue {0:.3e})")]
    NotCompletelyPositive(f64),
    #[error("covariance violates the uncertainty relation (min eigenvalue {0:.3e})")]
    Unphysical(f64),
    #[error("degenerate marginal variance {0:.3e}")]
    DegenerateVariance(f64),
    #[error("state is not pure (det(2V) = {0})")]
    NotPure(f64),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("truncation leakage {leakage:.3e} exceeds budget {budget:.3e}")]
    Leakage { leakage: f64, budget: f64 },
    #[error("basis size {size} exceeds the cap of {cap} states")]
    TooLarge { size: usize, cap: usize },
    #[error("bound undefined: {0}")]
    Domain(String),
    #[error("prover exhausted: {0}")]
    ProverExhausted(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
