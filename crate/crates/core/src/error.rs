use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("not skew-symmetric")]
    NotSkew,
    #[error("not a rotation (|RᵀR - I| = {orth:e}, det = {det})")]
    NotRotation { orth: f64, det: f64 },
    #[error("degenerate rotation")]
    DegenerateRotation,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("thrust singularity: |f*| = {0:e}")]
    ThrustSingularity(f64),
    #[error("free-fall singularity: |a_des| = {0:e}")]
    FreeFallSingularity(f64),
    #[error("non-finite loss term `{term}` at sample {sample} (epoch {epoch})")]
    NonFiniteLoss { term: String, sample: usize, epoch: usize },
    #[error("non-finite control at step {step} (t = {t})")]
    NonFiniteControl { step: usize, t: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid weights file: {0}")]
    Weights(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
