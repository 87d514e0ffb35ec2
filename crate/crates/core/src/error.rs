//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("source kind mismatch: expected {expected}, got {got}")]
    SourceMismatch { expected: &'static str, got: &'static str },

    #[error("degenerate model: {0}")]
    Degenerate(String),

    #[error("negative probability {value} at outcome {index}")]
    NegativeProbability { index: usize, value: f64 },

    #[error("matrix is not {0}")]
    MatrixStructure(&'static str),

    #[error("rank-deficient matrix: effective rank {rank} of {dim}")]
    RankDeficient { rank: usize, dim: usize },

    #[error("bias gradient too steep: gamma = {gamma} >= 1")]
    GammaOutOfRange { gamma: f64 },

    #[error("window plan error: {0}")]
    WindowPlan(String),

    #[error("no pixel size in [{lo}, {hi}] um passes the dominance threshold")]
    NoDominantPixelSize { lo: f64, hi: f64 },

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("io format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
