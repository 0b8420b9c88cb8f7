use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("index {index} out of range 1..={len}")]
    Range { index: usize, len: usize },

    #[error("numerical divergence at step {step}: {what}")]
    Divergence { step: usize, what: String },

    #[error("parameter regime violated: {0}")]
    Regime(String),

    #[error("gradient norm {norm} exceeds Lipschitz constant {bound} for problem `{problem}`")]
    Lipschitz { problem: String, norm: f64, bound: f64 },

    #[error("invalid problem description: {0}")]
    ProblemSpec(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
