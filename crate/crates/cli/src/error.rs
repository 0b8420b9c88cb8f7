use std::fmt;

/// Process exit codes: 0 pass, 1 check failure, 2 configuration error, 3 divergence.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Check(String),
    Config(String),
    Divergence { seed: u64, step: usize, what: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => 1,
            CliError::Config(_) => 2,
            CliError::Divergence { .. } => 3,
        }
    }

    pub(crate) fn from_core(err: o2n_core::Error, seed: u64) -> Self {
        match err {
            o2n_core::Error::Divergence { step, what } => CliError::Divergence { seed, step, what },
            other => CliError::Config(other.to_string()),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Check(m) => write!(f, "check failed: {m}"),
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Divergence { seed, step, what } => write!(f, "divergence in seed {seed} at step {step}: {what}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<o2n_core::Error> for CliError {
    fn from(e: o2n_core::Error) -> Self {
        match e {
            o2n_core::Error::Divergence { step, what } => CliError::Divergence { seed: 0, step, what },
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("i/o: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(format!("json: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Config(format!("csv: {e}"))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
