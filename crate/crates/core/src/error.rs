use std::path::PathBuf;

use numcore::NumError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CapamError {
    #[error("invalid instance: {0}")]
    Validation(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("policy error: {0}")]
    Policy(String),
    #[error("no feasible action")]
    NoFeasibleAction,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("refusing oversized problem: {0}")]
    SizeGuard(String),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("{}: parse error at line {line}, column {column}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Num(NumError),
}

impl From<NumError> for CapamError {
    fn from(e: NumError) -> Self {
        match e {
            NumError::NoFeasibleAction => CapamError::NoFeasibleAction,
            other => CapamError::Num(other),
        }
    }
}

pub type Result<T, E = CapamError> = std::result::Result<T, E>;
