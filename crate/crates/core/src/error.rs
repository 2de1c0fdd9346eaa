use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular Jacobian with zero damping")]
    Singular,

    #[error("sample {sample}: IK tracking error {error:.3e} at step {step} exceeds {tolerance:.1e}")]
    Tracking {
        sample: usize,
        step: usize,
        error: f64,
        tolerance: f64,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    TrainingDiverged { epoch: usize },

    #[error("division by zero: {0}")]
    DivisionByZero(&'static str),

    #[error("weights are not a simplex point: {0}")]
    Simplex(String),

    #[error("{what} needs at least {min} samples, got {got}")]
    TooFewSamples {
        what: &'static str,
        min: usize,
        got: usize,
    },

    #[error("incompatible models: {0}")]
    Incompatible(String),

    #[error("{stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// Process exit code used by the CLI: 3 for data problems, 4 for
    /// numerical failures. Usage errors (2) are raised by the argument parser.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Singular
            | Error::Tracking { .. }
            | Error::TrainingDiverged { .. }
            | Error::DivisionByZero(_) => 4,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
