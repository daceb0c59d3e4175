use std::fmt;
use std::path::Path;

use molevers::chemio::{CsvError, SmilesError, XyzError};
use molevers::config::ConfigError;
use molevers::encoder::ModelError;
use molevers::evalbench::EvalError;
use molevers::ranklab::RankError;
use molevers::training::{CheckpointError, TrainError};

pub const EXIT_FORMAT: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;
pub const EXIT_SHAPE: u8 = 5;

/// A message plus the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub msg: String,
}

impl CliError {
    pub fn new(code: u8, msg: impl Into<String>) -> Self {
        Self {
            code,
            msg: msg.into(),
        }
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Self::new(EXIT_FORMAT, msg)
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Self::new(EXIT_SHAPE, msg)
    }

    /// Prefixes the message with a file path.
    pub fn at(mut self, path: &Path) -> Self {
        self.msg = format!("{}: {}", path.display(), self.msg);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(EXIT_IO, e.to_string())
    }
}

impl From<SmilesError> for CliError {
    fn from(e: SmilesError) -> Self {
        Self::format(format!("col {}: {e}", e.index() + 1))
    }
}

impl From<XyzError> for CliError {
    fn from(e: XyzError) -> Self {
        Self::format(e.to_string())
    }
}

impl From<CsvError> for CliError {
    fn from(e: CsvError) -> Self {
        match e {
            CsvError::ParseError { line, source } => {
                Self::format(format!("line {line}, col {}: {source}", source.index() + 1))
            }
            e => Self::format(e.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        let code = match e {
            ConfigError::Io(_) | ConfigError::MissingPath(_) => EXIT_IO,
            ConfigError::Syntax { .. } | ConfigError::Invalid { .. } => EXIT_FORMAT,
        };
        Self::new(code, e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        let code = match e {
            CheckpointError::Io(_) => EXIT_IO,
            CheckpointError::ShapeMismatch { .. }
            | CheckpointError::UnknownParam(_)
            | CheckpointError::MissingParam(_)
            | CheckpointError::ConfigMismatch => EXIT_SHAPE,
            CheckpointError::NonFinite(_) => EXIT_NUMERIC,
            _ => EXIT_FORMAT,
        };
        Self::new(code, format!("checkpoint: {e}"))
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let code = match e {
            ModelError::NonFiniteCoordinate(_) => EXIT_NUMERIC,
            ModelError::Empty => EXIT_FORMAT,
            _ => EXIT_SHAPE,
        };
        Self::new(code, e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::NonFiniteLoss { step, sigma } => {
                let msg = match sigma {
                    Some(s) => format!("non-finite loss at step {step}, sigma = {s}"),
                    None => format!("non-finite loss at step {step}"),
                };
                Self::new(EXIT_NUMERIC, msg)
            }
            TrainError::LengthMismatch { .. } => Self::shape(e.to_string()),
            e => Self::format(e.to_string()),
        }
    }
}

impl From<RankError> for CliError {
    fn from(e: RankError) -> Self {
        Self::format(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Train(t) => t.into(),
            EvalError::Rank(r) => r.into(),
            EvalError::Io(io) => io.into(),
            EvalError::Cell { assay, split, source } => {
                let inner: CliError = (*source).into();
                Self::new(inner.code, format!("assay '{assay}', split {split}: {}", inner.msg))
            }
            EvalError::TooFewMolecules(_) | EvalError::Format(_) => Self::format(e.to_string()),
            EvalError::LengthMismatch { .. } => Self::shape(e.to_string()),
            e => Self::new(EXIT_NUMERIC, e.to_string()),
        }
    }
}
