use std::path::PathBuf;

use thiserror::Error;
use vcplan_numerics::NumericsError;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("validation error in field `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("training diverged: {0}")]
    Training(String),
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<CoreError>,
    },
    #[error("scenario {id}: {source}")]
    Scenario {
        id: String,
        #[source]
        source: Box<CoreError>,
    },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CoreError {
    /// Innermost error beneath step and scenario context.
    pub fn root(&self) -> &CoreError {
        match self {
            Self::Step { source, .. } | Self::Scenario { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn at_step(step: usize, e: CoreError) -> Self {
        Self::Step {
            step,
            source: Box::new(e),
        }
    }

    pub(crate) fn in_scenario(id: &str, e: CoreError) -> Self {
        Self::Scenario {
            id: id.to_string(),
            source: Box::new(e),
        }
    }

    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
