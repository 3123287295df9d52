use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::csvlog::LogError;
use crate::pipeline::PipelineError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Log { path: PathBuf, source: LogError },
    #[error("{}: {message}", path.display())]
    Input { path: PathBuf, message: String },
    #[error("{}, cycle {cycle}: {source}", path.display())]
    Cycle {
        path: PathBuf,
        cycle: u32,
        source: PipelineError,
    },
    #[error("writing {}: {source}", path.display())]
    Write { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Config(String),
}

impl CliError {
    pub fn write(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Self {
        let path = path.into();
        move |source| Self::Write { path, source }
    }
}

/// How a successful run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Complete,
    /// Some cycles never reached the detection threshold.
    Unassessable,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Self::Complete => 0,
            Self::Unassessable => 2,
        }
    }
}
