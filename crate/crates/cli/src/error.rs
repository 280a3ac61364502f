use ihc_core::pipeline::PipelineError;
use ihc_core::score::ScoreError;
use ihc_core::slideio::SlideError;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("{0}")]
    Input(String),
    #[error("{path}: {reason}")]
    Io { path: PathBuf, reason: String },
    /// The input is well formed but fails quality control.
    #[error("QC rejection: {0}")]
    Qc(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Qc(_) => 2,
            _ => 1,
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            reason: e.to_string(),
        }
    }

    pub fn input(e: impl std::fmt::Display) -> Self {
        CliError::Input(e.to_string())
    }
}

/// QC conditions are failures of the slide, not of the invocation.
pub fn qc_code(e: &PipelineError) -> Option<&'static str> {
    match e {
        PipelineError::Score(ScoreError::EmptySlide) => Some("EmptySlide"),
        PipelineError::Slide(SlideError::EmptyTissueMask) => Some("EmptyTissueMask"),
        _ => None,
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        if let Some(code) = qc_code(&e) {
            CliError::Qc(format!("{code}: {e}"))
        } else {
            CliError::Input(e.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
