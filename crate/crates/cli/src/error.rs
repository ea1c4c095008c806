use std::process::ExitCode;

use mn_core::contrastive::TrainError;
use mn_core::encoder::EncoderError;
use mn_core::eval::EvalError;
use mn_core::graph::GraphError;
use mn_core::io::IoError;
use thiserror::Error;

/// Failures grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config or request (exit 2).
    #[error("{0}")]
    Usage(String),
    /// Non-finite loss or failed gradient check (exit 3).
    #[error("{0}")]
    Numerical(String),
    /// Input files that are unreadable, malformed or incompatible (exit 4).
    #[error("{0}")]
    Artifact(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Artifact(_) => 4,
        })
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Spec(_) => CliError::Usage(e.to_string()),
            _ => CliError::Artifact(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::Encoder(EncoderError::Config(_)) => CliError::Usage(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<EncoderError> for CliError {
    fn from(e: EncoderError) -> Self {
        match e {
            EncoderError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Artifact(e.to_string()),
        }
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Length(..) => CliError::Artifact(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}
