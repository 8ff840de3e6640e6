//! One error type per failure family, mapped onto the exit codes the
//! binary promises: 2 for configuration and malformed inputs, 3 for
//! stream-ordering violations, 4 for plain I/O failures.

use toxbuster_core::corpus::CorpusError;
use toxbuster_core::data::{CivilCommentsError, DotaError, SynthError};
use toxbuster_core::model::{CheckpointError, PredictError, TrainError};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Stream(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Stream(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn io(context: &str, err: std::io::Error) -> CliError {
        CliError::Io(format!("{context}: {err}"))
    }
}

impl From<CorpusError> for CliError {
    fn from(err: CorpusError) -> Self {
        match err {
            CorpusError::Io(e) => CliError::Io(format!("corpus: {e}")),
            other => CliError::Config(format!("corpus: {other}")),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(err: CheckpointError) -> Self {
        match err {
            CheckpointError::Io(e) => CliError::Io(format!("checkpoint: {e}")),
            other => CliError::Config(format!("checkpoint: {other}")),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(err: TrainError) -> Self {
        CliError::Config(format!("train: {err}"))
    }
}

impl From<PredictError> for CliError {
    fn from(err: PredictError) -> Self {
        CliError::Config(format!("predict: {err}"))
    }
}

impl From<DotaError> for CliError {
    fn from(err: DotaError) -> Self {
        match err {
            DotaError::Io(e) => CliError::Io(format!("dota input: {e}")),
            other => CliError::Config(format!("dota input: {other}")),
        }
    }
}

impl From<CivilCommentsError> for CliError {
    fn from(err: CivilCommentsError) -> Self {
        CliError::Config(format!("comments input: {err}"))
    }
}

impl From<SynthError> for CliError {
    fn from(err: SynthError) -> Self {
        CliError::Config(format!("synthetic corpus: {err}"))
    }
}
