use std::io;
use std::path::{Path, PathBuf};

use ecgres_core::dataset::DatasetError;
use ecgres_core::encoder::EncoderError;
use ecgres_core::eval::EvalError;
use ecgres_core::readout::ReadoutError;
use ecgres_core::simulator::SimError;
use ecgres_core::topology::TopologyError;
use ecgres_core::wfdb::WfdbError;
use thiserror::Error;

/// Error raised inside a module while a stage runs.
#[derive(Debug, Error)]
pub enum ModuleError {
    #[error(transparent)]
    Wfdb(#[from] WfdbError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Simulator(#[from] SimError),
    #[error(transparent)]
    Readout(#[from] ReadoutError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Format(String),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("stale artifact {}: manifest records {expected}, file hashes to {found}", path.display())]
    StaleArtifact { path: PathBuf, expected: String, found: String },
    #[error("missing artifact {} (run `{stage}` first)", path.display())]
    MissingArtifact { path: PathBuf, stage: String },
    #[error("stage {stage} failed: {source}")]
    StageFailure { stage: String, source: ModuleError },
}

impl PipelineError {
    /// Process exit code; each error class gets its own.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Io { .. } => 3,
            PipelineError::StaleArtifact { .. } => 4,
            PipelineError::MissingArtifact { .. } => 5,
            PipelineError::StageFailure { source, .. } => match source {
                ModuleError::Wfdb(_) => 10,
                ModuleError::Dataset(_) => 11,
                ModuleError::Encoder(_) => 12,
                ModuleError::Topology(_) => 13,
                ModuleError::Simulator(_) => 14,
                ModuleError::Readout(_) => 15,
                ModuleError::Eval(_) => 16,
                ModuleError::Format(_) => 17,
            },
        }
    }

    pub(crate) fn in_stage(self, stage: &str) -> Self {
        match self {
            PipelineError::StageFailure { stage: s, source } if s.is_empty() => PipelineError::StageFailure {
                stage: stage.to_string(),
                source,
            },
            e => e,
        }
    }
}

macro_rules! stage_failure_from {
    ($($t:ty),*) => {$(
        impl From<$t> for PipelineError {
            fn from(e: $t) -> Self {
                ModuleError::from(e).into()
            }
        }
    )*};
}

stage_failure_from!(WfdbError, DatasetError, EncoderError, TopologyError, SimError, ReadoutError, EvalError);

impl From<ModuleError> for PipelineError {
    fn from(source: ModuleError) -> Self {
        PipelineError::StageFailure {
            stage: String::new(),
            source,
        }
    }
}

pub(crate) fn io_at(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn format_err(msg: impl Into<String>) -> PipelineError {
    ModuleError::Format(msg.into()).into()
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;
