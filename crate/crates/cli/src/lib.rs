//! Staged, resumable ECG anomaly-detection experiments on top of
//! `ecgres-core`.

pub mod config;
pub mod error;
pub mod manifest;
pub mod stages;
pub mod standalone;

pub use config::ExperimentConfig;
pub use error::{PipelineError, Result};
pub use manifest::Manifest;
pub use stages::{Pipeline, Stage, Status};
