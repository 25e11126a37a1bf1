//! Batch plumbing: datasets, run configuration, resumable debate runs,
//! aggregation over stored transcripts, metrics, simulation and reports.

pub mod config;
pub mod dataset;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod run;
pub mod simulate;

pub use config::RunConfig;
pub use dataset::{load_dataset, parse_dataset};
pub use metrics::{compute_metrics, score_answer, MetricsReport};
pub use pipeline::{aggregate_transcripts, AggregationOptions, AggregationResult, Aggregator, FittedModelFile};
pub use run::{load_transcripts, run_batch, transcript_path, RunOptions, RunSummary};
pub use simulate::{run_simulation, sample_batch, SimulationConfig, SimulationReport};

use crate::aggregate::AggregateError;
use crate::model::ModelError;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("judge: {0}")]
    Judge(String),
}

impl HarnessError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    /// Errors the CLI reports with the config-error exit status.
    pub fn is_config(&self) -> bool {
        matches!(self, Self::Config(_) | Self::Dataset { .. })
    }
}
