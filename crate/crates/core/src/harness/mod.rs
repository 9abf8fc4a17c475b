//! Experiment runner: picks training data per cross-lingual setting, trains
//! or loads a model, evaluates it under a fixed protocol and compares runs.

mod artifacts;
mod compare;
mod config;
mod experiment;
mod oversample;

use std::path::PathBuf;

use thiserror::Error;

pub use artifacts::{write_atomic, ArtifactManifest, Suggester, SuggestionLine, ARTIFACT_MANIFEST};
pub use compare::{compare, Cell, Column, ComparisonTable, TableRow, TABLE_METRICS};
pub use config::{
    ExperimentConfig, LanguageData, ModelKind, Protocol, Setting, TrainSource, SOURCE_LANGUAGE,
};
pub use experiment::{
    run_experiment, FileRead, FileRole, RunOutcome, RunReport, Timing, TrainSummary, TrainedModel,
    LOSS_CURVE, REPORT, TIMING,
};
pub use oversample::oversample;

use crate::corpus::CorpusError;
use crate::generation::GenerationError;
use crate::metrics::MetricsError;
use crate::retrieval::RetrievalError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot load artifact {path} (sha256 {sha256}): {reason}")]
    Artifact {
        path: PathBuf,
        sha256: String,
        reason: String,
    },
    #[error("reports are not comparable: {0}")]
    Incomparable(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Broad failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            HarnessError::Config(_) | HarnessError::Incomparable(_) => ErrorClass::Config,
            HarnessError::Retrieval(RetrievalError::Config(_))
            | HarnessError::Generation(GenerationError::Config(_)) => ErrorClass::Config,
            HarnessError::Corpus(CorpusError::Config(_)) => ErrorClass::Config,
            HarnessError::Retrieval(
                RetrievalError::NonFinite(_) | RetrievalError::Diverged { .. },
            )
            | HarnessError::Generation(
                GenerationError::NonFinite(_) | GenerationError::Diverged { .. },
            ) => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }
}
