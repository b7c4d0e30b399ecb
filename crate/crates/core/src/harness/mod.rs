//! Experiment orchestration: plans, the two-phase dev/test protocol with a
//! content-addressed cache, reports, and the command-line front end.

mod cli;
mod experiment;
mod kv;
mod plan;
mod report;

use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cli::cli_main;
pub use experiment::{load_source, run_experiment};
pub use kv::{KvFile, Section};
pub use plan::{BaseDef, CorpusSource, ExperimentPlan, Selection, StrategyDef, REPLICA_PLAN, REPLICA_SMOKE_PLAN};
pub use report::{parse_report_csv, render_report, CellKey, ExperimentResult, ReportFormat};

use crate::corpus::CorpusError;
use crate::metrics::MetricError;
use crate::model::ModelError;
use crate::training::TrainError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {origin}:{line}: {msg}")]
    Config { origin: String, line: usize, msg: String },
    #[error("plan: {0}")]
    Plan(String),
    #[error("corpus: {context}: {source}")]
    Corpus {
        context: String,
        #[source]
        source: CorpusError,
    },
    #[error("train: {0}")]
    Train(#[from] TrainError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("metric: {0}")]
    Metric(#[from] MetricError),
    #[error("io: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    pub(crate) fn config(origin: &str, line: usize, msg: &str) -> Self {
        HarnessError::Config {
            origin: origin.to_string(),
            line,
            msg: msg.to_string(),
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn corpus(context: impl Into<String>, source: CorpusError) -> Self {
        HarnessError::Corpus {
            context: context.into(),
            source,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config { .. } => "config",
            HarnessError::Plan(_) => "plan",
            HarnessError::Corpus { .. } => "corpus",
            HarnessError::Train(_) => "train",
            HarnessError::Model(_) => "model",
            HarnessError::Metric(_) => "metric",
            HarnessError::Io { .. } => "io",
        }
    }
}

/// Hex SHA-256.
pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes via a temporary sibling and a rename, so readers never see a
/// partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| HarnessError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

/// One hypothesis per line. Decoded bytes may include line breaks; they
/// become spaces, which chrF ignores anyway.
pub(crate) fn hyp_file(hyps: &[String]) -> String {
    let mut s = String::new();
    for h in hyps {
        s.extend(h.chars().map(|c| if c == '\n' || c == '\r' { ' ' } else { c }));
        s.push('\n');
    }
    s
}
