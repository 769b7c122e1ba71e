//! Datasets, prompts, answer extraction, statistics, the experiment grid
//! and report generation.

pub mod dataset;
pub mod extract;
pub mod grid;
pub mod prompt;
pub mod report;
pub mod stats;
pub mod table;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::providers::ProviderError;
use crate::retrieval::RetrievalError;

pub use dataset::{load_dataset, MCQuestion};
pub use extract::{extract_answer, Prediction};
pub use grid::{
    answer_question, run_config, run_grid, Answer, EvalConfig, EvalOptions, EvalResources,
    GridOutcome, GridSpec, IndexResource, RagSetup, RunResult,
};
pub use prompt::{build_prompt, PromptMode};
pub use report::{emit_report, ReportInput};
pub use stats::{
    mcnemar, score_run, throughput, wald_ci95, wilson_ci95, McNemarMethod, PairedComparison,
};
pub use table::{read_results, technique_deltas, write_results, Axis, ResultRow, TechniqueDelta};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset line {line}: {msg}")]
    Dataset { line: usize, msg: String },
    #[error("results table line {line}: {msg}")]
    Table { line: usize, msg: String },
    #[error("item log {path} line {line}: {msg}")]
    ItemLog {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{0}")]
    Empty(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no matched pairs along axis {axis}")]
    NoPairs { axis: String },
    #[error("qid mismatch: {0}")]
    QidMismatch(String),
    #[error("config: {0}")]
    Config(String),
    #[error("interrupted after {done} new items")]
    Interrupted { done: usize },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Outcome for one question under one configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemResult {
    pub qid: String,
    pub predicted: Prediction,
    pub gold: char,
    /// `predicted == gold`; an abstention is never correct.
    pub correct: bool,
    pub latency_ms: u64,
    pub evidence_chunk_ids: Vec<String>,
}

/// Writes through a sibling temp file and a rename so readers never see a
/// partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}
