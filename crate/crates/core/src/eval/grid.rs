//! Per-configuration evaluation and the experiment grid.
//!
//! Every configuration writes a per-item log (`runs/<key>.items.jsonl`)
//! as items finish, so an interrupted grid resumes where it stopped. When a
//! configuration completes its log is rewritten in dataset order and its
//! row is upserted into `results.csv`; with deterministic providers and
//! virtual timing the final files do not depend on interruptions or thread
//! scheduling.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::prompt::{build_prompt, PromptMode};
use super::stats::{ci95, score_run, throughput, CiMethod};
use super::table::{read_results, write_results, ResultRow};
use super::{extract_answer, write_atomic, EvalError, ItemResult, MCQuestion, Prediction};
use crate::par::{self, Exec};
use crate::providers::{Embedder, GenerationParams, Generator, Reranker};
use crate::retrieval::{
    check_pipeline, run_pipeline, EvidenceContext, IndexSet, PipelineProviders, RetrievalConfig,
    RetrievalMode, RetrievalTrace, Switch,
};
use crate::timing::{Stopwatch, Timing};

pub const RESULTS_FILE: &str = "results.csv";
pub const RUNS_DIR: &str = "runs";

/// Serializes every read-modify-write of a results table in this process.
static RESULTS_LOCK: Mutex<()> = Mutex::new(());

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RagSetup {
    /// Name of the index (and its query embedder) in [`EvalResources`].
    pub index: String,
    pub retrieval: RetrievalConfig,
}

/// One evaluated configuration. `rag: None` is a no-retrieval baseline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub rag: Option<RagSetup>,
    pub prompt_mode: PromptMode,
    pub llm_model: String,
}

impl EvalConfig {
    /// The configuration's labels as a results-table row.
    pub fn row(&self, accuracy: f64, runtime: f64) -> ResultRow {
        let none = || "none".to_string();
        let (family, index, mode, coarse, rerank, reform) = match &self.rag {
            None => ("NO RAG".to_string(), none(), none(), none(), none(), none()),
            Some(r) => (
                "RAG".to_string(),
                r.index.clone(),
                r.retrieval.retrieval_mode.as_str().to_string(),
                r.retrieval.coarse.as_str().to_string(),
                r.retrieval.reranker.as_str().to_string(),
                r.retrieval.reformulation.as_str().to_string(),
            ),
        };
        ResultRow {
            family,
            index,
            retrieval_mode: mode,
            coarse_mode: coarse,
            reranker: rerank,
            reformulation: reform,
            prompt_mode: self.prompt_mode.label().to_string(),
            llm_model: self.llm_model.clone(),
            accuracy,
            runtime,
        }
    }

    /// Stable, filename-safe identifier.
    pub fn key(&self) -> String {
        let mode = match self.prompt_mode {
            PromptMode::ZeroShot => "zs",
            PromptMode::Cot => "cot",
        };
        let raw = match &self.rag {
            None => format!("norag_{mode}_{}", self.llm_model),
            Some(r) => {
                let c = &r.retrieval;
                format!(
                    "rag_{}_{}_c{}_r{}_q{}_{mode}_{}",
                    r.index,
                    c.retrieval_mode.as_str(),
                    c.coarse.as_str(),
                    c.reranker.as_str(),
                    c.reformulation.as_str(),
                    self.llm_model
                )
            }
        };
        raw.chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || "-._".contains(c) {
                    c
                } else {
                    '_'
                }
            })
            .collect()
    }

    fn generation_params(&self) -> GenerationParams {
        match self.prompt_mode {
            PromptMode::ZeroShot => GenerationParams::default(),
            PromptMode::Cot => GenerationParams::cot(),
        }
    }
}

fn default_modes() -> Vec<RetrievalMode> {
    vec![RetrievalMode::Dense]
}
fn default_off() -> Vec<Switch> {
    vec![Switch::Off]
}
fn default_prompts() -> Vec<PromptMode> {
    vec![PromptMode::ZeroShot]
}

/// Axis value lists; the grid is their cartesian product, plus one
/// no-retrieval baseline per (prompt mode, model) when `no_rag` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub indexes: Vec<String>,
    #[serde(default = "default_modes")]
    pub retrieval_modes: Vec<RetrievalMode>,
    #[serde(default = "default_off")]
    pub coarse: Vec<Switch>,
    #[serde(default = "default_off")]
    pub reranker: Vec<Switch>,
    #[serde(default = "default_off")]
    pub reformulation: Vec<Switch>,
    #[serde(default = "default_prompts")]
    pub prompt_modes: Vec<PromptMode>,
    pub llm_models: Vec<String>,
    #[serde(default)]
    pub no_rag: bool,
    /// Non-axis retrieval parameters shared by every configuration.
    #[serde(default)]
    pub retrieval: RetrievalConfig,
}

fn check_axis<T: PartialEq + std::fmt::Debug>(name: &str, values: &[T]) -> Result<(), EvalError> {
    if values.is_empty() {
        return Err(EvalError::Config(format!("grid axis {name} is empty")));
    }
    for (i, v) in values.iter().enumerate() {
        if values[..i].contains(v) {
            return Err(EvalError::Config(format!("grid axis {name} repeats {v:?}")));
        }
    }
    Ok(())
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        check_axis("indexes", &self.indexes)?;
        check_axis("retrieval_modes", &self.retrieval_modes)?;
        check_axis("coarse", &self.coarse)?;
        check_axis("reranker", &self.reranker)?;
        check_axis("reformulation", &self.reformulation)?;
        check_axis("prompt_modes", &self.prompt_modes)?;
        check_axis("llm_models", &self.llm_models)?;
        self.retrieval.validate()?;
        Ok(())
    }

    /// Baselines first, then RAG configurations with the index varying
    /// slowest and the model fastest.
    pub fn configs(&self) -> Result<Vec<EvalConfig>, EvalError> {
        self.validate()?;
        let mut out = Vec::new();
        if self.no_rag {
            for &prompt_mode in &self.prompt_modes {
                for m in &self.llm_models {
                    out.push(EvalConfig {
                        rag: None,
                        prompt_mode,
                        llm_model: m.clone(),
                    });
                }
            }
        }
        for index in &self.indexes {
            for &retrieval_mode in &self.retrieval_modes {
                for &coarse in &self.coarse {
                    for &reranker in &self.reranker {
                        for &reformulation in &self.reformulation {
                            for &prompt_mode in &self.prompt_modes {
                                for m in &self.llm_models {
                                    let retrieval = RetrievalConfig {
                                        retrieval_mode,
                                        coarse,
                                        reranker,
                                        reformulation,
                                        ..self.retrieval.clone()
                                    };
                                    out.push(EvalConfig {
                                        rag: Some(RagSetup {
                                            index: index.clone(),
                                            retrieval,
                                        }),
                                        prompt_mode,
                                        llm_model: m.clone(),
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

pub struct IndexResource {
    pub set: IndexSet,
    /// Query embedder; must match the index's embedder tag.
    pub embedder: Arc<dyn Embedder>,
}

/// Everything a configuration may refer to by name.
#[derive(Default)]
pub struct EvalResources {
    pub indexes: BTreeMap<String, IndexResource>,
    /// Answer models by name; a configuration's model also reformulates.
    pub generators: BTreeMap<String, Arc<dyn Generator>>,
    pub reranker: Option<Arc<dyn Reranker>>,
}

impl EvalResources {
    /// Checks that `cfg` can run, without calling any provider.
    pub fn check(&self, cfg: &EvalConfig) -> Result<(), EvalError> {
        let generator = self
            .generators
            .get(&cfg.llm_model)
            .ok_or_else(|| EvalError::Config(format!("unknown llm_model {:?}", cfg.llm_model)))?;
        if let Some(rag) = &cfg.rag {
            let idx = self
                .indexes
                .get(&rag.index)
                .ok_or_else(|| EvalError::Config(format!("unknown index {:?}", rag.index)))?;
            check_pipeline(
                &rag.retrieval,
                &idx.set,
                &self.providers(idx, generator.as_ref()),
            )?;
        }
        Ok(())
    }

    fn providers<'a>(
        &'a self,
        idx: &'a IndexResource,
        generator: &'a dyn Generator,
    ) -> PipelineProviders<'a> {
        PipelineProviders {
            embedder: idx.embedder.as_ref(),
            generator: Some(generator),
            reranker: self.reranker.as_deref(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub timing: Timing,
    /// Items evaluated concurrently.
    pub max_in_flight: usize,
    pub ci: CiMethod,
    /// Stop (as if killed) after this many newly evaluated items.
    pub stop_after: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            timing: Timing::Wall,
            max_in_flight: 4,
            ci: CiMethod::Wald,
            stop_after: None,
        }
    }
}

/// A single question answered end to end.
#[derive(Debug, Clone)]
pub struct Answer {
    pub item: ItemResult,
    pub evidence: Option<EvidenceContext>,
    pub trace: Option<RetrievalTrace>,
    pub prompt: String,
    pub generation: String,
}

/// Retrieves evidence (for RAG configurations), prompts the model and
/// extracts the answer letter. The retrieval pipeline runs sequentially on
/// the calling thread so virtual latencies are per item.
pub fn answer_question(
    q: &MCQuestion,
    cfg: &EvalConfig,
    res: &EvalResources,
    timing: Timing,
) -> Result<Answer, EvalError> {
    let generator = res
        .generators
        .get(&cfg.llm_model)
        .ok_or_else(|| EvalError::Config(format!("unknown llm_model {:?}", cfg.llm_model)))?;
    let sw = Stopwatch::start(timing);
    let (evidence, trace) = match &cfg.rag {
        None => (None, None),
        Some(rag) => {
            let idx = res
                .indexes
                .get(&rag.index)
                .ok_or_else(|| EvalError::Config(format!("unknown index {:?}", rag.index)))?;
            let providers = res.providers(idx, generator.as_ref());
            let (ctx, trace) = run_pipeline(
                &q.stem,
                &rag.retrieval,
                &idx.set,
                &providers,
                timing,
                Exec::Sequential,
            )?;
            (Some(ctx), Some(trace))
        }
    };
    let prompt = build_prompt(q, evidence.as_ref(), cfg.prompt_mode);
    let generation = generator.generate(&prompt, &cfg.generation_params())?;
    let predicted = extract_answer(&generation, &q.options.keys().copied().collect());
    let item = ItemResult {
        qid: q.qid.clone(),
        predicted,
        gold: q.gold,
        correct: predicted == Prediction::Letter(q.gold),
        latency_ms: sw.elapsed_ms().round().max(0.0) as u64,
        evidence_chunk_ids: evidence
            .as_ref()
            .map(EvidenceContext::chunk_ids)
            .unwrap_or_default(),
    };
    Ok(Answer {
        item,
        evidence,
        trace,
        prompt,
        generation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub key: String,
    pub config: EvalConfig,
    #[serde(skip)]
    pub items: Vec<ItemResult>,
    pub n: usize,
    pub accuracy: f64,
    pub runtime_s: f64,
    /// Absent when the measured runtime is zero.
    pub throughput: Option<f64>,
    pub ci95: (f64, f64),
}

impl RunResult {
    pub fn row(&self) -> ResultRow {
        self.config.row(self.accuracy, self.runtime_s)
    }
}

pub fn items_path(out_dir: &Path, key: &str) -> PathBuf {
    out_dir.join(RUNS_DIR).join(format!("{key}.items.jsonl"))
}

pub fn summary_path(out_dir: &Path, key: &str) -> PathBuf {
    out_dir.join(RUNS_DIR).join(format!("{key}.json"))
}

/// Reads a per-item log. A malformed *final* line (a write cut short by a
/// kill) is dropped; malformed lines elsewhere are errors.
pub fn read_item_log(path: &Path) -> Result<Vec<ItemResult>, EvalError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ItemResult>(line) {
            Ok(item) => out.push(item),
            Err(_) if i + 1 == lines.len() => {
                log::warn!("{}: dropping truncated final line", path.display())
            }
            Err(e) => {
                return Err(EvalError::ItemLog {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

pub fn write_item_log(path: &Path, items: &[ItemResult]) -> Result<(), EvalError> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(std::io::Error::from)?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)?;
    Ok(())
}

/// Replaces the row for the same configuration, or appends it.
pub fn upsert_result(path: &Path, row: &ResultRow) -> Result<(), EvalError> {
    let _guard = RESULTS_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let mut rows = if path.exists() {
        read_results(path)?
    } else {
        Vec::new()
    };
    match rows.iter_mut().find(|r| r.key() == row.key()) {
        Some(slot) => *slot = row.clone(),
        None => rows.push(row.clone()),
    }
    let mut buf = Vec::new();
    write_results(&mut buf, &rows)?;
    write_atomic(path, &buf)?;
    Ok(())
}

/// Evaluates one configuration over `dataset`, resuming from its item log
/// under `out_dir` if one exists. `budget` counts newly evaluated items
/// across a whole grid for simulated interruption.
fn run_config_inner(
    cfg: &EvalConfig,
    dataset: &[MCQuestion],
    res: &EvalResources,
    opts: &EvalOptions,
    out_dir: &Path,
    budget: &AtomicUsize,
) -> Result<RunResult, EvalError> {
    res.check(cfg)?;
    let key = cfg.key();
    let log_path = items_path(out_dir, &key);
    let wanted: HashSet<&str> = dataset.iter().map(|q| q.qid.as_str()).collect();
    let mut done: HashMap<String, ItemResult> = HashMap::new();
    for item in read_item_log(&log_path)? {
        if wanted.contains(item.qid.as_str()) {
            done.insert(item.qid.clone(), item);
        }
    }
    if !done.is_empty() {
        log::info!(
            "{key}: resuming with {} of {} items already evaluated",
            done.len(),
            dataset.len()
        );
    }
    // drop any torn line before appending
    let resumed: Vec<ItemResult> = dataset
        .iter()
        .filter_map(|q| done.get(&q.qid).cloned())
        .collect();
    write_item_log(&log_path, &resumed)?;

    let pending: Vec<&MCQuestion> = dataset
        .iter()
        .filter(|q| !done.contains_key(&q.qid))
        .collect();
    let log = Mutex::new(OpenOptions::new().append(true).open(&log_path)?);
    let started = Instant::now();
    let results: Vec<Option<Result<ItemResult, EvalError>>> =
        par::with_limit(opts.max_in_flight, |exec| {
            par::map(exec, &pending, |q| {
                if let Some(limit) = opts.stop_after {
                    if budget.fetch_add(1, Ordering::SeqCst) >= limit {
                        return None;
                    }
                }
                let out = answer_question(q, cfg, res, opts.timing).map(|a| a.item);
                if let Ok(item) = &out {
                    let mut line = serde_json::to_vec(item).expect("item results serialize");
                    line.push(b'\n');
                    let mut f = log.lock().unwrap_or_else(|e| e.into_inner());
                    if let Err(e) = f.write_all(&line).and_then(|()| f.flush()) {
                        return Some(Err(EvalError::Io(e)));
                    }
                }
                Some(out)
            })
        });
    let wall_s = started.elapsed().as_secs_f64();

    let mut fresh = HashMap::new();
    let mut skipped = false;
    for r in results {
        match r {
            None => skipped = true,
            Some(Ok(item)) => {
                fresh.insert(item.qid.clone(), item);
            }
            Some(Err(e)) => return Err(e),
        }
    }
    if skipped {
        return Err(EvalError::Interrupted {
            done: opts.stop_after.unwrap_or(0),
        });
    }

    let resumed_ms: u64 = resumed.iter().map(|i| i.latency_ms).sum();
    let items: Vec<ItemResult> = dataset
        .iter()
        .map(|q| {
            done.remove(&q.qid)
                .or_else(|| fresh.remove(&q.qid))
                .expect("every item evaluated")
        })
        .collect();
    write_item_log(&log_path, &items)?;

    let runtime_s = match opts.timing {
        Timing::Virtual => items.iter().map(|i| i.latency_ms).sum::<u64>() as f64 / 1000.0,
        Timing::Wall => wall_s + resumed_ms as f64 / 1000.0,
    };
    let accuracy = score_run(&items)?;
    let run = RunResult {
        key: key.clone(),
        config: cfg.clone(),
        n: items.len(),
        accuracy,
        runtime_s,
        throughput: throughput(items.len(), runtime_s).ok(),
        ci95: ci95(opts.ci, accuracy, items.len()),
        items,
    };
    let summary = serde_json::to_vec_pretty(&run).map_err(std::io::Error::from)?;
    write_atomic(&summary_path(out_dir, &key), &summary)?;
    upsert_result(&out_dir.join(RESULTS_FILE), &run.row())?;
    Ok(run)
}

/// Evaluates one configuration and records it under `out_dir`.
pub fn run_config(
    cfg: &EvalConfig,
    dataset: &[MCQuestion],
    res: &EvalResources,
    opts: &EvalOptions,
    out_dir: &Path,
) -> Result<RunResult, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::Empty("dataset has no questions"));
    }
    run_config_inner(cfg, dataset, res, opts, out_dir, &AtomicUsize::new(0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailedConfig {
    pub key: String,
    pub error: String,
}

#[derive(Debug, Default)]
pub struct GridOutcome {
    pub runs: Vec<RunResult>,
    pub failed: Vec<FailedConfig>,
}

/// Runs every configuration of `spec` in order. Every configuration is
/// checked before anything executes; a configuration whose provider fails
/// mid-run is reported in [`GridOutcome::failed`] and the grid continues.
pub fn run_grid(
    spec: &GridSpec,
    dataset: &[MCQuestion],
    res: &EvalResources,
    opts: &EvalOptions,
    out_dir: &Path,
) -> Result<GridOutcome, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::Empty("dataset has no questions"));
    }
    let configs = spec.configs()?;
    for cfg in &configs {
        res.check(cfg)
            .map_err(|e| EvalError::Config(format!("{}: {e}", cfg.key())))?;
    }
    let budget = AtomicUsize::new(0);
    let mut outcome = GridOutcome::default();
    for cfg in &configs {
        match run_config_inner(cfg, dataset, res, opts, out_dir, &budget) {
            Ok(run) => outcome.runs.push(run),
            Err(e @ EvalError::Interrupted { .. }) => return Err(e),
            Err(e) => {
                log::error!("{} failed: {e}", cfg.key());
                outcome.failed.push(FailedConfig {
                    key: cfg.key(),
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(outcome)
}

/// Loads every completed run summary under `out_dir`, with its items.
pub fn load_runs(out_dir: &Path) -> Result<Vec<RunResult>, EvalError> {
    let dir = out_dir.join(RUNS_DIR);
    let mut paths: Vec<PathBuf> = match std::fs::read_dir(&dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension().is_some_and(|x| x == "json")
                    && !p.to_string_lossy().ends_with(".items.json")
            })
            .collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    paths.sort();
    let mut runs = Vec::new();
    for p in paths {
        let text = std::fs::read_to_string(&p)?;
        let mut run: RunResult = serde_json::from_str(&text).map_err(|e| EvalError::ItemLog {
            path: p.clone(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        run.items = read_item_log(&items_path(out_dir, &run.key))?;
        runs.push(run);
    }
    Ok(runs)
}
