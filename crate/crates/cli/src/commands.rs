use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use medrag_core::corpus::{
    ingest as ingest_docs, load_documents, read_chunks, write_chunks, RawDocument,
};
use medrag_core::eval::grid::{load_runs, RESULTS_FILE};
use medrag_core::eval::stats::CiMethod;
use medrag_core::eval::{
    answer_question, emit_report, load_dataset, read_results, run_config, run_grid, EvalConfig,
    EvalOptions, EvalResources, IndexResource, MCQuestion, RagSetup, ReportInput,
};
use medrag_core::par::Exec;
use medrag_core::providers::{make_embedder, make_generator, make_reranker, Generator};
use medrag_core::retrieval::{run_pipeline, IndexSet, PipelineProviders};
use medrag_core::tokenize::WordPunctTokenizer;
use serde::de::DeserializeOwned;
use serde_json::json;

/// `println!` that treats a closed stdout (e.g. `| head`) as a normal end.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        if let Err(e) = writeln!(std::io::stdout().lock(), $($arg)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
            log::warn!("stdout: {e}");
        }
    }};
}

use crate::config::RunConfigFile;
use crate::error::{CliError, CliResult};
use crate::{Common, Select};

fn parse_label<T: DeserializeOwned>(flag: &str, value: &str) -> CliResult<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| CliError::config(format!("--{flag}: unrecognised value {value:?}")))
}

fn load_config(common: &Common) -> CliResult<RunConfigFile> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| CliError::config("--config is required"))?;
    let mut cfg = RunConfigFile::load(path)?;
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(t) = &common.timing {
        cfg.timing = parse_label("timing", t)?;
    }
    if let Some(n) = common.max_in_flight {
        if n == 0 {
            return Err(CliError::config("--max-in-flight must be at least 1"));
        }
        cfg.max_in_flight = n;
    }
    Ok(cfg)
}

fn print_json(v: &serde_json::Value) {
    out!(
        "{}",
        serde_json::to_string_pretty(v).expect("JSON values serialize")
    );
}

fn require_exists(path: &Path, what: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::input(format!(
            "{what} not found: {}",
            path.display()
        )))
    }
}

pub fn ingest(common: &Common) -> CliResult<()> {
    let cfg = load_config(common)?;
    if cfg.corpus.is_empty() {
        return Err(CliError::config("no corpus paths configured"));
    }
    for p in &cfg.corpus {
        require_exists(p, "corpus path")?;
    }
    if common.dry_run {
        print_json(&json!({
            "command": "ingest",
            "dry_run": true,
            "corpus": cfg.corpus,
            "chunking": cfg.chunking,
            "output": cfg.chunks_path(),
        }));
        return Ok(());
    }
    let mut docs = Vec::new();
    for p in &cfg.corpus {
        if p.is_dir() {
            docs.extend(load_documents(p)?);
        } else {
            let book_name = p
                .file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned();
            docs.push(RawDocument {
                book_name,
                body: std::fs::read_to_string(p)?,
            });
        }
    }
    let chunks = ingest_docs(&docs, &cfg.chunking, &WordPunctTokenizer, Exec::default())?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.chunks_path();
    write_chunks(&chunks, &path)?;
    let sections: std::collections::BTreeSet<&str> =
        chunks.iter().map(|c| c.section_key()).collect();
    print_json(&json!({
        "documents": docs.len(),
        "sections": sections.len(),
        "chunks": chunks.len(),
        "oversized": chunks.iter().filter(|c| c.oversized).count(),
        "output": path,
    }));
    Ok(())
}

pub fn index(common: &Common, only: &[String]) -> CliResult<()> {
    let cfg = load_config(common)?;
    let names: Vec<String> = if only.is_empty() {
        cfg.embedders.keys().cloned().collect()
    } else {
        only.to_vec()
    };
    if names.is_empty() {
        return Err(CliError::config("no embedders configured"));
    }
    for n in &names {
        if !cfg.embedders.contains_key(n) {
            return Err(CliError::config(format!("unknown index {n:?}")));
        }
    }
    let chunks_path = cfg.chunks_path();
    require_exists(&chunks_path, "chunks file (run `medrag ingest` first)")?;
    if common.dry_run {
        let plan: Vec<_> = names
            .iter()
            .map(|n| json!({"index": n, "embedder": cfg.embedders[n].model_tag, "dir": cfg.index_dir().join(n)}))
            .collect();
        print_json(
            &json!({"command": "index", "dry_run": true, "chunks": chunks_path, "indexes": plan}),
        );
        return Ok(());
    }
    let chunks = read_chunks(&chunks_path)?;
    let mut built = Vec::new();
    for n in &names {
        let embedder = make_embedder(&cfg.embedders[n])?;
        let set = IndexSet::build(&chunks, embedder.as_ref(), true, true, Exec::default())?;
        let dir = cfg.index_dir().join(n);
        set.persist(&dir)?;
        built
            .push(json!({"index": n, "rows": set.dense.len(), "dim": set.dense.dim(), "dir": dir}));
    }
    print_json(&json!({"indexes": built}));
    Ok(())
}

/// The single configuration chosen by the config's `run` block and flags.
fn selected_config(cfg: &RunConfigFile, sel: &Select) -> CliResult<EvalConfig> {
    let (llm, _) = RunConfigFile::pick(
        &cfg.generators,
        sel.llm.as_deref().or(cfg.run.llm_model.as_deref()),
        "llm",
    )?;
    let prompt_mode = match &sel.prompt_mode {
        Some(m) => parse_label("prompt-mode", m)?,
        None => cfg.run.prompt_mode,
    };
    let rag = if sel.no_rag || !cfg.run.rag {
        None
    } else {
        let (index, _) = RunConfigFile::pick(
            &cfg.embedders,
            sel.index.as_deref().or(cfg.run.index.as_deref()),
            "index",
        )?;
        let mut r = cfg.retrieval.clone();
        if let Some(v) = &sel.retrieval_mode {
            r.retrieval_mode = parse_label("retrieval-mode", v)?;
        }
        if let Some(v) = &sel.coarse {
            r.coarse = parse_label("coarse", v)?;
        }
        if let Some(v) = &sel.reranker {
            r.reranker = parse_label("reranker", v)?;
        }
        if let Some(v) = &sel.reformulation {
            r.reformulation = parse_label("reformulation", v)?;
        }
        r.k_sections = sel.k_sections.unwrap_or(r.k_sections);
        r.n_candidates = sel.n_candidates.unwrap_or(r.n_candidates);
        r.top_passages = sel.top_passages.unwrap_or(r.top_passages);
        r.context_token_budget = sel.context_token_budget.unwrap_or(r.context_token_budget);
        r.validate()?;
        Some(RagSetup {
            index,
            retrieval: r,
        })
    };
    Ok(EvalConfig {
        rag,
        prompt_mode,
        llm_model: llm,
    })
}

/// Loads the named indexes and builds the named providers. Missing index
/// directories are input errors; nothing here calls a provider.
fn resources(
    cfg: &RunConfigFile,
    indexes: &[String],
    llms: &[String],
    reranker: bool,
) -> CliResult<EvalResources> {
    let mut res = EvalResources::default();
    for name in indexes {
        let (_, spec) = RunConfigFile::pick(&cfg.embedders, Some(name), "index")?;
        let dir = cfg.index_dir().join(name);
        require_exists(&dir, &format!("index {name:?} (run `medrag index` first)"))?;
        let set = IndexSet::load(&dir)
            .map_err(|e| CliError::from(e).context(&format!("index {name:?}")))?;
        res.indexes.insert(
            name.clone(),
            IndexResource {
                set,
                embedder: make_embedder(spec)?,
            },
        );
    }
    let mut generators: BTreeMap<String, Arc<dyn Generator>> = BTreeMap::new();
    for name in llms {
        let (_, spec) = RunConfigFile::pick(&cfg.generators, Some(name), "llm")?;
        generators.insert(name.clone(), make_generator(spec)?);
    }
    res.generators = generators;
    if reranker {
        let spec = cfg
            .reranker
            .as_ref()
            .ok_or_else(|| CliError::config("reranking is on but no reranker is configured"))?;
        res.reranker = Some(make_reranker(spec)?);
    }
    Ok(res)
}

fn resources_for(cfg: &RunConfigFile, ec: &EvalConfig) -> CliResult<EvalResources> {
    let indexes: Vec<String> = ec.rag.iter().map(|r| r.index.clone()).collect();
    let rerank = ec
        .rag
        .as_ref()
        .is_some_and(|r| r.retrieval.reranker.is_on());
    let res = resources(cfg, &indexes, std::slice::from_ref(&ec.llm_model), rerank)?;
    res.check(ec)?;
    Ok(res)
}

fn options(cfg: &RunConfigFile) -> EvalOptions {
    EvalOptions {
        timing: cfg.timing,
        max_in_flight: cfg.max_in_flight,
        ci: cfg.ci,
        stop_after: None,
    }
}

pub fn retrieve(common: &Common, sel: &Select, question: &str) -> CliResult<()> {
    let cfg = load_config(common)?;
    let ec = selected_config(&cfg, sel)?;
    let rag = ec
        .rag
        .clone()
        .ok_or_else(|| CliError::config("retrieve needs a RAG configuration"))?;
    if common.dry_run {
        print_json(&json!({"command": "retrieve", "dry_run": true, "config": ec, "key": ec.key()}));
        return Ok(());
    }
    let res = resources_for(&cfg, &ec)?;
    let idx = &res.indexes[&rag.index];
    let providers = PipelineProviders {
        embedder: idx.embedder.as_ref(),
        generator: res.generators.get(&ec.llm_model).map(|g| g.as_ref()),
        reranker: res.reranker.as_deref(),
    };
    let (ctx, trace) = run_pipeline(
        question,
        &rag.retrieval,
        &idx.set,
        &providers,
        cfg.timing,
        Exec::default(),
    )?;
    print_json(&json!({"evidence": ctx, "trace": trace}));
    Ok(())
}

fn parse_options(raw: &[String]) -> CliResult<BTreeMap<char, String>> {
    let mut out = BTreeMap::new();
    for o in raw {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("--option {o:?} is not LETTER=text")))?;
        let mut cs = k.trim().chars();
        match (cs.next(), cs.next()) {
            (Some(c), None) if c.is_ascii_uppercase() => {
                out.insert(c, v.trim().to_string());
            }
            _ => {
                return Err(CliError::config(format!(
                    "--option {o:?}: option key must be one capital letter"
                )))
            }
        }
    }
    if out.len() < 2 || out.keys().zip('A'..).any(|(k, want)| *k != want) {
        return Err(CliError::config(
            "need at least two options lettered consecutively from A",
        ));
    }
    Ok(out)
}

pub fn ask(
    common: &Common,
    sel: &Select,
    qid: Option<&str>,
    question: Option<&str>,
    raw_options: &[String],
) -> CliResult<()> {
    let cfg = load_config(common)?;
    let ec = selected_config(&cfg, sel)?;
    let (q, known_gold) = match (qid, question) {
        (Some(id), _) => {
            let path = cfg
                .dataset
                .as_ref()
                .ok_or_else(|| CliError::config("--qid needs a dataset in the config"))?;
            require_exists(path, "dataset")?;
            let q = load_dataset(path)?
                .into_iter()
                .find(|q| q.qid == id)
                .ok_or_else(|| CliError::input(format!("no question with qid {id:?}")))?;
            (q, true)
        }
        (None, Some(text)) => {
            let options = parse_options(raw_options)?;
            // gold is unknown for ad-hoc questions; the placeholder is never printed
            (
                MCQuestion {
                    qid: "adhoc".into(),
                    stem: text.to_string(),
                    options,
                    gold: 'A',
                },
                false,
            )
        }
        (None, None) => return Err(CliError::config("ask needs --qid or --question")),
    };
    if common.dry_run {
        print_json(&json!({"command": "ask", "dry_run": true, "config": ec, "qid": q.qid}));
        return Ok(());
    }
    let res = resources_for(&cfg, &ec)?;
    let answer = answer_question(&q, &ec, &res, cfg.timing)?;
    out!("evidence:");
    match &answer.evidence {
        Some(ctx) if !ctx.passages.is_empty() => {
            for (i, p) in ctx.passages.iter().enumerate() {
                out!(
                    "  [{}] {} ({} | {} | {}) score={:.6}",
                    i + 1,
                    p.chunk_id,
                    p.book,
                    p.chapter,
                    p.section,
                    p.final_score
                );
            }
        }
        Some(_) => out!("  (no passages)"),
        None => out!("  (retrieval off)"),
    }
    out!("generation:");
    for line in answer.generation.lines() {
        out!("  {line}");
    }
    out!("answer: {}", answer.item.predicted);
    if known_gold {
        out!("gold: {}", q.gold);
        out!("correct: {}", answer.item.correct);
    }
    Ok(())
}

fn dataset_path(cfg: &RunConfigFile, flag: Option<PathBuf>) -> CliResult<PathBuf> {
    let path = flag
        .or_else(|| cfg.dataset.clone())
        .ok_or_else(|| CliError::config("no dataset configured"))?;
    require_exists(&path, "dataset")?;
    Ok(path)
}

pub fn eval(common: &Common, sel: &Select, dataset: Option<PathBuf>) -> CliResult<()> {
    let cfg = load_config(common)?;
    let ec = selected_config(&cfg, sel)?;
    let path = dataset_path(&cfg, dataset)?;
    let questions = load_dataset(&path)?;
    if common.dry_run {
        print_json(&json!({
            "command": "eval", "dry_run": true, "config": ec, "key": ec.key(),
            "questions": questions.len(), "out_dir": cfg.out_dir,
        }));
        return Ok(());
    }
    let res = resources_for(&cfg, &ec)?;
    let run = run_config(&ec, &questions, &res, &options(&cfg), &cfg.out_dir)?;
    print_json(&serde_json::to_value(&run).expect("run results serialize"));
    Ok(())
}

pub fn grid(common: &Common, dataset: Option<PathBuf>, stop_after: Option<usize>) -> CliResult<()> {
    let cfg = load_config(common)?;
    let spec = cfg
        .grid
        .clone()
        .ok_or_else(|| CliError::config("config has no grid section"))?;
    let configs = spec.configs()?;
    let path = dataset_path(&cfg, dataset)?;
    let questions = load_dataset(&path)?;
    if common.dry_run {
        let keys: Vec<String> = configs.iter().map(EvalConfig::key).collect();
        print_json(&json!({
            "command": "grid", "dry_run": true, "configs": keys,
            "questions": questions.len(), "out_dir": cfg.out_dir,
        }));
        return Ok(());
    }
    let rerank = spec.reranker.iter().any(|s| s.is_on());
    let res = resources(&cfg, &spec.indexes, &spec.llm_models, rerank)?;
    let opts = EvalOptions {
        stop_after,
        ..options(&cfg)
    };
    let outcome = run_grid(&spec, &questions, &res, &opts, &cfg.out_dir)?;
    for run in &outcome.runs {
        out!(
            "{}\taccuracy={:.6}\truntime={:.1}",
            run.key,
            run.accuracy,
            run.runtime_s
        );
    }
    if !outcome.failed.is_empty() {
        let keys: Vec<&str> = outcome.failed.iter().map(|f| f.key.as_str()).collect();
        return Err(CliError::new(
            crate::error::Kind::Partial,
            format!(
                "{} of {} configurations failed: {} ({})",
                keys.len(),
                configs.len(),
                keys.join(", "),
                outcome.failed[0].error
            ),
        ));
    }
    Ok(())
}

pub fn report(
    common: &Common,
    results: Option<PathBuf>,
    runs_dir: Option<PathBuf>,
    n_items: Option<usize>,
    ci: Option<&str>,
) -> CliResult<()> {
    let cfg = common
        .config
        .is_some()
        .then(|| load_config(common))
        .transpose()?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.as_ref().map(|c| c.out_dir.clone()))
        .ok_or_else(|| CliError::config("report needs --out or --config"))?;
    let results = results.unwrap_or_else(|| out.join(RESULTS_FILE));
    require_exists(&results, "results table")?;
    let runs_dir = runs_dir.unwrap_or_else(|| out.clone());
    let ci: CiMethod = match ci {
        Some(v) => parse_label("ci", v)?,
        None => cfg.as_ref().map(|c| c.ci).unwrap_or_default(),
    };
    let report_dir = out.join("report");
    if common.dry_run {
        print_json(
            &json!({"command": "report", "dry_run": true, "results": results, "runs": runs_dir, "out": report_dir}),
        );
        return Ok(());
    }
    let rows = read_results(&results)?;
    let mut input = ReportInput::new(rows);
    input.runs = load_runs(&runs_dir)?;
    input.n_items = n_items;
    input.ci = ci;
    if let Some(c) = &cfg {
        input.mcnemar = c.mcnemar;
    }
    let report = emit_report(&input, &report_dir)?;
    for (title, d) in &report.deltas {
        out!(
            "{title}\t{:+.4}\t{:+.2}\t{} pairs",
            d.mean_delta_accuracy,
            d.mean_delta_runtime,
            d.pairs
        );
    }
    for c in &report.comparisons {
        out!("{}\tb={} c={}\tp={:.6}", c.name, c.b, c.c, c.p_value);
    }
    for note in &report.notes {
        out!("note: {note}");
    }
    out!(
        "wrote {} files to {}",
        report.files.len(),
        report_dir.display()
    );
    Ok(())
}
