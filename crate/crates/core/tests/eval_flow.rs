use std::sync::Arc;

use medrag_core::corpus::{ingest, load_documents};
use medrag_core::eval::grid::{items_path, read_item_log, EvalResources, IndexResource};
use medrag_core::eval::{
    answer_question, load_dataset, run_config, run_grid, EvalConfig, EvalError, EvalOptions,
    GridSpec, MCQuestion, PromptMode, RagSetup,
};
use medrag_core::par::Exec;
use medrag_core::providers::{Embedder, MockEmbedder, OverlapGenerator, OverlapReranker};
use medrag_core::retrieval::IndexSet;
use medrag_core::timing::Timing;
use medrag_core::tokenize::WordPunctTokenizer;
use medrag_core::ChunkingParams;

fn demo() -> std::path::PathBuf {
    std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../demo")
}

fn resources() -> EvalResources {
    let docs = load_documents(&demo().join("corpus")).unwrap();
    let params = ChunkingParams {
        max_tokens: 64,
        min_paragraph_tokens: 12,
        min_chunk_tokens: 16,
    };
    let chunks = ingest(&docs, &params, &WordPunctTokenizer, Exec::default()).unwrap();
    let mut res = EvalResources::default();
    let embedder: Arc<dyn Embedder> = Arc::new(MockEmbedder::with_dim("m", 64));
    let set = IndexSet::build(&chunks, embedder.as_ref(), true, true, Exec::default()).unwrap();
    res.indexes
        .insert("medembed".into(), IndexResource { set, embedder });
    res.generators
        .insert("llama3".into(), Arc::new(OverlapGenerator::new("g")));
    res.reranker = Some(Arc::new(OverlapReranker::new("r")));
    res
}

fn five() -> Vec<MCQuestion> {
    load_dataset(&demo().join("dataset.jsonl"))
        .unwrap()
        .into_iter()
        .take(5)
        .collect()
}

fn opts() -> EvalOptions {
    EvalOptions {
        timing: Timing::Virtual,
        ..EvalOptions::default()
    }
}

fn spec(json: &str) -> GridSpec {
    serde_json::from_str(json).unwrap()
}

#[test]
fn two_by_two_grid_runs_every_item() {
    let dir = tempfile::tempdir().unwrap();
    let g = spec(
        r#"{"indexes":["medembed"],"reranker":["off","on"],"prompt_modes":["zero_shot","cot"],"llm_models":["llama3"]}"#,
    );
    let out = run_grid(&g, &five(), &resources(), &opts(), dir.path()).unwrap();
    assert_eq!(out.runs.len(), 4);
    assert_eq!(out.runs.iter().map(|r| r.items.len()).sum::<usize>(), 20);
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    for r in &out.runs {
        let k = r.items.iter().filter(|i| i.correct).count();
        assert_eq!(r.accuracy, k as f64 / 5.0);
    }
}

#[test]
fn no_rag_has_no_evidence() {
    let cfg = EvalConfig {
        rag: None,
        prompt_mode: PromptMode::ZeroShot,
        llm_model: "llama3".into(),
    };
    let a = answer_question(&five()[0], &cfg, &resources(), Timing::Virtual).unwrap();
    assert!(a.trace.is_none());
    assert!(a.item.evidence_chunk_ids.is_empty());
    assert!(!a.prompt.contains("Evidence:"));
}

#[test]
fn resume_skips_logged_items() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = EvalConfig {
        rag: Some(RagSetup {
            index: "medembed".into(),
            retrieval: Default::default(),
        }),
        prompt_mode: PromptMode::ZeroShot,
        llm_model: "llama3".into(),
    };
    let res = resources();
    let killed = EvalOptions {
        stop_after: Some(3),
        max_in_flight: 1,
        ..opts()
    };
    match run_config(&cfg, &five(), &res, &killed, dir.path()) {
        Err(EvalError::Interrupted { done }) => assert_eq!(done, 3),
        other => panic!("expected interruption, got {other:?}"),
    }
    let log = items_path(dir.path(), &cfg.key());
    assert_eq!(read_item_log(&log).unwrap().len(), 3);
    let full = run_config(&cfg, &five(), &res, &opts(), dir.path()).unwrap();
    let qids: Vec<_> = read_item_log(&log)
        .unwrap()
        .into_iter()
        .map(|i| i.qid)
        .collect();
    let want: Vec<_> = five().into_iter().map(|q| q.qid).collect();
    assert_eq!(qids, want);
    assert_eq!(full.n, 5);
}

#[test]
fn unknown_grid_field_is_rejected() {
    let r: Result<GridSpec, _> = serde_json::from_str(
        r#"{"indexes":["medembed"],"llm_models":["llama3"],"rerankr":["on"]}"#,
    );
    assert!(r.is_err());
}

#[test]
fn config_errors_surface_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let g = spec(r#"{"indexes":["nope"],"llm_models":["llama3"]}"#);
    let err = run_grid(&g, &five(), &resources(), &opts(), dir.path()).unwrap_err();
    assert!(matches!(err, EvalError::Config(_)), "{err:?}");
    assert!(!dir.path().join("results.csv").exists());
}
