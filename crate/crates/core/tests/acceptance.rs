//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs under `cargo test` (custom harness).

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use medrag_core::corpus::{chunk_section, ingest, load_documents};
use medrag_core::corpus::{ends_with_terminal, split_sentences};
use medrag_core::eval::grid::{
    run_grid, EvalOptions, EvalResources, GridSpec, IndexResource, RESULTS_FILE,
};
use medrag_core::eval::stats::{mcnemar_exact_p, round6};
use medrag_core::eval::table::{matched_pairs, read_results, technique_deltas, Axis, ResultRow};
use medrag_core::eval::{load_dataset, throughput, wald_ci95, EvalError};
use medrag_core::index::{normalize, Bm25Params, DenseIndex, SparseIndex};
use medrag_core::par::Exec;
use medrag_core::providers::{
    embed_texts, EmbedItem, Embedder, MockEmbedder, OverlapGenerator, OverlapReranker,
};
use medrag_core::retrieval::{
    retrieve_fine, rrf_fuse, IndexSet, QueryBundle, RetrievalConfig, RetrievalMode,
};
use medrag_core::timing::Timing;
use medrag_core::tokenize::{terms, Tokenizer, WordPunctTokenizer};
use medrag_core::{ChunkRecord, ChunkingParams, Section};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn close(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure(
        (got - want).abs() <= tol,
        format!("{name}: got {got:.6}, want {want} ± {tol}"),
    )
}

fn manifest() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn fixture_rows() -> Vec<ResultRow> {
    read_results(&manifest().join("fixtures/reference_grid.csv")).expect("fixture loads")
}

// ---------------------------------------------------------------- statistics

fn wald_intervals() -> Check {
    // reference intervals, as fractions
    for (acc, lo, hi) in [(0.6049, 0.5780, 0.6317), (0.5907, 0.5637, 0.6177)] {
        let (l, h) = wald_ci95(acc, 1273);
        close("lower", l, lo, 0.0005)?;
        close("upper", h, hi, 0.0005)?;
    }
    let a = wald_ci95(0.6049, 1273);
    let b = wald_ci95(0.5907, 1273);
    Ok(format!(
        "({:.4}, {:.4}) and ({:.4}, {:.4})",
        a.0, a.1, b.0, b.1
    ))
}

fn technique_table() -> Check {
    let rows = fixture_rows();
    ensure(
        rows.len() == 41,
        format!("fixture has {} rows, expected 41", rows.len()),
    )?;
    let expected = [
        (Axis::Reranker, 0.0135, 107.19),
        (Axis::Reformulation, 0.0091, 451.33),
        (Axis::RetrievalMode, -0.0185, 3079.69),
        (Axis::CoarseMode, 0.0003, -21.27),
    ];
    let mut out = Vec::new();
    for (axis, acc, rt) in expected {
        let d = technique_deltas(&rows, axis).map_err(|e| e.to_string())?;
        close(&format!("{axis} Δacc"), d.mean_delta_accuracy, acc, 0.0005)?;
        close(&format!("{axis} Δruntime"), d.mean_delta_runtime, rt, 0.5)?;
        out.push(format!(
            "{axis} {:+.4}/{:+.2} ({} pairs)",
            d.mean_delta_accuracy, d.mean_delta_runtime, d.pairs
        ));
    }
    Ok(out.join("; "))
}

fn embedder_pairs() -> Check {
    let rows: Vec<ResultRow> = fixture_rows()
        .into_iter()
        .filter(|r| {
            r.retrieval_mode == "dense"
                && r.reformulation == "on"
                && r.llm_model.trim_end_matches('_') == "llama3"
                && r.prompt_mode == "Zero shot"
        })
        .collect();
    let pairs = matched_pairs(&rows, Axis::Index, "medembed", "bge");
    ensure(
        pairs.len() == 4,
        format!("{} matched configurations, expected 4", pairs.len()),
    )?;
    let spot = pairs
        .iter()
        .find(|p| rows[p.first].coarse_mode == "off" && rows[p.first].reranker == "on")
        .ok_or("no coarse-off/reranker-on pair")?;
    close(
        "coarse off + reranker on",
        spot.delta_accuracy,
        0.0039,
        0.0001,
    )?;
    let mean = pairs.iter().map(|p| p.delta_accuracy).sum::<f64>() / pairs.len() as f64;
    close("mean", mean, 0.0010, 0.0002)?;
    let wins = pairs.iter().filter(|p| p.delta_accuracy > 0.0).count();
    Ok(format!(
        "spot {:+.4}, mean {mean:+.4}, MedEmbed ahead in {wins}/4",
        spot.delta_accuracy
    ))
}

fn throughput_identity() -> Check {
    let mut got = Vec::new();
    for (rt, want) in [(148.0, 8.603), (94.9, 13.420), (3154.3, 0.404)] {
        let t = throughput(1273, rt).map_err(|e| e.to_string())?;
        close(&format!("1273/{rt}"), t, want, 0.02)?;
        got.push(format!("{t:.3}"));
    }
    Ok(got.join(", "))
}

fn accuracy_quantization() -> Check {
    let rows = fixture_rows();
    for r in &rows {
        let k = (r.accuracy * 1273.0).round();
        ensure(
            (round6(k / 1273.0) - r.accuracy).abs() < 5e-7,
            format!("{} is not k/1273 to 6 decimals", r.accuracy),
        )?;
    }
    Ok(format!("{} accuracies are k/1273", rows.len()))
}

fn mcnemar_oracle() -> Check {
    let mut checked = 0;
    for n in 0..=20u32 {
        // brute force: enumerate every outcome of n fair coin flips
        let mut hist = vec![0u64; n as usize + 1];
        for bits in 0u32..(1 << n) {
            hist[bits.count_ones() as usize] += 1;
        }
        let total = f64::from(1u32 << n);
        for b in 0..=n {
            let c = n - b;
            let tail: u64 = hist[..=b.min(c) as usize].iter().sum();
            let oracle = if n == 0 {
                1.0
            } else {
                (2.0 * tail as f64 / total).min(1.0)
            };
            let p = mcnemar_exact_p(u64::from(b), u64::from(c));
            ensure(
                (p - oracle).abs() <= 1e-12,
                format!("b={b} c={c}: {p} vs {oracle}"),
            )?;
            checked += 1;
        }
    }
    ensure(mcnemar_exact_p(0, 0) == 1.0, "b+c=0 must give p=1")?;
    Ok(format!("{checked} (b, c) pairs with b+c ≤ 20"))
}

// ------------------------------------------------------------------ chunking

const WORDS: [&str; 16] = [
    "artery",
    "renal",
    "insulin",
    "cortex",
    "fever",
    "lesion",
    "dose",
    "acute",
    "chronic",
    "valve",
    "sepsis",
    "node",
    "ventricle",
    "ab",
    "mmhg",
    "42",
];

fn random_sentence(rng: &mut ChaCha8Rng, len: usize) -> String {
    let mut words = vec![format!("Q{}", rng.random_range(0..1000))];
    for _ in 1..len.saturating_sub(1).max(1) {
        words.push(WORDS[rng.random_range(0..WORDS.len())].to_string());
    }
    let end = ['.', '?', '!'][rng.random_range(0..3)];
    format!("{}{end}", words.join(" "))
}

fn chunker_properties() -> Check {
    let tok = WordPunctTokenizer;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut chunks_seen = 0;
    let mut flagged = 0;
    for case in 0..200 {
        let max = rng.random_range(30..140);
        let params = ChunkingParams {
            max_tokens: max,
            min_paragraph_tokens: 1,
            min_chunk_tokens: rng.random_range(1..max / 2),
        };
        let mut sentences = Vec::new();
        let mut paragraphs = Vec::new();
        for _ in 0..rng.random_range(1..5) {
            let mut para = Vec::new();
            for _ in 0..rng.random_range(1..8) {
                let len = if rng.random_bool(0.08) {
                    rng.random_range(max..max * 2)
                } else {
                    rng.random_range(3..max / 2)
                };
                para.push(random_sentence(&mut rng, len));
            }
            sentences.extend(para.iter().cloned());
            paragraphs.push(para.join(" "));
        }
        let section = Section {
            book_name: "B".into(),
            chapter_title: "C".into(),
            section_title: format!("S{case}"),
            paragraphs,
            section_id: format!("B/C/S{case}"),
        };
        let chunks = chunk_section(&section, &params, &tok);
        ensure(
            chunks == chunk_section(&section, &params, &tok),
            format!("case {case}: nondeterministic"),
        )?;
        let mut rebuilt = Vec::new();
        for c in &chunks {
            ensure(
                ends_with_terminal(&c.text),
                format!("case {case}: {} ends mid-sentence", c.chunk_id),
            )?;
            let parts = split_sentences(&c.text);
            if c.oversized {
                ensure(
                    parts.len() == 1 && tok.count(&c.text) > max,
                    format!("case {case}: bad oversized flag"),
                )?;
                flagged += 1;
            } else {
                ensure(
                    c.n_tokens <= max,
                    format!(
                        "case {case}: {} has {} > {max} tokens",
                        c.chunk_id, c.n_tokens
                    ),
                )?;
            }
            ensure(
                c.n_tokens == tok.count(&c.text),
                format!("case {case}: stale token count"),
            )?;
            rebuilt.extend(parts);
        }
        ensure(
            rebuilt == sentences,
            format!("case {case}: sentences not preserved in order"),
        )?;
        chunks_seen += chunks.len();
    }
    Ok(format!(
        "200 sections, {chunks_seen} chunks, {flagged} flagged oversized"
    ))
}

// ----------------------------------------------------------------- retrieval

fn synthetic_chunks(n: usize, seed: u64) -> Vec<ChunkRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let len = rng.random_range(6..30);
            let text = random_sentence(&mut rng, len);
            ChunkRecord {
                chunk_id: format!("book/ch{}/sec{}#{:04}", i % 7, i % 31, i),
                n_tokens: WordPunctTokenizer.count(&text),
                text,
                book: "book".into(),
                chapter: format!("ch{}", i % 7),
                section: format!("sec{}", i % 31),
                oversized: false,
            }
        })
        .collect()
}

/// Exhaustive ranking over unit-normalized rows: every score, full sort.
fn exhaustive_dense(rows: &[(String, Vec<f32>)], q: &[f32], k: usize) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = rows
        .iter()
        .map(|(id, v)| {
            (
                id.clone(),
                v.iter()
                    .zip(q)
                    .map(|(a, b)| f64::from(*a) * f64::from(*b))
                    .sum(),
            )
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Okapi BM25 scored document by document, straight from the formula.
fn brute_bm25(chunks: &[ChunkRecord], query: &[String], k: usize) -> Vec<String> {
    let p = Bm25Params::default();
    let docs: Vec<Vec<String>> = chunks.iter().map(|c| terms(&c.text)).collect();
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|d| d.len() as f64).sum::<f64>() / n;
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for d in &docs {
        for t in d.iter().map(String::as_str).collect::<BTreeSet<_>>() {
            *df.entry(t).or_default() += 1;
        }
    }
    let raw: BTreeMap<&str, f64> = df
        .iter()
        .map(|(t, &f)| (*t, ((n - f as f64 + 0.5) / (f as f64 + 0.5)).ln()))
        .collect();
    let pos: Vec<f64> = raw.values().copied().filter(|v| *v > 0.0).collect();
    let floor = p.epsilon * pos.iter().sum::<f64>() / pos.len() as f64;
    let mut scored: Vec<(String, f64)> = Vec::new();
    for (c, d) in chunks.iter().zip(&docs) {
        let dl = d.len() as f64;
        let mut s = 0.0;
        for t in query {
            let Some(&idf) = raw.get(t.as_str()) else {
                continue;
            };
            let idf = if idf < 0.0 { floor } else { idf };
            let f = d.iter().filter(|x| *x == t).count() as f64;
            if f > 0.0 {
                s += idf * f * (p.k1 + 1.0) / (f + p.k1 * (1.0 - p.b + p.b * dl / avgdl));
            }
        }
        if s > 0.0 {
            scored.push((c.chunk_id.clone(), s));
        }
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.into_iter().take(k).map(|x| x.0).collect()
}

/// Reciprocal rank fusion written out longhand.
fn brute_rrf(lists: &[Vec<String>], k: usize, cut: usize) -> Vec<String> {
    let mut ids: BTreeSet<&String> = BTreeSet::new();
    lists.iter().flatten().for_each(|id| {
        ids.insert(id);
    });
    let mut scored: Vec<(String, f64)> = ids
        .into_iter()
        .map(|id| {
            let mut ranks: Vec<usize> = lists
                .iter()
                .filter_map(|l| l.iter().position(|x| x == id).map(|p| p + 1))
                .collect();
            ranks.sort();
            (id.clone(), ranks.iter().map(|r| 1.0 / (k + r) as f64).sum())
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.into_iter().take(cut).map(|x| x.0).collect()
}

fn retrieval_oracles() -> Check {
    let chunks = synthetic_chunks(800, 7);
    let embedder = MockEmbedder::new("oracle-mock");
    let dense =
        DenseIndex::build(&chunks, &embedder, Exec::default()).map_err(|e| e.to_string())?;
    let sparse = SparseIndex::build(&chunks, Bm25Params::default()).map_err(|e| e.to_string())?;
    let rows: Vec<(String, Vec<f32>)> = chunks
        .iter()
        .map(|c| {
            (
                c.chunk_id.clone(),
                normalize(&embedder.vector(&c.text)).unwrap(),
            )
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let cfg = RetrievalConfig {
        retrieval_mode: RetrievalMode::Hybrid,
        n_candidates: 40,
        ..RetrievalConfig::default()
    };
    for qi in 0..25 {
        let query = random_sentence(&mut rng, 8);
        let raw = embed_texts(&embedder, &[EmbedItem::text(&query)], Exec::Sequential).unwrap();
        let qv = normalize(&raw[0]).unwrap();

        let got = dense.search(&qv, 50).map_err(|e| e.to_string())?;
        let want = exhaustive_dense(&rows, &qv, 50);
        let same = got.len() == want.len()
            && got
                .iter()
                .zip(&want)
                .all(|(g, w)| g.chunk_id == w.0 && g.score == w.1);
        ensure(
            same,
            format!("query {qi}: dense ranking differs from exhaustive search"),
        )?;

        let bundle = QueryBundle {
            original: query.clone(),
            reformulated: None,
            query_vectors: vec![qv.clone()],
            query_terms: vec![terms(&query)],
        };
        let (fused, _) = retrieve_fine(&cfg, &bundle, &dense, Some(&sparse), None, Exec::default())
            .map_err(|e| e.to_string())?;
        let dense_ids: Vec<String> = exhaustive_dense(&rows, &qv, 40)
            .into_iter()
            .map(|x| x.0)
            .collect();
        let bm25_ids = brute_bm25(&chunks, &terms(&query), 40);
        let oracle = brute_rrf(&[dense_ids, bm25_ids], 60, 40);
        let got: Vec<String> = fused.into_iter().map(|c| c.chunk_id).collect();
        ensure(
            got == oracle,
            format!("query {qi}: hybrid fusion differs from brute-force RRF"),
        )?;
    }

    let abc = rrf_fuse(&[vec!["A", "B", "C"], vec!["C", "A", "B"]], 60);
    let order: Vec<&str> = abc.iter().map(|c| c.chunk_id.as_str()).collect();
    ensure(order == ["A", "C", "B"], format!("rrf order {order:?}"))?;
    close("A", abc[0].score, 1.0 / 61.0 + 1.0 / 62.0, 1e-15)?;
    close("C", abc[1].score, 1.0 / 61.0 + 1.0 / 63.0, 1e-15)?;
    Ok("800 chunks, 25 queries: dense = exhaustive, hybrid = brute-force RRF; [A,B,C]+[C,A,B] → A, C, B".into())
}

// --------------------------------------------------------------- end to end

fn demo_resources(demo: &Path) -> EvalResources {
    let docs = load_documents(&demo.join("corpus")).expect("demo corpus");
    let cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(demo.join("run.json")).unwrap()).unwrap();
    let params: ChunkingParams = serde_json::from_value(cfg["chunking"].clone()).unwrap();
    let chunks = ingest(&docs, &params, &WordPunctTokenizer, Exec::default()).expect("ingest");
    let mut res = EvalResources::default();
    for (name, tag, dim) in [("medembed", "medembed-mock", 64), ("bge", "bge-mock", 48)] {
        let embedder: Arc<dyn Embedder> = Arc::new(MockEmbedder::with_dim(tag, dim));
        let set = IndexSet::build(&chunks, embedder.as_ref(), true, true, Exec::default()).unwrap();
        res.indexes
            .insert(name.into(), IndexResource { set, embedder });
    }
    res.generators.insert(
        "llama3".into(),
        Arc::new(OverlapGenerator::new("llama3-mock")),
    );
    res.reranker = Some(Arc::new(OverlapReranker::new("overlap-reranker")));
    res
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    out.insert(
        RESULTS_FILE.to_string(),
        std::fs::read(dir.join(RESULTS_FILE)).unwrap_or_default(),
    );
    for e in std::fs::read_dir(dir.join("runs")).unwrap() {
        let p = e.unwrap().path();
        out.insert(
            p.file_name().unwrap().to_string_lossy().into_owned(),
            std::fs::read(&p).unwrap(),
        );
    }
    out
}

fn grid_determinism() -> Check {
    let demo = manifest().join("../../demo");
    let dataset = load_dataset(&demo.join("dataset.jsonl")).map_err(|e| e.to_string())?;
    ensure(
        dataset.len() == 12,
        format!("demo dataset has {} questions", dataset.len()),
    )?;
    let cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(demo.join("run.json")).unwrap()).unwrap();
    let spec: GridSpec = serde_json::from_value(cfg["grid"].clone()).map_err(|e| e.to_string())?;
    let n_configs = spec.configs().map_err(|e| e.to_string())?.len();
    ensure(
        n_configs == 8,
        format!("demo grid has {n_configs} configurations"),
    )?;
    let res = demo_resources(&demo);
    let opts = EvalOptions {
        timing: Timing::Virtual,
        max_in_flight: 4,
        ..EvalOptions::default()
    };

    let a = tempfile::tempdir().unwrap();
    let outcome = run_grid(&spec, &dataset, &res, &opts, a.path()).map_err(|e| e.to_string())?;
    ensure(
        outcome.failed.is_empty() && outcome.runs.len() == 8,
        "first run incomplete",
    )?;
    let with_evidence = outcome
        .runs
        .iter()
        .flat_map(|r| &r.items)
        .filter(|i| !i.evidence_chunk_ids.is_empty())
        .count();
    ensure(
        with_evidence == 96,
        format!("{with_evidence}/96 items carried evidence"),
    )?;

    // second run: killed after 30 items, a torn line left behind, resumed
    // with a different concurrency limit
    let b = tempfile::tempdir().unwrap();
    let killed = EvalOptions {
        stop_after: Some(30),
        ..opts
    };
    match run_grid(&spec, &dataset, &res, &killed, b.path()) {
        Err(EvalError::Interrupted { .. }) => {}
        other => return Err(format!("expected an interruption, got {other:?}")),
    }
    let partial: Vec<PathBuf> = std::fs::read_dir(b.path().join("runs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with(".items.jsonl"))
        .collect();
    let torn = partial.iter().max().unwrap();
    let mut bytes = std::fs::read(torn).unwrap();
    bytes.extend_from_slice(br#"{"qid":"demo-1"#);
    std::fs::write(torn, bytes).unwrap();
    let resumed = EvalOptions {
        max_in_flight: 1,
        ..opts
    };
    run_grid(&spec, &dataset, &res, &resumed, b.path()).map_err(|e| e.to_string())?;

    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    ensure(
        sa.len() == 17,
        format!("expected results.csv + 16 run files, found {}", sa.len()),
    )?;
    for (name, bytes) in &sa {
        ensure(
            sb.get(name) == Some(bytes),
            format!("{name} differs after kill and resume"),
        )?;
    }
    ensure(sa.keys().eq(sb.keys()), "file sets differ")?;
    Ok(format!(
        "8 configurations × 12 questions, {} files byte-identical after kill+resume",
        sa.len()
    ))
}

fn headline_scope() -> Check {
    // Headline benchmark accuracies need the licensed benchmark, the textbook
    // corpus and GPU inference; the full path runs on the demo instead.
    let demo = manifest().join("../../demo");
    let res = demo_resources(&demo);
    let dataset = load_dataset(&demo.join("dataset.jsonl")).map_err(|e| e.to_string())?;
    let cfg = medrag_core::eval::EvalConfig {
        rag: Some(medrag_core::eval::RagSetup {
            index: "medembed".into(),
            retrieval: RetrievalConfig {
                n_candidates: 20,
                top_passages: 3,
                context_token_budget: 300,
                ..Default::default()
            },
        }),
        prompt_mode: medrag_core::eval::PromptMode::Cot,
        llm_model: "llama3".into(),
    };
    let a = medrag_core::eval::answer_question(&dataset[0], &cfg, &res, Timing::Virtual)
        .map_err(|e| e.to_string())?;
    let trace = a.trace.ok_or("no retrieval trace")?;
    ensure(
        trace.stage_names() == ["embed_queries", "fine", "pack"],
        format!("stages {:?}", trace.stage_names()),
    )?;
    ensure(
        a.generation.contains("Answer:"),
        "CoT generation lacks a final answer line",
    )?;
    Ok("not reproducible at desk scale (documented); demo path ingest → retrieve → prompt → extract exercised".into())
}

type Criterion = (&'static str, fn() -> Check);

fn main() {
    let criteria: [Criterion; 10] = [
        ("wald-ci", wald_intervals),
        ("technique-deltas", technique_table),
        ("embedding-model-deltas", embedder_pairs),
        ("throughput", throughput_identity),
        ("accuracy-quantization", accuracy_quantization),
        ("mcnemar-oracle", mcnemar_oracle),
        ("chunker-properties", chunker_properties),
        ("retrieval-oracles", retrieval_oracles),
        ("grid-determinism", grid_determinism),
        ("headline-accuracies-scope", headline_scope),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let t = Instant::now();
        match f() {
            Ok(detail) => println!("PASS {name}: {detail} [{:.2}s]", t.elapsed().as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
