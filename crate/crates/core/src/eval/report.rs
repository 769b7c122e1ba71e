//! Report tables regenerated purely from persisted results.
//!
//! Formatting: accuracy 6 decimals, runtime 1 decimal (seconds), CI bounds
//! 4 decimals, Δ-accuracy 4 decimals with sign, Δ-runtime 2 decimals with
//! sign, throughput 3 decimals, p-values 6 significant digits.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::grid::RunResult;
use super::stats::{ci95, mcnemar, throughput, CiMethod, McNemarMethod, PairedComparison};
use super::table::{technique_deltas, write_results, Axis, ResultRow, TechniqueDelta};
use super::{write_atomic, EvalError};

pub const LEADERBOARD: &str = "leaderboard.csv";
pub const BASELINE: &str = "baseline.csv";
pub const TOP_CONFIGS: &str = "top_configs.csv";
pub const DELTAS: &str = "technique_deltas.csv";
pub const MCNEMAR: &str = "mcnemar.csv";
pub const TRADEOFF: &str = "tradeoff.csv";
pub const REPORT_MD: &str = "report.md";

/// Techniques in report order: (title, axis).
pub const TECHNIQUES: [(&str, Axis); 5] = [
    ("Reranker (On vs Off)", Axis::Reranker),
    ("Reformulation (On vs Off)", Axis::Reformulation),
    ("Hybrid vs Dense", Axis::RetrievalMode),
    ("Coarse k20 vs Off", Axis::CoarseMode),
    ("MedEmbed vs BGE", Axis::Index),
];

#[derive(Debug, Clone)]
pub struct ReportInput {
    pub rows: Vec<ResultRow>,
    /// Runs with per-item logs; needed for McNemar comparisons.
    pub runs: Vec<RunResult>,
    /// Items per run, for CIs and throughput. Taken from `runs` when absent.
    pub n_items: Option<usize>,
    pub ci: CiMethod,
    pub mcnemar: McNemarMethod,
    /// Rows in the CI-annotated top-configurations table.
    pub top_n: usize,
}

impl ReportInput {
    pub fn new(rows: Vec<ResultRow>) -> Self {
        Self {
            rows,
            runs: Vec::new(),
            n_items: None,
            ci: CiMethod::Wald,
            mcnemar: McNemarMethod::Auto,
            top_n: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub files: Vec<PathBuf>,
    pub deltas: Vec<(String, TechniqueDelta)>,
    pub comparisons: Vec<PairedComparison>,
    pub notes: Vec<String>,
}

fn csv_bytes(header: &[&str], records: &[Vec<String>]) -> Result<Vec<u8>, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| EvalError::Io(e.into());
    w.write_record(header).map_err(io)?;
    for r in records {
        w.write_record(r).map_err(io)?;
    }
    w.into_inner().map_err(|e| EvalError::Io(e.into_error()))
}

/// Rows sorted by accuracy, best first; ties keep input order.
pub fn leaderboard(rows: &[ResultRow]) -> Vec<ResultRow> {
    let mut out = rows.to_vec();
    out.sort_by(|a, b| b.accuracy.total_cmp(&a.accuracy));
    out
}

/// NO RAG versus the most accurate RAG run with the same model and prompt
/// mode. Without baselines, the runner-up is compared against the best run.
pub fn default_comparisons(
    runs: &[RunResult],
    method: McNemarMethod,
) -> Result<Vec<PairedComparison>, EvalError> {
    let with_items: Vec<&RunResult> = runs.iter().filter(|r| !r.items.is_empty()).collect();
    fn best(pool: Vec<&RunResult>) -> Option<&RunResult> {
        pool.into_iter().fold(None, |acc, r| match acc {
            Some(a) if a.accuracy >= r.accuracy => Some(a),
            _ => Some(r),
        })
    }
    let mut out = Vec::new();
    let baselines: Vec<&RunResult> = with_items
        .iter()
        .copied()
        .filter(|r| r.config.rag.is_none())
        .collect();
    for base in &baselines {
        let pool = with_items
            .iter()
            .copied()
            .filter(|r| {
                r.config.rag.is_some()
                    && r.config.llm_model == base.config.llm_model
                    && r.config.prompt_mode == base.config.prompt_mode
            })
            .collect();
        if let Some(top) = best(pool) {
            let name = format!("{} vs {}", base.row().describe(), top.row().describe());
            out.push(mcnemar(&name, &base.items, &top.items, method)?);
        }
    }
    if baselines.is_empty() && with_items.len() >= 2 {
        let mut sorted = with_items.clone();
        sorted.sort_by(|a, b| b.accuracy.total_cmp(&a.accuracy));
        let name = format!(
            "{} vs {}",
            sorted[1].row().describe(),
            sorted[0].row().describe()
        );
        out.push(mcnemar(&name, &sorted[1].items, &sorted[0].items, method)?);
    }
    Ok(out)
}

/// Writes every report table under `out_dir`.
pub fn emit_report(input: &ReportInput, out_dir: &Path) -> Result<Report, EvalError> {
    if input.rows.is_empty() {
        return Err(EvalError::Empty("results table is empty"));
    }
    let mut notes = Vec::new();
    let mut files = Vec::new();
    let mut put = |name: &str, bytes: Vec<u8>| -> Result<(), EvalError> {
        let p = out_dir.join(name);
        write_atomic(&p, &bytes)?;
        files.push(p);
        Ok(())
    };

    let n = input.n_items.or_else(|| {
        let first = input.runs.first()?.n;
        input.runs.iter().all(|r| r.n == first).then_some(first)
    });
    if n.is_none() {
        notes.push(
            "Item count unknown: confidence intervals and throughput are left blank.".to_string(),
        );
    }

    // (a) leaderboard
    let board = leaderboard(&input.rows);
    let mut buf = Vec::new();
    write_results(&mut buf, &board)?;
    put(LEADERBOARD, buf)?;

    // (b) no-retrieval baselines
    let baselines: Vec<Vec<String>> = input
        .rows
        .iter()
        .filter(|r| !r.is_rag())
        .map(|r| {
            let tp = n
                .and_then(|n| throughput(n, r.runtime).ok())
                .map(|t| format!("{t:.3}"))
                .unwrap_or_default();
            vec![
                r.llm_model.clone(),
                r.prompt_mode.clone(),
                format!("{:.6}", r.accuracy),
                format!("{:.1}", r.runtime),
                tp,
            ]
        })
        .collect();
    if baselines.is_empty() {
        notes.push("No NO RAG rows: the baseline table is empty.".to_string());
    }
    put(
        BASELINE,
        csv_bytes(
            &[
                "llm_model",
                "prompt_mode",
                "accuracy",
                "runtime",
                "throughput",
            ],
            &baselines,
        )?,
    )?;

    // (c) top configurations with confidence intervals
    let top: Vec<Vec<String>> = board
        .iter()
        .filter(|r| r.is_rag())
        .take(input.top_n)
        .enumerate()
        .map(|(i, r)| {
            let (lo, hi) = match n {
                Some(n) => {
                    let (lo, hi) = ci95(input.ci, r.accuracy, n);
                    (format!("{lo:.4}"), format!("{hi:.4}"))
                }
                None => (String::new(), String::new()),
            };
            let mut rec = vec![(i + 1).to_string()];
            rec.extend(r.labels().iter().map(|s| s.to_string()));
            rec.extend([
                format!("{:.6}", r.accuracy),
                lo,
                hi,
                format!("{:.1}", r.runtime),
            ]);
            rec
        })
        .collect();
    let mut top_header = vec!["rank"];
    top_header.extend(Axis::ALL.map(Axis::column));
    top_header.extend(["accuracy", "ci_lo", "ci_hi", "runtime"]);
    put(TOP_CONFIGS, csv_bytes(&top_header, &top)?)?;

    // (d) technique deltas
    let mut deltas = Vec::new();
    for (title, axis) in TECHNIQUES {
        match technique_deltas(&input.rows, axis) {
            Ok(d) => deltas.push((title.to_string(), d)),
            Err(EvalError::NoPairs { .. }) => {
                notes.push(format!("{title}: no matched pairs, row omitted."))
            }
            Err(e) => return Err(e),
        }
    }
    if deltas.is_empty() {
        notes.push(
            "The technique-delta table is empty: no two rows differ in exactly one axis."
                .to_string(),
        );
    }
    let recs: Vec<Vec<String>> = deltas
        .iter()
        .map(|(title, d)| {
            vec![
                title.clone(),
                d.axis.to_string(),
                d.first.clone(),
                d.second.clone(),
                format!("{:+.4}", d.mean_delta_accuracy),
                format!("{:+.2}", d.mean_delta_runtime),
                d.pairs.to_string(),
            ]
        })
        .collect();
    put(
        DELTAS,
        csv_bytes(
            &[
                "technique",
                "axis",
                "first",
                "second",
                "delta_accuracy",
                "delta_runtime",
                "pairs",
            ],
            &recs,
        )?,
    )?;

    // (e) McNemar
    let comparisons = default_comparisons(&input.runs, input.mcnemar)?;
    if comparisons.is_empty() {
        notes.push("No pair of runs with per-item logs: the McNemar table is empty.".to_string());
    }
    let recs: Vec<Vec<String>> = comparisons
        .iter()
        .map(|c| {
            vec![
                c.name.clone(),
                c.n.to_string(),
                c.b.to_string(),
                c.c.to_string(),
                format!("{:+.4}", c.delta_acc),
                format!("{:.6}", sig6(c.p_value)),
                method_name(c.method).to_string(),
            ]
        })
        .collect();
    put(
        MCNEMAR,
        csv_bytes(
            &[
                "comparison",
                "n",
                "b",
                "c",
                "delta_accuracy",
                "p_value",
                "method",
            ],
            &recs,
        )?,
    )?;

    // (f) accuracy–runtime tradeoff
    let recs: Vec<Vec<String>> = input
        .rows
        .iter()
        .map(|r| {
            let log = if r.runtime > 0.0 {
                format!("{:.4}", r.runtime.log10())
            } else {
                String::new()
            };
            vec![
                r.describe(),
                r.family.clone(),
                format!("{:.6}", r.accuracy),
                format!("{:.1}", r.runtime),
                log,
            ]
        })
        .collect();
    put(
        TRADEOFF,
        csv_bytes(
            &["label", "family", "accuracy", "runtime", "log10_runtime"],
            &recs,
        )?,
    )?;

    let md = markdown(&board, &deltas, &comparisons, &notes, n, input);
    put(REPORT_MD, md.into_bytes())?;

    Ok(Report {
        files,
        deltas,
        comparisons,
        notes,
    })
}

fn method_name(m: McNemarMethod) -> &'static str {
    match m {
        McNemarMethod::Exact => "exact",
        McNemarMethod::Chi2cc => "chi2cc",
        McNemarMethod::Auto => "auto",
    }
}

fn sig6(p: f64) -> f64 {
    if p == 0.0 || !p.is_finite() {
        return p;
    }
    let mag = 10f64.powi(5 - p.abs().log10().floor() as i32);
    (p * mag).round() / mag
}

fn markdown(
    board: &[ResultRow],
    deltas: &[(String, TechniqueDelta)],
    comparisons: &[PairedComparison],
    notes: &[String],
    n: Option<usize>,
    input: &ReportInput,
) -> String {
    let mut s = String::from("# Evaluation report\n\n");
    let _ = writeln!(s, "{} configurations", board.len());
    if let Some(n) = n {
        let _ = writeln!(s, ", {n} items each");
    }
    s.push_str(
        "\n## Leaderboard\n\n| # | configuration | accuracy | runtime (s) |\n|---|---|---|---|\n",
    );
    for (i, r) in board.iter().enumerate() {
        let _ = writeln!(
            s,
            "| {} | {} | {:.6} | {:.1} |",
            i + 1,
            r.describe(),
            r.accuracy,
            r.runtime
        );
    }
    if let Some(n) = n {
        s.push_str(
            "\n## Top configurations\n\n| configuration | accuracy | 95% CI |\n|---|---|---|\n",
        );
        for r in board.iter().filter(|r| r.is_rag()).take(input.top_n) {
            let (lo, hi) = ci95(input.ci, r.accuracy, n);
            let _ = writeln!(
                s,
                "| {} | {:.6} | {:.4} – {:.4} |",
                r.describe(),
                r.accuracy,
                lo,
                hi
            );
        }
    }
    s.push_str("\n## Technique deltas\n\n| technique | Δ accuracy | Δ runtime (s) | pairs |\n|---|---|---|---|\n");
    for (title, d) in deltas {
        let _ = writeln!(
            s,
            "| {title} | {:+.4} | {:+.2} | {} |",
            d.mean_delta_accuracy, d.mean_delta_runtime, d.pairs
        );
    }
    if !comparisons.is_empty() {
        s.push_str("\n## McNemar\n\n| comparison | b | c | Δ accuracy | p | method |\n|---|---|---|---|---|---|\n");
        for c in comparisons {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {:+.4} | {} | {} |",
                c.name,
                c.b,
                c.c,
                c.delta_acc,
                sig6(c.p_value),
                method_name(c.method)
            );
        }
    }
    if !notes.is_empty() {
        s.push_str("\n## Notes\n\n");
        for note in notes {
            let _ = writeln!(s, "- {note}");
        }
    }
    s
}
