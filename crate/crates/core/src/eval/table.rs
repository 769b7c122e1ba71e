//! The results table: one row per evaluated configuration, in the shape of
//! the reference configuration grid, plus matched-pair technique deltas.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::EvalError;

pub const RESULTS_HEADER: [&str; 10] = [
    "family",
    "index",
    "retrieval_mode",
    "coarse_mode",
    "reranker",
    "reformulation",
    "prompt_mode",
    "llm_model",
    "accuracy",
    "runtime",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub family: String,
    pub index: String,
    pub retrieval_mode: String,
    pub coarse_mode: String,
    pub reranker: String,
    pub reformulation: String,
    pub prompt_mode: String,
    pub llm_model: String,
    pub accuracy: f64,
    /// Seconds.
    pub runtime: f64,
}

/// Label comparison key: trimmed, lowercased, trailing underscores removed
/// (the reference grid has one `llama3_`).
pub fn norm_label(s: &str) -> String {
    s.trim().trim_end_matches('_').trim().to_lowercase()
}

impl ResultRow {
    pub fn get(&self, axis: Axis) -> &str {
        match axis {
            Axis::Family => &self.family,
            Axis::Index => &self.index,
            Axis::RetrievalMode => &self.retrieval_mode,
            Axis::CoarseMode => &self.coarse_mode,
            Axis::Reranker => &self.reranker,
            Axis::Reformulation => &self.reformulation,
            Axis::PromptMode => &self.prompt_mode,
            Axis::LlmModel => &self.llm_model,
        }
    }

    pub fn labels(&self) -> [&str; 8] {
        Axis::ALL.map(|a| self.get(a))
    }

    /// Normalized labels; two rows describe the same configuration iff their
    /// keys are equal.
    pub fn key(&self) -> Vec<String> {
        self.labels().iter().map(|l| norm_label(l)).collect()
    }

    pub fn is_rag(&self) -> bool {
        norm_label(&self.family) == "rag"
    }

    /// Short human-readable configuration label.
    pub fn describe(&self) -> String {
        if !self.is_rag() {
            return format!("NO RAG / {} / {}", self.prompt_mode, self.llm_model);
        }
        format!(
            "RAG {} {} coarse={} rerank={} reform={} / {} / {}",
            self.index,
            self.retrieval_mode,
            self.coarse_mode,
            self.reranker,
            self.reformulation,
            self.prompt_mode,
            self.llm_model
        )
    }

    fn record(&self) -> [String; 10] {
        [
            self.family.clone(),
            self.index.clone(),
            self.retrieval_mode.clone(),
            self.coarse_mode.clone(),
            self.reranker.clone(),
            self.reformulation.clone(),
            self.prompt_mode.clone(),
            self.llm_model.clone(),
            format!("{:.6}", self.accuracy),
            format!("{:.1}", self.runtime),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Family,
    Index,
    RetrievalMode,
    CoarseMode,
    Reranker,
    Reformulation,
    PromptMode,
    LlmModel,
}

impl Axis {
    pub const ALL: [Axis; 8] = [
        Axis::Family,
        Axis::Index,
        Axis::RetrievalMode,
        Axis::CoarseMode,
        Axis::Reranker,
        Axis::Reformulation,
        Axis::PromptMode,
        Axis::LlmModel,
    ];

    pub fn column(self) -> &'static str {
        RESULTS_HEADER[self as usize]
    }

    /// Default (first, second) labels compared along this axis.
    pub fn preset(self) -> Option<(&'static str, &'static str)> {
        match self {
            Axis::Reranker | Axis::Reformulation | Axis::CoarseMode => Some(("on", "off")),
            Axis::RetrievalMode => Some(("hybrid", "dense")),
            Axis::Index => Some(("medembed", "bge")),
            _ => None,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.column())
    }
}

impl FromStr for Axis {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let n = norm_label(s).replace('-', "_");
        let n = match n.as_str() {
            "coarse" => "coarse_mode",
            "retrieval" | "hybrid" => "retrieval_mode",
            "reform" => "reformulation",
            "rerank" => "reranker",
            "embedding" | "embedder" => "index",
            other => other,
        };
        Axis::ALL
            .into_iter()
            .find(|a| a.column() == n)
            .ok_or_else(|| EvalError::InvalidArgument(format!("unknown axis {s:?}")))
    }
}

/// Reads a results CSV. Header names are matched case-insensitively and
/// may come in any order; extra columns are ignored.
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>, EvalError> {
    let file = std::fs::File::open(path)?;
    read_results_from(file)
}

pub fn read_results_from<R: std::io::Read>(reader: R) -> Result<Vec<ResultRow>, EvalError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let table_err = |line: usize, msg: String| EvalError::Table { line, msg };
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| table_err(1, e.to_string()))?
        .iter()
        .map(norm_label)
        .collect();
    let mut cols = [0usize; 10];
    for (slot, want) in cols.iter_mut().zip(RESULTS_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h == want)
            .ok_or_else(|| table_err(1, format!("missing column {want:?}")))?;
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| table_err(line, e.to_string()))?;
        let field = |k: usize| rec.get(cols[k]).unwrap_or("").to_string();
        let num = |k: usize| -> Result<f64, EvalError> {
            let raw = field(k);
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    table_err(
                        line,
                        format!("{} is not a number: {raw:?}", RESULTS_HEADER[k]),
                    )
                })
        };
        rows.push(ResultRow {
            family: field(0),
            index: field(1),
            retrieval_mode: field(2),
            coarse_mode: field(3),
            reranker: field(4),
            reformulation: field(5),
            prompt_mode: field(6),
            llm_model: field(7),
            accuracy: num(8)?,
            runtime: num(9)?,
        });
    }
    Ok(rows)
}

pub fn write_results<W: Write>(w: W, rows: &[ResultRow]) -> Result<(), EvalError> {
    let mut wtr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| EvalError::Io(e.into());
    wtr.write_record(RESULTS_HEADER).map_err(io)?;
    for r in rows {
        wtr.write_record(r.record()).map_err(io)?;
    }
    wtr.flush()?;
    Ok(())
}

/// One matched pair: two rows identical on every axis except `axis`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedPair {
    pub first: usize,
    pub second: usize,
    pub delta_accuracy: f64,
    pub delta_runtime: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TechniqueDelta {
    pub axis: Axis,
    pub first: String,
    pub second: String,
    pub mean_delta_accuracy: f64,
    pub mean_delta_runtime: f64,
    pub pairs: usize,
}

/// All matched pairs along `axis`, with Δ = value(first) − value(second).
/// Rows whose labels equal neither `first` nor `second`, or that have no
/// partner, are ignored.
pub fn matched_pairs(
    rows: &[ResultRow],
    axis: Axis,
    first: &str,
    second: &str,
) -> Vec<MatchedPair> {
    let (first, second) = (norm_label(first), norm_label(second));
    let others: Vec<Axis> = Axis::ALL.into_iter().filter(|a| *a != axis).collect();
    let rest = |r: &ResultRow| {
        others
            .iter()
            .map(|a| norm_label(r.get(*a)))
            .collect::<Vec<_>>()
    };
    let mut out = Vec::new();
    for (i, a) in rows.iter().enumerate() {
        if norm_label(a.get(axis)) != first {
            continue;
        }
        let ka = rest(a);
        for (j, b) in rows.iter().enumerate() {
            if norm_label(b.get(axis)) == second && rest(b) == ka {
                out.push(MatchedPair {
                    first: i,
                    second: j,
                    delta_accuracy: a.accuracy - b.accuracy,
                    delta_runtime: a.runtime - b.runtime,
                });
            }
        }
    }
    out
}

/// Mean paired difference along `axis` using its preset labels.
pub fn technique_deltas(rows: &[ResultRow], axis: Axis) -> Result<TechniqueDelta, EvalError> {
    let (first, second) = axis.preset().ok_or_else(|| {
        EvalError::InvalidArgument(format!("axis {axis} has no preset comparison"))
    })?;
    technique_deltas_between(rows, axis, first, second)
}

pub fn technique_deltas_between(
    rows: &[ResultRow],
    axis: Axis,
    first: &str,
    second: &str,
) -> Result<TechniqueDelta, EvalError> {
    let pairs = matched_pairs(rows, axis, first, second);
    if pairs.is_empty() {
        return Err(EvalError::NoPairs {
            axis: axis.to_string(),
        });
    }
    let n = pairs.len() as f64;
    Ok(TechniqueDelta {
        axis,
        first: first.to_string(),
        second: second.to_string(),
        mean_delta_accuracy: pairs.iter().map(|p| p.delta_accuracy).sum::<f64>() / n,
        mean_delta_runtime: pairs.iter().map(|p| p.delta_runtime).sum::<f64>() / n,
        pairs: pairs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(labels: [&str; 8], acc: f64, rt: f64) -> ResultRow {
        let s = |i: usize| labels[i].to_string();
        ResultRow {
            family: s(0),
            index: s(1),
            retrieval_mode: s(2),
            coarse_mode: s(3),
            reranker: s(4),
            reformulation: s(5),
            prompt_mode: s(6),
            llm_model: s(7),
            accuracy: acc,
            runtime: rt,
        }
    }

    #[test]
    fn header_case_and_order_insensitive() {
        let csv = "Runtime,ACCURACY,llm_model,prompt_mode,Reformulation,reranker,coarse_mode,retrieval_mode,index,family\n\
                   10.5,0.5,llama3,Zero shot,on,off,on,dense,bge,RAG\n";
        let rows = read_results_from(csv.as_bytes()).unwrap();
        assert_eq!(rows[0].reformulation, "on");
        assert_eq!(rows[0].runtime, 10.5);
        assert!(matches!(
            read_results_from("family,index\nRAG,bge\n".as_bytes()),
            Err(EvalError::Table { line: 1, .. })
        ));
    }

    #[test]
    fn roundtrip_formats() {
        let rows = vec![row(
            [
                "RAG",
                "bge",
                "dense",
                "on",
                "on",
                "on",
                "Zero shot",
                "llama3",
            ],
            770.0 / 1273.0,
            843.66,
        )];
        let mut buf = Vec::new();
        write_results(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(
            text.ends_with("RAG,bge,dense,on,on,on,Zero shot,llama3,0.604870,843.7\n"),
            "{text}"
        );
        let back = read_results_from(text.as_bytes()).unwrap();
        assert_eq!(back[0].key(), rows[0].key());
    }

    #[test]
    fn pairs_ignore_unmatched_and_normalize_labels() {
        let rows = vec![
            row(
                [
                    "RAG",
                    "bge",
                    "dense",
                    "on",
                    "on",
                    "on",
                    "Zero shot",
                    "llama3",
                ],
                0.6,
                100.0,
            ),
            row(
                [
                    "RAG",
                    "bge",
                    "dense",
                    "on",
                    "off",
                    "on",
                    "Zero shot",
                    "llama3_",
                ],
                0.5,
                40.0,
            ),
            row(
                [
                    "RAG",
                    "bge",
                    "dense",
                    "off",
                    "on",
                    "on",
                    "Zero shot",
                    "llama3",
                ],
                0.7,
                10.0,
            ),
        ];
        let d = technique_deltas(&rows, Axis::Reranker).unwrap();
        assert_eq!(d.pairs, 1);
        assert!((d.mean_delta_accuracy - 0.1).abs() < 1e-12);
        assert!((d.mean_delta_runtime - 60.0).abs() < 1e-12);
        assert!(matches!(
            technique_deltas(&rows, Axis::RetrievalMode),
            Err(EvalError::NoPairs { .. })
        ));
    }

    #[test]
    fn axis_names() {
        assert_eq!(
            "Reformulation".parse::<Axis>().unwrap(),
            Axis::Reformulation
        );
        assert_eq!("coarse".parse::<Axis>().unwrap(), Axis::CoarseMode);
        assert!("colour".parse::<Axis>().is_err());
    }
}
