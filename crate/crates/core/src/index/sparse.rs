use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{top_k, Candidate, IndexError};
use crate::corpus::ChunkRecord;
use crate::tokenize::terms;

const FORMAT: &str = "medrag-sparse";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
    pub epsilon: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self {
            k1: 1.5,
            b: 0.75,
            epsilon: 0.25,
        }
    }
}

/// Okapi BM25 over lowercased alphanumeric terms.
///
/// `idf(t) = ln((N - df + 0.5) / (df + 0.5))`. Negative idfs (terms in more
/// than half the documents) are replaced by `epsilon` times the mean of the
/// positive idfs; when no idf is positive the mean of absolute idfs is used
/// so the floor stays positive.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseIndex {
    params: Bm25Params,
    chunk_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avgdl: f64,
    postings: BTreeMap<String, Vec<(u32, u32)>>,
    idf: BTreeMap<String, f64>,
}

#[derive(Serialize, Deserialize)]
struct SparseFile {
    format: String,
    version: u32,
    params: Bm25Params,
    chunk_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

impl SparseIndex {
    pub fn build(chunks: &[ChunkRecord], params: Bm25Params) -> Result<Self, IndexError> {
        if chunks.is_empty() {
            return Err(IndexError::Empty);
        }
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(chunks.len());
        for (ord, c) in chunks.iter().enumerate() {
            let ts = terms(&c.text);
            doc_lengths.push(ts.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in ts {
                *tf.entry(t).or_default() += 1;
            }
            for (t, f) in tf {
                postings.entry(t).or_default().push((ord as u32, f));
            }
        }
        let chunk_ids = chunks.iter().map(|c| c.chunk_id.clone()).collect();
        Self::from_parts(params, chunk_ids, doc_lengths, postings)
    }

    fn from_parts(
        params: Bm25Params,
        chunk_ids: Vec<String>,
        doc_lengths: Vec<u32>,
        postings: BTreeMap<String, Vec<(u32, u32)>>,
    ) -> Result<Self, IndexError> {
        let n = doc_lengths.len();
        if n == 0 || chunk_ids.len() != n {
            return Err(IndexError::Format(format!(
                "{} ids for {n} documents",
                chunk_ids.len()
            )));
        }
        if postings.values().flatten().any(|&(d, _)| d as usize >= n) {
            return Err(IndexError::Format(
                "posting refers to a missing document".into(),
            ));
        }
        let avgdl = doc_lengths.iter().map(|&l| f64::from(l)).sum::<f64>() / n as f64;
        let raw: BTreeMap<String, f64> = postings
            .iter()
            .map(|(t, p)| {
                let df = p.len() as f64;
                (t.clone(), ((n as f64 - df + 0.5) / (df + 0.5)).ln())
            })
            .collect();
        let positive: Vec<f64> = raw.values().copied().filter(|&v| v > 0.0).collect();
        let mean = if positive.is_empty() {
            raw.values().map(|v| v.abs()).sum::<f64>() / raw.len().max(1) as f64
        } else {
            positive.iter().sum::<f64>() / positive.len() as f64
        };
        let floor = params.epsilon * mean;
        let idf = raw
            .into_iter()
            .map(|(t, v)| (t, if v < 0.0 { floor } else { v }))
            .collect();
        Ok(Self {
            params,
            chunk_ids,
            doc_lengths,
            avgdl,
            postings,
            idf,
        })
    }

    pub fn len(&self) -> usize {
        self.chunk_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunk_ids.is_empty()
    }

    pub fn chunk_ids(&self) -> &[String] {
        &self.chunk_ids
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.idf.get(term).copied()
    }

    pub fn postings(&self, term: &str) -> &[(u32, u32)] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    /// BM25 score of every document for `query_terms` (repeated terms count
    /// once per occurrence).
    pub fn scores(&self, query_terms: &[String]) -> Vec<f64> {
        let Bm25Params { k1, b, .. } = self.params;
        let mut out = vec![0.0; self.len()];
        for t in query_terms {
            let Some(idf) = self.idf.get(t) else { continue };
            for &(d, f) in &self.postings[t] {
                let f = f64::from(f);
                let dl = f64::from(self.doc_lengths[d as usize]);
                out[d as usize] +=
                    idf * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * dl / self.avgdl));
            }
        }
        out
    }

    /// Top-`k` documents with positive score.
    pub fn search(&self, query_terms: &[String], k: usize) -> Vec<Candidate> {
        self.search_masked(query_terms, k, None)
    }

    pub fn search_masked(
        &self,
        query_terms: &[String],
        k: usize,
        mask: Option<&[bool]>,
    ) -> Vec<Candidate> {
        let scored = self
            .scores(query_terms)
            .into_iter()
            .enumerate()
            .filter(|&(i, s)| s > 0.0 && mask.is_none_or(|m| m[i]))
            .collect();
        top_k(scored, &self.chunk_ids, k)
    }

    /// Versioned JSON; idf values are recomputed on load.
    pub fn persist(&self, path: &Path) -> Result<(), IndexError> {
        let file = SparseFile {
            format: FORMAT.into(),
            version: VERSION,
            params: self.params,
            chunk_ids: self.chunk_ids.clone(),
            doc_lengths: self.doc_lengths.clone(),
            postings: self.postings.clone(),
        };
        let json = serde_json::to_vec(&file).map_err(std::io::Error::other)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let bytes = std::fs::read(path)?;
        let v: serde_json::Value = serde_json::from_slice(&bytes)
            .map_err(|e| IndexError::Truncated(format!("{}: {e}", path.display())))?;
        if v.get("format").and_then(|f| f.as_str()) != Some(FORMAT) {
            return Err(IndexError::BadMagic(path.display().to_string()));
        }
        let version = v.get("version").and_then(|x| x.as_u64()).unwrap_or(0) as u32;
        if version != VERSION {
            return Err(IndexError::Version {
                found: version,
                expected: VERSION,
            });
        }
        let f: SparseFile = serde_json::from_value(v)
            .map_err(|e| IndexError::Format(format!("{}: {e}", path.display())))?;
        Self::from_parts(f.params, f.chunk_ids, f.doc_lengths, f.postings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(texts: &[&str]) -> Vec<ChunkRecord> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| ChunkRecord {
                chunk_id: format!("d{i}"),
                text: t.to_string(),
                book: "b".into(),
                chapter: "c".into(),
                section: "s".into(),
                n_tokens: 0,
                oversized: false,
            })
            .collect()
    }

    fn q(s: &str) -> Vec<String> {
        terms(s)
    }

    #[test]
    fn one_doc_idf_is_floored_positive() {
        let idx = SparseIndex::build(&corpus(&["alpha beta"]), Bm25Params::default()).unwrap();
        // raw idf = ln(0.5 / 1.5) for both terms; floor = 0.25 * |ln(1/3)|
        let expected = 0.25 * (0.5f64 / 1.5).ln().abs();
        assert!((idx.idf("alpha").unwrap() - expected).abs() < 1e-12);
        assert!(idx.idf("alpha").unwrap() > 0.0);
    }

    #[test]
    fn rarer_term_has_higher_idf() {
        let idx = SparseIndex::build(&corpus(&["a b", "a c", "d"]), Bm25Params::default()).unwrap();
        // df(a) = 2: ln(1.5/2.5) < 0, floored; df(d) = 1: ln(2.5/1.5) > 0
        assert!(idx.idf("d").unwrap() > idx.idf("a").unwrap());
        let pos = (2.5f64 / 1.5).ln();
        assert!((idx.idf("d").unwrap() - pos).abs() < 1e-12);
        assert!((idx.idf("a").unwrap() - 0.25 * pos).abs() < 1e-12);
    }

    #[test]
    fn absent_terms() {
        let idx = SparseIndex::build(&corpus(&["a b", "c"]), Bm25Params::default()).unwrap();
        assert!(idx.search(&q("zzz"), 5).is_empty());
        assert_eq!(idx.scores(&q("zzz")), vec![0.0, 0.0]);
    }

    #[test]
    fn hand_evaluated_ranking() {
        let idx = SparseIndex::build(&corpus(&["x x x", "x", "y"]), Bm25Params::default()).unwrap();
        // N=3, df(x)=2 -> raw ln(1.5/2.5) < 0; df(y)=1 -> ln(2.5/1.5).
        let idf_x = 0.25 * (2.5f64 / 1.5).ln();
        let avgdl = 5.0 / 3.0;
        let s = |f: f64, dl: f64| idf_x * f * 2.5 / (f + 1.5 * (0.25 + 0.75 * dl / avgdl));
        let hits = idx.search(&q("x"), 10);
        assert_eq!(
            hits.iter().map(|c| c.chunk_id.as_str()).collect::<Vec<_>>(),
            vec!["d0", "d1"]
        );
        assert!((hits[0].score - s(3.0, 3.0)).abs() < 1e-12);
        assert!((hits[1].score - s(1.0, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn duplicate_docs_tie_by_id() {
        let idx = SparseIndex::build(&corpus(&["q r", "s", "q r"]), Bm25Params::default()).unwrap();
        let hits = idx.search(&q("q"), 10);
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].score, hits[1].score);
        assert_eq!(hits[0].chunk_id, "d0");
        assert_eq!(hits[1].chunk_id, "d2");
    }

    #[test]
    fn invariants() {
        let idx =
            SparseIndex::build(&corpus(&["a a b", "b c d e", "a"]), Bm25Params::default()).unwrap();
        assert_eq!(idx.len(), 3);
        assert!((idx.avgdl() - 8.0 / 3.0).abs() < 1e-12);
        for d in 0..3u32 {
            let sum: u32 = ["a", "b", "c", "d", "e"]
                .iter()
                .flat_map(|t| idx.postings(t).iter().filter(|p| p.0 == d).map(|p| p.1))
                .sum();
            assert!(sum <= idx.doc_lengths()[d as usize]);
        }
    }

    #[test]
    fn persist_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sparse.json");
        let idx =
            SparseIndex::build(&corpus(&["a a b", "b c d e", "a"]), Bm25Params::default()).unwrap();
        idx.persist(&p).unwrap();
        let back = SparseIndex::load(&p).unwrap();
        assert_eq!(back, idx);
        for probe in ["a", "b c", "e a", "zz"] {
            assert_eq!(back.scores(&q(probe)), idx.scores(&q(probe)));
        }
        let txt = std::fs::read_to_string(&p)
            .unwrap()
            .replace("\"version\":1", "\"version\":7");
        std::fs::write(&p, txt).unwrap();
        assert!(matches!(
            SparseIndex::load(&p),
            Err(IndexError::Version { found: 7, .. })
        ));
        std::fs::write(&p, b"{\"format\":\"other\"}").unwrap();
        assert!(matches!(
            SparseIndex::load(&p),
            Err(IndexError::BadMagic(_))
        ));
        std::fs::write(&p, b"{\"format\":\"medrag-sp").unwrap();
        assert!(matches!(
            SparseIndex::load(&p),
            Err(IndexError::Truncated(_))
        ));
    }
}
