//! Searchable structures over a chunk corpus.
//!
//! All rankings break score ties by ascending chunk id so repeated runs are
//! reproducible.

mod dense;
mod section;
mod sparse;
mod vecfile;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::providers::ProviderError;

pub use dense::{build_dense_index, DenseIndex};
pub use section::SectionIndex;
pub use sparse::{Bm25Params, SparseIndex};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("empty chunk list")]
    Empty,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("embedding failed at chunk {chunk_id}: {source}")]
    Provider {
        chunk_id: String,
        #[source]
        source: ProviderError,
    },
    #[error("chunk {0} has a zero embedding")]
    ZeroEmbedding(String),
    #[error("section {0} has a zero centroid")]
    ZeroCentroid(String),
    #[error("chunk {0} is not in the dense index")]
    UnknownChunk(String),
    #[error("duplicate chunk id {0}")]
    DuplicateId(String),
    #[error("bad magic bytes in {0}")]
    BadMagic(String),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("truncated or oversized index file: {0}")]
    Truncated(String),
    #[error("invalid index file: {0}")]
    Format(String),
}

/// One ranked retrieval result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub chunk_id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

/// Returns `v / |v|`.
pub fn normalize(v: &[f32]) -> Result<Vec<f32>, IndexError> {
    let norm = v
        .iter()
        .map(|x| f64::from(*x) * f64::from(*x))
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(IndexError::ZeroVector);
    }
    Ok(v.iter().map(|x| (f64::from(*x) / norm) as f32).collect())
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| f64::from(*x) * f64::from(*y))
        .sum()
}

/// Descending score, then ascending id.
pub(crate) fn rank_order(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

/// Top-`k` of `(ordinal, score)` pairs, ids looked up in `ids`.
pub(crate) fn top_k(mut scored: Vec<(usize, f64)>, ids: &[String], k: usize) -> Vec<Candidate> {
    let cmp = |a: &(usize, f64), b: &(usize, f64)| rank_order((&ids[a.0], a.1), (&ids[b.0], b.1));
    if k == 0 {
        return Vec::new();
    }
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_by(cmp);
    into_candidates(scored.into_iter().map(|(i, s)| (ids[i].clone(), s)))
}

pub(crate) fn into_candidates(it: impl IntoIterator<Item = (String, f64)>) -> Vec<Candidate> {
    it.into_iter()
        .enumerate()
        .map(|(i, (chunk_id, score))| Candidate {
            chunk_id,
            score,
            rank: i + 1,
        })
        .collect()
}
