use std::collections::HashMap;

use crate::index::{into_candidates, rank_order, Candidate};

/// Reciprocal rank fusion: `score(d) = Σ_r 1 / (rrf_k + rank_r(d))` with
/// 1-based ranks. Lists without `d` contribute nothing. Per-item reciprocal
/// terms are summed in ascending rank order, so the result does not depend
/// on the order in which lists are supplied.
pub fn rrf_fuse<S: AsRef<str>>(rankings: &[Vec<S>], rrf_k: usize) -> Vec<Candidate> {
    let mut ranks: HashMap<&str, Vec<usize>> = HashMap::new();
    for list in rankings {
        for (pos, id) in list.iter().enumerate() {
            ranks.entry(id.as_ref()).or_default().push(pos + 1);
        }
    }
    let mut fused: Vec<(String, f64)> = ranks
        .into_iter()
        .map(|(id, mut rs)| {
            rs.sort_unstable();
            let score = rs.iter().map(|&r| 1.0 / (rrf_k + r) as f64).sum();
            (id.to_string(), score)
        })
        .collect();
    fused.sort_by(|a, b| rank_order((&a.0, a.1), (&b.0, b.1)));
    into_candidates(fused)
}
