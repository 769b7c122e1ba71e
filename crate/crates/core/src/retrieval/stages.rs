use std::collections::{BTreeSet, HashMap, HashSet};

use super::{
    fusion::rrf_fuse, EvidenceContext, Passage, QueryBundle, RankedList, RetrievalConfig,
    RetrievalError, RetrievalMode,
};
use crate::corpus::ChunkRecord;
use crate::index::{
    into_candidates, normalize, rank_order, Candidate, DenseIndex, SectionIndex, SparseIndex,
};
use crate::par::Exec;
use crate::providers::{
    embed_texts, EmbedItem, Embedder, GenerationParams, Generator, ProviderError, Reranker,
};
use crate::tokenize::terms;

/// First line of every reformulation prompt.
pub const REFORMULATION_INSTRUCTION: &str =
    "Rewrite the clinical vignette below as a concise textbook-style medical search query.";

fn reformulation_prompt(question: &str) -> String {
    format!(
        "{REFORMULATION_INSTRUCTION}\n\
         Drop non-essential patient details such as age, names and setting. Keep the key findings and name the \
         clinical concepts, mechanisms or conditions a textbook would index them under. Reply with the query on a \
         single line.\n\n\
         Question: {question}\n\n\
         Search query:"
    )
}

/// Asks the generator for a retrieval query. The first non-empty line of
/// the reply is kept; an empty reply is an error.
pub fn reformulate_query(
    question: &str,
    generator: &dyn Generator,
) -> Result<String, ProviderError> {
    let params = GenerationParams {
        max_output_tokens: 64,
        ..GenerationParams::default()
    };
    let out = generator.generate(&reformulation_prompt(question), &params)?;
    out.lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .map(str::to_string)
        .ok_or_else(|| ProviderError::Protocol("empty reformulation".into()))
}

/// Embeds and tokenises the original question plus the optional
/// reformulation.
pub fn build_query_bundle(
    original: &str,
    reformulated: Option<String>,
    embedder: &dyn Embedder,
) -> Result<QueryBundle, RetrievalError> {
    let mut texts = vec![original];
    if let Some(r) = &reformulated {
        texts.push(r);
    }
    let items: Vec<EmbedItem<'_>> = texts.iter().map(|t| EmbedItem::text(t)).collect();
    let raw = embed_texts(embedder, &items, Exec::Sequential)?;
    let query_vectors = raw
        .iter()
        .map(|v| normalize(v))
        .collect::<Result<Vec<_>, _>>()?;
    let query_terms = texts.iter().map(|t| terms(t)).collect();
    Ok(QueryBundle {
        original: original.to_string(),
        reformulated,
        query_vectors,
        query_terms,
    })
}

/// Union over queries of each query's top `k_sections` sections.
pub fn coarse_filter(
    sections: &SectionIndex,
    bundle: &QueryBundle,
    k_sections: usize,
) -> Result<BTreeSet<String>, RetrievalError> {
    let mut out = BTreeSet::new();
    for q in &bundle.query_vectors {
        out.extend(
            sections
                .search(q, k_sections)?
                .into_iter()
                .map(|(id, _)| id),
        );
    }
    Ok(out)
}

/// Fine-grained retrieval. Each query yields a dense top-`n_candidates`
/// list (and, in hybrid mode, a BM25 list); several lists are fused with
/// RRF and cut back to `n_candidates`. A single list is returned as is.
/// With `allowed`, only those chunks are searchable.
pub fn retrieve_fine(
    cfg: &RetrievalConfig,
    bundle: &QueryBundle,
    dense: &DenseIndex,
    sparse: Option<&SparseIndex>,
    allowed: Option<&HashSet<String>>,
    exec: Exec,
) -> Result<(Vec<Candidate>, Vec<RankedList>), RetrievalError> {
    let sparse = match (cfg.retrieval_mode, sparse) {
        (RetrievalMode::Hybrid, None) => {
            return Err(RetrievalError::Config(
                "hybrid retrieval needs a sparse index".into(),
            ))
        }
        (RetrievalMode::Hybrid, s) => s,
        (RetrievalMode::Dense, _) => None,
    };
    let dense_mask = allowed.map(|a| {
        dense
            .chunk_ids()
            .iter()
            .map(|id| a.contains(id))
            .collect::<Vec<_>>()
    });
    let sparse_mask = allowed.zip(sparse).map(|(a, s)| {
        s.chunk_ids()
            .iter()
            .map(|id| a.contains(id))
            .collect::<Vec<_>>()
    });

    let mut lists = Vec::new();
    for (qi, q) in bundle.query_vectors.iter().enumerate() {
        let hits = dense.search_with(q, cfg.n_candidates, dense_mask.as_deref(), exec)?;
        lists.push(RankedList {
            source: format!("dense:q{qi}"),
            candidates: hits,
        });
        if let Some(s) = sparse {
            let hits = s.search_masked(
                &bundle.query_terms[qi],
                cfg.n_candidates,
                sparse_mask.as_deref(),
            );
            lists.push(RankedList {
                source: format!("bm25:q{qi}"),
                candidates: hits,
            });
        }
    }
    if lists.len() == 1 {
        return Ok((lists[0].candidates.clone(), lists));
    }
    let ids: Vec<Vec<&str>> = lists
        .iter()
        .map(|l| l.candidates.iter().map(|c| c.chunk_id.as_str()).collect())
        .collect();
    let mut fused = rrf_fuse(&ids, cfg.rrf_k);
    fused.truncate(cfg.n_candidates);
    Ok((fused, lists))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankOutcome {
    pub ranked: Vec<Candidate>,
    /// Set when the reranker failed and the input order was kept.
    pub fallback: Option<String>,
}

/// Rescores every candidate against the original question in one batch
/// call and sorts by that score (ties by chunk id). If the provider fails,
/// or a chunk text is missing, the input order is returned unchanged.
pub fn rerank(
    reranker: &dyn Reranker,
    question: &str,
    candidates: &[Candidate],
    chunk_texts: &HashMap<String, ChunkRecord>,
) -> RerankOutcome {
    let keep = |why: String| {
        log::warn!("rerank skipped, keeping first-stage order: {why}");
        RerankOutcome {
            ranked: candidates.to_vec(),
            fallback: Some(why),
        }
    };
    if candidates.len() <= 1 {
        return RerankOutcome {
            ranked: candidates.to_vec(),
            fallback: None,
        };
    }
    let texts: Option<Vec<&str>> = candidates
        .iter()
        .map(|c| chunk_texts.get(&c.chunk_id).map(|r| r.text.as_str()))
        .collect();
    let Some(texts) = texts else {
        return keep("candidate without chunk text".into());
    };
    let scores = match reranker.score(question, &texts) {
        Ok(s) if s.len() == texts.len() && s.iter().all(|x| x.is_finite()) => s,
        Ok(s) => return keep(format!("{} scores for {} candidates", s.len(), texts.len())),
        Err(e) => return keep(e.to_string()),
    };
    let mut scored: Vec<(String, f64)> = candidates
        .iter()
        .zip(scores)
        .map(|(c, s)| (c.chunk_id.clone(), s))
        .collect();
    scored.sort_by(|a, b| rank_order((&a.0, a.1), (&b.0, b.1)));
    RerankOutcome {
        ranked: into_candidates(scored),
        fallback: None,
    }
}

/// Walks candidates in rank order and keeps each passage that still fits
/// the remaining budget, skipping (not stopping at) passages that do not,
/// until `top_passages` are kept.
pub fn pack_context(
    ranked: &[Candidate],
    chunk_texts: &HashMap<String, ChunkRecord>,
    top_passages: usize,
    token_budget: usize,
) -> EvidenceContext {
    let mut ctx = EvidenceContext::default();
    for c in ranked {
        if ctx.passages.len() >= top_passages {
            break;
        }
        let Some(rec) = chunk_texts.get(&c.chunk_id) else {
            continue;
        };
        if ctx.total_tokens + rec.n_tokens > token_budget {
            continue;
        }
        ctx.total_tokens += rec.n_tokens;
        ctx.passages.push(Passage {
            chunk_id: c.chunk_id.clone(),
            text: rec.text.clone(),
            n_tokens: rec.n_tokens,
            final_score: c.score,
            book: rec.book.clone(),
            chapter: rec.chapter.clone(),
            section: rec.section.clone(),
        });
    }
    ctx
}
