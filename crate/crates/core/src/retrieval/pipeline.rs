use std::collections::{HashMap, HashSet};
use std::path::Path;

use super::stages::{
    build_query_bundle, coarse_filter, pack_context, reformulate_query, rerank, retrieve_fine,
};
use super::{
    EvidenceContext, RetrievalConfig, RetrievalError, RetrievalMode, RetrievalTrace, StageTiming,
};
use crate::corpus::{read_chunks, write_chunks, ChunkRecord};
use crate::index::{
    build_dense_index, Bm25Params, DenseIndex, IndexError, SectionIndex, SparseIndex,
};
use crate::par::Exec;
use crate::providers::{Embedder, Generator, Reranker};
use crate::timing::{Stopwatch, Timing};

pub const DENSE_FILE: &str = "dense.bin";
pub const SPARSE_FILE: &str = "sparse.json";
pub const SECTIONS_FILE: &str = "sections.json";
pub const CHUNKS_FILE: &str = "chunks.jsonl";

/// Everything retrieval needs for one embedding model, as stored together
/// in an index directory.
#[derive(Debug, Clone)]
pub struct IndexSet {
    pub dense: DenseIndex,
    pub sparse: Option<SparseIndex>,
    pub sections: Option<SectionIndex>,
    pub chunks: HashMap<String, ChunkRecord>,
}

impl IndexSet {
    pub fn build(
        chunks: &[ChunkRecord],
        embedder: &dyn Embedder,
        with_sparse: bool,
        with_sections: bool,
        exec: Exec,
    ) -> Result<Self, IndexError> {
        let dense = build_dense_index(chunks, embedder, exec)?;
        let sparse = with_sparse
            .then(|| SparseIndex::build(chunks, Bm25Params::default()))
            .transpose()?;
        let sections = with_sections
            .then(|| SectionIndex::build(&dense, chunks))
            .transpose()?;
        let chunks = chunks
            .iter()
            .map(|c| (c.chunk_id.clone(), c.clone()))
            .collect();
        Ok(Self {
            dense,
            sparse,
            sections,
            chunks,
        })
    }

    /// Writes the indexes plus a copy of the chunk records (in dense-row
    /// order) into `dir`.
    pub fn persist(&self, dir: &Path) -> Result<(), IndexError> {
        std::fs::create_dir_all(dir)?;
        self.dense.persist(&dir.join(DENSE_FILE))?;
        if let Some(s) = &self.sparse {
            s.persist(&dir.join(SPARSE_FILE))?;
        }
        if let Some(s) = &self.sections {
            s.persist(&dir.join(SECTIONS_FILE))?;
        }
        let ordered: Vec<ChunkRecord> = self
            .dense
            .chunk_ids()
            .iter()
            .filter_map(|id| self.chunks.get(id).cloned())
            .collect();
        write_chunks(&ordered, &dir.join(CHUNKS_FILE))
            .map_err(|e| IndexError::Format(e.to_string()))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, IndexError> {
        let dense = DenseIndex::load(&dir.join(DENSE_FILE))?;
        let sparse_path = dir.join(SPARSE_FILE);
        let sparse = sparse_path
            .exists()
            .then(|| SparseIndex::load(&sparse_path))
            .transpose()?;
        let sections_path = dir.join(SECTIONS_FILE);
        let sections = sections_path
            .exists()
            .then(|| SectionIndex::load(&sections_path))
            .transpose()?;
        let recs =
            read_chunks(&dir.join(CHUNKS_FILE)).map_err(|e| IndexError::Format(e.to_string()))?;
        let chunks: HashMap<String, ChunkRecord> =
            recs.into_iter().map(|c| (c.chunk_id.clone(), c)).collect();
        if let Some(missing) = dense
            .chunk_ids()
            .iter()
            .find(|id| !chunks.contains_key(*id))
        {
            return Err(IndexError::UnknownChunk(missing.clone()));
        }
        Ok(Self {
            dense,
            sparse,
            sections,
            chunks,
        })
    }
}

#[derive(Clone, Copy)]
pub struct PipelineProviders<'a> {
    pub embedder: &'a dyn Embedder,
    /// Needed only when reformulation is on.
    pub generator: Option<&'a dyn Generator>,
    /// Needed only when reranking is on.
    pub reranker: Option<&'a dyn Reranker>,
}

/// Validates a configuration against an index set and providers without
/// calling any provider.
pub fn check_pipeline(
    cfg: &RetrievalConfig,
    idx: &IndexSet,
    p: &PipelineProviders<'_>,
) -> Result<(), RetrievalError> {
    cfg.validate()?;
    let missing = |what: &str| Err(RetrievalError::Config(what.to_string()));
    if cfg.retrieval_mode == RetrievalMode::Hybrid && idx.sparse.is_none() {
        return missing("hybrid retrieval needs a sparse index");
    }
    if cfg.coarse.is_on() && idx.sections.is_none() {
        return missing("coarse filtering needs a section index");
    }
    if cfg.reranker.is_on() && p.reranker.is_none() {
        return missing("reranking is on but no reranker is configured");
    }
    if cfg.reformulation.is_on() && p.generator.is_none() {
        return missing("reformulation is on but no generator is configured");
    }
    if p.embedder.tag() != idx.dense.embedder_tag() {
        return Err(RetrievalError::Config(format!(
            "query embedder {:?} does not match index embedder {:?}",
            p.embedder.tag(),
            idx.dense.embedder_tag()
        )));
    }
    Ok(())
}

/// Runs reformulate → embed → coarse → fine → rerank → pack, recording
/// every stage and its time in the trace. Configuration problems are
/// reported before any provider is called. Reformulation and rerank
/// failures degrade (original query only, first-stage order) instead of
/// failing the run.
pub fn run_pipeline(
    question: &str,
    cfg: &RetrievalConfig,
    idx: &IndexSet,
    providers: &PipelineProviders<'_>,
    timing: Timing,
    exec: Exec,
) -> Result<(EvidenceContext, RetrievalTrace), RetrievalError> {
    check_pipeline(cfg, idx, providers)?;
    let mut trace = RetrievalTrace {
        original_query: question.to_string(),
        ..RetrievalTrace::default()
    };
    let stage = |name: &str, sw: Stopwatch, trace: &mut RetrievalTrace| {
        trace.stages.push(StageTiming {
            stage: name.to_string(),
            ms: sw.elapsed_ms(),
        });
    };

    let mut reformulated = None;
    if cfg.reformulation.is_on() {
        let sw = Stopwatch::start(timing);
        match reformulate_query(question, providers.generator.expect("checked")) {
            Ok(q) => reformulated = Some(q),
            Err(e) => {
                log::warn!("reformulation failed, using the original question only: {e}");
                trace.reformulation_error = Some(e.to_string());
            }
        }
        trace.reformulated_query.clone_from(&reformulated);
        stage("reformulate", sw, &mut trace);
    }

    let sw = Stopwatch::start(timing);
    let bundle = build_query_bundle(question, reformulated, providers.embedder)?;
    stage("embed_queries", sw, &mut trace);

    let mut allowed: Option<HashSet<String>> = None;
    if cfg.coarse.is_on() {
        let sw = Stopwatch::start(timing);
        let sections = idx.sections.as_ref().expect("checked");
        let chosen = coarse_filter(sections, &bundle, cfg.k_sections)?;
        let pool: HashSet<String> = chosen
            .iter()
            .filter_map(|s| sections.members_of(s))
            .flatten()
            .cloned()
            .collect();
        trace.candidate_pool = Some(pool.len());
        trace.coarse_sections = Some(chosen.into_iter().collect());
        allowed = Some(pool);
        stage("coarse", sw, &mut trace);
    }

    let sw = Stopwatch::start(timing);
    let (fine, lists) = retrieve_fine(
        cfg,
        &bundle,
        &idx.dense,
        idx.sparse.as_ref(),
        allowed.as_ref(),
        exec,
    )?;
    if lists.len() > 1 {
        trace.fused = Some(fine.clone());
    }
    trace.fine_lists = lists;
    trace.fine = fine.clone();
    stage("fine", sw, &mut trace);

    let mut ranked = fine;
    if cfg.reranker.is_on() {
        let sw = Stopwatch::start(timing);
        let out = rerank(
            providers.reranker.expect("checked"),
            question,
            &ranked,
            &idx.chunks,
        );
        trace.rerank_error = out.fallback;
        trace.reranked = Some(out.ranked.clone());
        ranked = out.ranked;
        stage("rerank", sw, &mut trace);
    }

    let sw = Stopwatch::start(timing);
    let ctx = pack_context(
        &ranked,
        &idx.chunks,
        cfg.top_passages,
        cfg.context_token_budget,
    );
    trace.packed = ctx.chunk_ids();
    stage("pack", sw, &mut trace);
    Ok((ctx, trace))
}
