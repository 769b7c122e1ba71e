//! Staged retrieval: optional query reformulation, optional coarse section
//! filter, dense or hybrid fine retrieval, optional cross-encoder rerank,
//! and budgeted context packing.

mod fusion;
mod pipeline;
mod stages;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::{Candidate, IndexError};
use crate::providers::ProviderError;

pub use fusion::rrf_fuse;
pub use pipeline::{check_pipeline, run_pipeline, IndexSet, PipelineProviders};
pub use stages::{
    build_query_bundle, coarse_filter, pack_context, reformulate_query, rerank, retrieve_fine,
    RerankOutcome, REFORMULATION_INSTRUCTION,
};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Switch {
    Off,
    On,
}

impl Switch {
    pub fn is_on(self) -> bool {
        self == Switch::On
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Switch::Off => "off",
            Switch::On => "on",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalMode {
    Dense,
    Hybrid,
}

impl RetrievalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RetrievalMode::Dense => "dense",
            RetrievalMode::Hybrid => "hybrid",
        }
    }
}

/// One retrieval configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    pub retrieval_mode: RetrievalMode,
    pub coarse: Switch,
    pub k_sections: usize,
    pub reranker: Switch,
    pub reformulation: Switch,
    pub n_candidates: usize,
    pub top_passages: usize,
    pub context_token_budget: usize,
    pub rrf_k: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            retrieval_mode: RetrievalMode::Dense,
            coarse: Switch::Off,
            k_sections: 20,
            reranker: Switch::Off,
            reformulation: Switch::Off,
            n_candidates: 150,
            top_passages: 6,
            context_token_budget: 1200,
            rrf_k: 60,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        let positive = [
            ("k_sections", self.k_sections),
            ("n_candidates", self.n_candidates),
            ("top_passages", self.top_passages),
            ("context_token_budget", self.context_token_budget),
            ("rrf_k", self.rrf_k),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(RetrievalError::Config(format!("{name} must be positive")));
        }
        if self.top_passages > self.n_candidates {
            return Err(RetrievalError::Config(format!(
                "top_passages ({}) exceeds n_candidates ({})",
                self.top_passages, self.n_candidates
            )));
        }
        Ok(())
    }
}

/// The queries issued for one question.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryBundle {
    pub original: String,
    pub reformulated: Option<String>,
    /// Unit vectors, original first.
    pub query_vectors: Vec<Vec<f32>>,
    pub query_terms: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub chunk_id: String,
    pub text: String,
    pub n_tokens: usize,
    pub final_score: f64,
    pub book: String,
    pub chapter: String,
    pub section: String,
}

/// Ranked, token-budgeted evidence for the generator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvidenceContext {
    pub passages: Vec<Passage>,
    pub total_tokens: usize,
}

impl EvidenceContext {
    pub fn chunk_ids(&self) -> Vec<String> {
        self.passages.iter().map(|p| p.chunk_id.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub source: String,
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub ms: f64,
}

/// Audit record of one pipeline run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalTrace {
    pub original_query: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reformulated_query: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reformulation_error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coarse_sections: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidate_pool: Option<usize>,
    pub fine_lists: Vec<RankedList>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fused: Option<Vec<Candidate>>,
    pub fine: Vec<Candidate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reranked: Option<Vec<Candidate>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rerank_error: Option<String>,
    pub packed: Vec<String>,
    pub stages: Vec<StageTiming>,
}

impl RetrievalTrace {
    pub fn stage_names(&self) -> Vec<&str> {
        self.stages.iter().map(|s| s.stage.as_str()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_validation() {
        let c = RetrievalConfig::default();
        assert_eq!(
            (
                c.n_candidates,
                c.top_passages,
                c.context_token_budget,
                c.rrf_k,
                c.k_sections
            ),
            (150, 6, 1200, 60, 20)
        );
        assert!(c.validate().is_ok());
        let bad = RetrievalConfig {
            top_passages: 200,
            ..c.clone()
        };
        assert!(bad.validate().is_err());
        let bad = RetrievalConfig { rrf_k: 0, ..c };
        assert!(bad.validate().is_err());
        let parsed: Result<RetrievalConfig, _> =
            serde_json::from_str(r#"{"retrieval_mode":"hybird"}"#);
        assert!(parsed.is_err());
        let parsed: RetrievalConfig =
            serde_json::from_str(r#"{"coarse":"on","reranker":"on"}"#).unwrap();
        assert!(parsed.coarse.is_on() && parsed.reranker.is_on() && !parsed.reformulation.is_on());
    }
}
