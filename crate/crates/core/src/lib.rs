//! Retrieval-augmented multiple-choice question answering toolkit.
//!
//! The crate is organised along the workflow it implements:
//!
//! - [`corpus`]: cleaning, structural segmentation and sentence-safe chunking
//!   of textbook-like text into JSONL chunk records.
//! - [`index`]: flat inner-product dense index, Okapi BM25 sparse index and a
//!   section-centroid index, with versioned on-disk formats.
//! - [`retrieval`]: the staged pipeline (reformulation, coarse section
//!   filter, dense/hybrid fine retrieval with reciprocal rank fusion,
//!   cross-encoder reranking, budgeted context packing).
//! - [`providers`]: embedding, generation and rerank-scoring backends (HTTP,
//!   file, deterministic mocks) plus a content-addressed cache.
//! - [`eval`]: datasets, prompts, answer extraction, grid runner and the
//!   statistics behind the reports (accuracy, Wald CI, McNemar, deltas).
//!
//! Data-parallel inner loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and falls back to plain iteration otherwise.

pub mod corpus;
pub mod eval;
pub mod index;
pub mod par;
pub mod providers;
pub mod retrieval;
pub mod timing;
pub mod tokenize;

pub use corpus::{ChunkRecord, ChunkingParams, RawDocument, Section};
pub use index::{Candidate, DenseIndex, SectionIndex, SparseIndex};
pub use retrieval::{EvidenceContext, RetrievalConfig};
