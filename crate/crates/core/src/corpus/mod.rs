//! Corpus ingestion: cleaning, structural segmentation, paragraph
//! filtering, sentence-safe chunking and JSONL persistence.

mod chunk;
mod clean;
mod jsonl;
mod segment;
mod sentences;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{self, Exec};
use crate::tokenize::Tokenizer;

pub use chunk::chunk_section;
pub use clean::clean_text;
pub use jsonl::{read_chunks, write_chunks};
pub use segment::segment_structure;
pub use sentences::{
    ends_with_terminal, retained_sentences, split_and_filter_paragraphs, split_sentences,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed JSON on line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("schema error on line {line}: {msg}")]
    Schema { line: usize, msg: String },
    #[error("invalid chunking parameters: {0}")]
    InvalidParams(String),
    #[error("invalid document {name:?}: {msg}")]
    InvalidDocument { name: String, msg: String },
}

/// One source file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDocument {
    pub book_name: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub book_name: String,
    pub chapter_title: String,
    pub section_title: String,
    pub paragraphs: Vec<String>,
    /// `book/chapter/section`, with a `~N` suffix when titles repeat.
    pub section_id: String,
}

/// One retrieval unit. Serialises to exactly the JSONL fields of a chunk
/// record; `oversized` is only written when set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub chunk_id: String,
    pub text: String,
    pub book: String,
    pub chapter: String,
    pub section: String,
    pub n_tokens: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub oversized: bool,
}

impl ChunkRecord {
    /// Key of the section this chunk came from, matching [`Section::section_id`].
    pub fn section_key(&self) -> &str {
        self.chunk_id
            .rsplit_once('#')
            .map_or(self.chunk_id.as_str(), |(s, _)| s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChunkingParams {
    pub max_tokens: usize,
    pub min_paragraph_tokens: usize,
    pub min_chunk_tokens: usize,
}

impl Default for ChunkingParams {
    fn default() -> Self {
        Self {
            max_tokens: 512,
            min_paragraph_tokens: 20,
            min_chunk_tokens: 30,
        }
    }
}

impl ChunkingParams {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.max_tokens == 0 || self.min_paragraph_tokens == 0 || self.min_chunk_tokens == 0 {
            return Err(CorpusError::InvalidParams(
                "all thresholds must be positive".into(),
            ));
        }
        if self.min_chunk_tokens >= self.max_tokens {
            return Err(CorpusError::InvalidParams(format!(
                "min_chunk_tokens ({}) must be below max_tokens ({})",
                self.min_chunk_tokens, self.max_tokens
            )));
        }
        Ok(())
    }
}

/// Reads every `*.txt` file in `dir` (sorted by name); the file stem is the
/// book name.
pub fn load_documents(dir: &Path) -> Result<Vec<RawDocument>, CorpusError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "txt"))
        .collect();
    paths.sort();
    let mut docs = Vec::with_capacity(paths.len());
    for p in paths {
        let book_name = p
            .file_stem()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        let body = std::fs::read_to_string(&p)?;
        docs.push(RawDocument { book_name, body });
    }
    Ok(docs)
}

/// Full ingestion of a corpus: clean, segment, filter and chunk every
/// document. Documents are processed in parallel; output order follows
/// input order, so the result is deterministic.
pub fn ingest(
    docs: &[RawDocument],
    params: &ChunkingParams,
    tokenizer: &dyn Tokenizer,
    exec: Exec,
) -> Result<Vec<ChunkRecord>, CorpusError> {
    params.validate()?;
    let mut seen = std::collections::HashSet::new();
    for d in docs {
        if d.body.trim().is_empty() {
            return Err(CorpusError::InvalidDocument {
                name: d.book_name.clone(),
                msg: "empty body".into(),
            });
        }
        if !seen.insert(d.book_name.as_str()) {
            return Err(CorpusError::InvalidDocument {
                name: d.book_name.clone(),
                msg: "duplicate book name".into(),
            });
        }
    }
    let per_doc = par::map(exec, docs, |d| {
        let cleaned = RawDocument {
            book_name: d.book_name.clone(),
            body: clean_text(&d.body),
        };
        segment_structure(&cleaned, params, tokenizer)
            .iter()
            .flat_map(|s| chunk_section(s, params, tokenizer))
            .collect::<Vec<_>>()
    });
    Ok(per_doc.into_iter().flatten().collect())
}
