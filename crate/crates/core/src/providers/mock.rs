//! Deterministic in-process providers for tests and offline demos.
//!
//! Every mock is a pure function of its inputs and model tag, and charges a
//! fixed cost to the virtual clock so virtual-time runtimes are stable.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{
    truncate_at_stop, EmbedItem, Embedder, GenerationParams, Generator, ProviderError, Reranker,
};
use crate::eval::prompt::{COT_INSTRUCTION, EVIDENCE_HEADER, OPTIONS_HEADER, QUESTION_HEADER};
use crate::retrieval::REFORMULATION_INSTRUCTION;
use crate::timing::charge;
use crate::tokenize::terms;

pub(crate) const MOCK_DIM: usize = 64;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(seed, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Hashed character-trigram counts. The model tag seeds the hash, so two
/// mocks with different tags behave like two different embedding models.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    tag: String,
    dim: usize,
    seed: u64,
    max_batch: usize,
}

impl MockEmbedder {
    pub fn new(tag: &str) -> Self {
        Self::with_dim(tag, MOCK_DIM)
    }

    pub fn with_dim(tag: &str, dim: usize) -> Self {
        Self {
            tag: tag.to_string(),
            dim: dim.max(1),
            seed: fnv1a(FNV_OFFSET, tag.as_bytes()),
            max_batch: 32,
        }
    }

    pub fn batch(mut self, max_batch: usize) -> Self {
        self.max_batch = max_batch.max(1);
        self
    }

    pub fn vector(&self, text: &str) -> Vec<f32> {
        let padded: Vec<char> = format!(" {} ", text.to_lowercase()).chars().collect();
        let mut v = vec![0.0f32; self.dim];
        let mut buf = [0u8; 12];
        for w in padded.windows(3) {
            let mut n = 0;
            for c in w {
                n += c.encode_utf8(&mut buf[n..]).len();
            }
            let h = fnv1a(self.seed, &buf[..n]);
            v[(h % self.dim as u64) as usize] += 1.0;
        }
        v
    }
}

impl Embedder for MockEmbedder {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn embed(&self, items: &[EmbedItem<'_>]) -> Result<Vec<Vec<f32>>, ProviderError> {
        charge(0.5 * items.len() as f64);
        Ok(items.iter().map(|i| self.vector(i.text)).collect())
    }

    fn max_batch(&self) -> usize {
        self.max_batch
    }
}

/// Reranker scoring a pair by the number of distinct lowercased terms the
/// query and passage share.
#[derive(Debug, Clone)]
pub struct OverlapReranker {
    tag: String,
}

impl OverlapReranker {
    pub fn new(tag: &str) -> Self {
        Self {
            tag: tag.to_string(),
        }
    }

    pub fn overlap(query: &str, passage: &str) -> f64 {
        let q: BTreeSet<String> = terms(query).into_iter().collect();
        let p: BTreeSet<String> = terms(passage).into_iter().collect();
        q.intersection(&p).count() as f64
    }
}

impl Reranker for OverlapReranker {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn score(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>, ProviderError> {
        charge(0.25 * passages.len() as f64);
        Ok(passages.iter().map(|p| Self::overlap(query, p)).collect())
    }
}

const STOPWORDS: &[&str] = &[
    "about",
    "after",
    "also",
    "because",
    "been",
    "before",
    "being",
    "best",
    "following",
    "from",
    "have",
    "into",
    "likely",
    "most",
    "other",
    "patient",
    "presents",
    "shows",
    "than",
    "that",
    "their",
    "there",
    "these",
    "this",
    "what",
    "when",
    "which",
    "while",
    "with",
    "year",
    "years",
    "old",
    "woman",
    "man",
];

/// Generator that answers multiple-choice prompts by picking the option
/// sharing the most terms with the evidence block (or with the question
/// when there is no evidence), and answers reformulation prompts with the
/// question's content words.
#[derive(Debug, Clone)]
pub struct OverlapGenerator {
    tag: String,
}

impl OverlapGenerator {
    pub fn new(tag: &str) -> Self {
        Self {
            tag: tag.to_string(),
        }
    }

    fn reformulate(prompt: &str) -> String {
        let question = section_after(prompt, QUESTION_HEADER).unwrap_or(prompt);
        let mut seen = BTreeSet::new();
        terms(question)
            .into_iter()
            .filter(|t| {
                t.len() > 3
                    && !STOPWORDS.contains(&t.as_str())
                    && !t.chars().all(|c| c.is_ascii_digit())
            })
            .filter(|t| seen.insert(t.clone()))
            .take(12)
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn answer(&self, prompt: &str) -> String {
        let evidence = section_between(prompt, EVIDENCE_HEADER, QUESTION_HEADER);
        let stem = section_between(prompt, QUESTION_HEADER, OPTIONS_HEADER).unwrap_or_default();
        let context: BTreeSet<String> = terms(evidence.unwrap_or(stem)).into_iter().collect();
        let options = parse_options(prompt);
        // tie-break on a hash of the tag so two mock "models" can disagree
        let salt = fnv1a(FNV_OFFSET, self.tag.as_bytes());
        let best = options
            .iter()
            .map(|(letter, text)| {
                let opt: BTreeSet<String> = terms(text).into_iter().collect();
                let hits = opt.intersection(&context).count();
                let jitter = fnv1a(salt, text.as_bytes());
                (*letter, hits, jitter)
            })
            .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)))
            .map(|(l, _, _)| l);
        match (best, prompt.contains(COT_INSTRUCTION)) {
            (Some(l), true) => format!("The evidence points to option {l}.\nAnswer: {l}"),
            (Some(l), false) => l.to_string(),
            (None, _) => "I cannot determine the answer.".to_string(),
        }
    }
}

impl Generator for OverlapGenerator {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String, ProviderError> {
        let out = if prompt.starts_with(REFORMULATION_INSTRUCTION) {
            Self::reformulate(prompt)
        } else {
            self.answer(prompt)
        };
        charge(5.0 + 0.01 * prompt.len() as f64 + 0.05 * out.len() as f64);
        Ok(truncate_at_stop(&out, &params.stop_sequences).to_string())
    }
}

fn section_after<'a>(text: &'a str, header: &str) -> Option<&'a str> {
    text.find(header).map(|i| &text[i + header.len()..])
}

fn section_between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let rest = section_after(text, start)?;
    Some(rest.find(end).map_or(rest, |j| &rest[..j]))
}

fn parse_options(prompt: &str) -> Vec<(char, &str)> {
    let Some(block) = section_after(prompt, OPTIONS_HEADER) else {
        return Vec::new();
    };
    block
        .lines()
        .filter_map(|l| {
            let mut cs = l.chars();
            let letter = cs.next()?;
            let rest = cs.as_str().strip_prefix(". ")?;
            letter.is_ascii_uppercase().then_some((letter, rest))
        })
        .collect()
}

/// Generator answering from a script: prompts are matched first by the
/// lowercase hex SHA-256 of the full prompt, then by substring rules in
/// order, then the default.
///
/// ```json
/// {"by_hash": {"<sha256>": "Answer: C"},
///  "contains": [["vignette text", "Answer: B"]],
///  "default": "Answer: A"}
/// ```
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedGenerator {
    #[serde(skip)]
    tag: String,
    #[serde(default)]
    by_hash: HashMap<String, String>,
    #[serde(default)]
    contains: Vec<(String, String)>,
    #[serde(default)]
    default: Option<String>,
}

impl ScriptedGenerator {
    pub fn new(tag: &str) -> Self {
        Self {
            tag: tag.to_string(),
            ..Self::default()
        }
    }

    pub fn from_file(tag: &str, path: &Path) -> Result<Self, ProviderError> {
        let mut s: Self = serde_json::from_slice(&std::fs::read(path)?)
            .map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        s.tag = tag.to_string();
        Ok(s)
    }

    pub fn prompt_hash(prompt: &str) -> String {
        hex::encode(Sha256::digest(prompt.as_bytes()))
    }

    pub fn on_hash(mut self, prompt: &str, reply: &str) -> Self {
        self.by_hash
            .insert(Self::prompt_hash(prompt), reply.to_string());
        self
    }

    pub fn on_contains(mut self, needle: &str, reply: &str) -> Self {
        self.contains.push((needle.to_string(), reply.to_string()));
        self
    }

    pub fn with_default(mut self, reply: &str) -> Self {
        self.default = Some(reply.to_string());
        self
    }
}

impl Generator for ScriptedGenerator {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String, ProviderError> {
        charge(1.0);
        let reply = self
            .by_hash
            .get(&Self::prompt_hash(prompt))
            .or_else(|| {
                self.contains
                    .iter()
                    .find(|(n, _)| prompt.contains(n.as_str()))
                    .map(|(_, r)| r)
            })
            .or(self.default.as_ref())
            .ok_or_else(|| ProviderError::Protocol("no scripted reply for prompt".into()))?;
        Ok(truncate_at_stop(reply, &params.stop_sequences).to_string())
    }
}

/// Provider that always fails, either as unreachable or as a timeout.
#[derive(Debug, Clone)]
pub struct FailingProvider {
    tag: String,
    timeout: bool,
}

impl FailingProvider {
    pub fn new(tag: &str) -> Self {
        Self {
            tag: tag.to_string(),
            timeout: false,
        }
    }

    pub fn timeout(tag: &str) -> Self {
        Self {
            tag: tag.to_string(),
            timeout: true,
        }
    }

    fn err(&self) -> ProviderError {
        let endpoint = format!("mock:{}", self.tag);
        if self.timeout {
            ProviderError::Timeout { endpoint, ms: 0 }
        } else {
            ProviderError::Unreachable {
                endpoint,
                msg: "mock provider is down".into(),
            }
        }
    }
}

impl Embedder for FailingProvider {
    fn tag(&self) -> &str {
        &self.tag
    }
    fn embed(&self, _: &[EmbedItem<'_>]) -> Result<Vec<Vec<f32>>, ProviderError> {
        Err(self.err())
    }
}

impl Generator for FailingProvider {
    fn tag(&self) -> &str {
        &self.tag
    }
    fn generate(&self, _: &str, _: &GenerationParams) -> Result<String, ProviderError> {
        Err(self.err())
    }
}

impl Reranker for FailingProvider {
    fn tag(&self) -> &str {
        &self.tag
    }
    fn score(&self, _: &str, _: &[&str]) -> Result<Vec<f64>, ProviderError> {
        Err(self.err())
    }
}
