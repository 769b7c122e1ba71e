//! Inference backends behind three small traits: [`Embedder`],
//! [`Generator`] and [`Reranker`].
//!
//! Backends are chosen by the endpoint string of a [`ProviderSpec`]:
//! `http://…`/`https://…` (OpenAI-style JSON routes), `env` (base URL from
//! `MEDRAG_<KIND>_BASE_URL`), `file:<path>` (precomputed embeddings) or
//! `mock:<name>` (deterministic in-process mocks). Any of them can be
//! wrapped in the content-addressed [`Cached`] layer.

mod cache;
mod file;
mod http;
mod mock;

use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{self, Exec};

pub use cache::{cache_key, CacheStats, Cached};
pub use file::FileEmbedder;
pub use http::{HttpEmbedder, HttpGenerator, HttpReranker};
pub use mock::{
    FailingProvider, MockEmbedder, OverlapGenerator, OverlapReranker, ScriptedGenerator,
};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("timeout after {ms} ms calling {endpoint}")]
    Timeout { endpoint: String, ms: u64 },
    #[error("unreachable endpoint {endpoint}: {msg}")]
    Unreachable { endpoint: String, msg: String },
    #[error("HTTP {status} from {endpoint}: {body}")]
    Http {
        endpoint: String,
        status: u16,
        body: String,
    },
    #[error("unexpected response: {0}")]
    Protocol(String),
    #[error("embedding dimension drift: expected {expected}, got {got} at input {index}")]
    Dimension {
        expected: usize,
        got: usize,
        index: usize,
    },
    #[error("batch {start}..{end} failed: {source}")]
    Batch {
        start: usize,
        end: usize,
        #[source]
        source: Box<ProviderError>,
    },
    #[error("no stored vector for key {0:?}")]
    MissingKey(String),
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl ProviderError {
    /// Input position the error refers to, when known.
    pub fn first_index(&self) -> Option<usize> {
        match self {
            ProviderError::Batch { start, source, .. } => {
                Some(source.first_index().map_or(*start, |i| start + i))
            }
            ProviderError::Dimension { index, .. } => Some(*index),
            _ => None,
        }
    }

    /// True for failures worth retrying (timeouts, connection errors, 5xx).
    pub fn is_transient(&self) -> bool {
        match self {
            ProviderError::Timeout { .. } | ProviderError::Unreachable { .. } => true,
            ProviderError::Http { status, .. } => *status >= 500 || *status == 429,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Embedding,
    Generator,
    Reranker,
}

impl ProviderKind {
    fn env_prefix(self) -> &'static str {
        match self {
            ProviderKind::Embedding => "MEDRAG_EMBEDDING",
            ProviderKind::Generator => "MEDRAG_GENERATOR",
            ProviderKind::Reranker => "MEDRAG_RERANKER",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    pub count: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            count: 2,
            backoff_ms: 250,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSpec {
    pub kind: ProviderKind,
    pub endpoint: String,
    pub model_tag: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_batch")]
    pub max_batch: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Wraps the provider in the response cache when set.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

fn default_timeout_ms() -> u64 {
    60_000
}
fn default_max_batch() -> usize {
    32
}
fn default_in_flight() -> usize {
    4
}

impl ProviderSpec {
    pub fn new(
        kind: ProviderKind,
        endpoint: impl Into<String>,
        model_tag: impl Into<String>,
    ) -> Self {
        Self {
            kind,
            endpoint: endpoint.into(),
            model_tag: model_tag.into(),
            timeout_ms: default_timeout_ms(),
            max_batch: default_max_batch(),
            retry: RetryPolicy::default(),
            max_in_flight: default_in_flight(),
            cache_dir: None,
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.timeout_ms == 0 {
            return Err(ProviderError::Config("timeout_ms must be positive".into()));
        }
        if self.max_batch == 0 || self.max_in_flight == 0 {
            return Err(ProviderError::Config(
                "max_batch and max_in_flight must be at least 1".into(),
            ));
        }
        if self.model_tag.trim().is_empty() {
            return Err(ProviderError::Config("model_tag must not be empty".into()));
        }
        self.backend()?;
        Ok(())
    }

    pub fn is_mock(&self) -> bool {
        self.endpoint.starts_with("mock:")
    }

    fn backend(&self) -> Result<Backend, ProviderError> {
        let e = self.endpoint.trim();
        if let Some(name) = e.strip_prefix("mock:") {
            return Ok(Backend::Mock(name.to_string()));
        }
        if let Some(p) = e.strip_prefix("file:") {
            return Ok(Backend::File(PathBuf::from(p)));
        }
        if e == "env" {
            let var = format!("{}_BASE_URL", self.kind.env_prefix());
            let url = std::env::var(&var)
                .map_err(|_| ProviderError::Config(format!("{var} is not set")))?;
            return Ok(Backend::Http(url));
        }
        if e.starts_with("http://") || e.starts_with("https://") {
            return Ok(Backend::Http(e.to_string()));
        }
        Err(ProviderError::Config(format!(
            "unrecognised endpoint {e:?}"
        )))
    }

    fn api_key(&self) -> Option<String> {
        std::env::var(format!("{}_API_KEY", self.kind.env_prefix())).ok()
    }
}

enum Backend {
    Mock(String),
    File(PathBuf),
    Http(String),
}

/// Decoding settings. Temperature 0 keeps runs reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationParams {
    pub max_output_tokens: u32,
    pub temperature: f64,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            max_output_tokens: 512,
            temperature: 0.0,
            stop_sequences: Vec::new(),
        }
    }
}

impl GenerationParams {
    pub fn zero_shot() -> Self {
        Self::default()
    }

    pub fn cot() -> Self {
        Self {
            max_output_tokens: 2048,
            ..Self::default()
        }
    }
}

/// Cuts `text` at the earliest stop sequence.
pub fn truncate_at_stop<'a>(text: &'a str, stops: &[String]) -> &'a str {
    stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .map_or(text, |i| &text[..i])
}

/// One embedding input. `key` identifies the text for keyed backends
/// (the file provider); for queries it is the text itself.
#[derive(Debug, Clone, Copy)]
pub struct EmbedItem<'a> {
    pub key: &'a str,
    pub text: &'a str,
}

impl<'a> EmbedItem<'a> {
    pub fn text(text: &'a str) -> Self {
        Self { key: text, text }
    }
}

pub trait Embedder: Send + Sync {
    fn tag(&self) -> &str;
    fn embed(&self, items: &[EmbedItem<'_>]) -> Result<Vec<Vec<f32>>, ProviderError>;
    fn max_batch(&self) -> usize {
        32
    }
    /// Whether results depend on [`EmbedItem::key`] rather than the text.
    fn keyed(&self) -> bool {
        false
    }
}

pub trait Generator: Send + Sync {
    fn tag(&self) -> &str;
    /// Raw model output, untrimmed. Stop sequences are honoured.
    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String, ProviderError>;
}

pub trait Reranker: Send + Sync {
    fn tag(&self) -> &str;
    /// One relevance score per passage, higher is more relevant.
    fn score(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>, ProviderError>;
}

/// Embeds `items` in batches of the provider's `max_batch`, running batches
/// concurrently, and checks that every vector has the same dimension.
/// Output order matches input order regardless of batching.
pub fn embed_texts(
    embedder: &dyn Embedder,
    items: &[EmbedItem<'_>],
    exec: Exec,
) -> Result<Vec<Vec<f32>>, ProviderError> {
    if items.is_empty() {
        return Err(ProviderError::Config("nothing to embed".into()));
    }
    let batch = embedder.max_batch().max(1);
    let starts: Vec<usize> = (0..items.len()).step_by(batch).collect();
    let results = par::map(exec, &starts, |&start| {
        let end = (start + batch).min(items.len());
        let out = embedder
            .embed(&items[start..end])
            .map_err(|e| ProviderError::Batch {
                start,
                end,
                source: Box::new(e),
            })?;
        if out.len() != end - start {
            return Err(ProviderError::Batch {
                start,
                end,
                source: Box::new(ProviderError::Protocol(format!(
                    "{} vectors for {} inputs",
                    out.len(),
                    end - start
                ))),
            });
        }
        Ok(out)
    });
    let mut vectors = Vec::with_capacity(items.len());
    for r in results {
        vectors.extend(r?);
    }
    let dim = vectors[0].len();
    if let Some((index, v)) = vectors
        .iter()
        .enumerate()
        .find(|(_, v)| v.len() != dim || v.is_empty())
    {
        return Err(ProviderError::Dimension {
            expected: dim,
            got: v.len(),
            index,
        });
    }
    Ok(vectors)
}

/// Counting semaphore bounding concurrent calls to one endpoint.
#[derive(Debug)]
pub struct InFlight {
    limit: usize,
    used: Mutex<usize>,
    cv: Condvar,
}

pub struct InFlightGuard<'a>(&'a InFlight);

impl InFlight {
    pub fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            used: Mutex::new(0),
            cv: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> InFlightGuard<'_> {
        let mut used = self.used.lock().unwrap_or_else(|e| e.into_inner());
        while *used >= self.limit {
            used = self.cv.wait(used).unwrap_or_else(|e| e.into_inner());
        }
        *used += 1;
        InFlightGuard(self)
    }
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut used = self.0.used.lock().unwrap_or_else(|e| e.into_inner());
        *used -= 1;
        self.0.cv.notify_one();
    }
}

pub fn make_embedder(spec: &ProviderSpec) -> Result<Arc<dyn Embedder>, ProviderError> {
    spec.validate()?;
    let inner: Arc<dyn Embedder> = match spec.backend()? {
        Backend::Mock(name) => match name.as_str() {
            "fail" => Arc::new(FailingProvider::new(&spec.model_tag)),
            n if n == "trigram" || n.starts_with("trigram:") => {
                let dim = match n.strip_prefix("trigram:") {
                    Some(d) => d
                        .parse()
                        .map_err(|_| ProviderError::Config(format!("bad mock dimension {d:?}")))?,
                    None => mock::MOCK_DIM,
                };
                Arc::new(MockEmbedder::with_dim(&spec.model_tag, dim).batch(spec.max_batch))
            }
            other => {
                return Err(ProviderError::Config(format!(
                    "unknown mock embedder {other:?}"
                )))
            }
        },
        Backend::File(p) => Arc::new(FileEmbedder::open(&spec.model_tag, &p)?),
        Backend::Http(url) => Arc::new(HttpEmbedder::new(spec, url, spec.api_key())),
    };
    Ok(match &spec.cache_dir {
        Some(dir) => Arc::new(Cached::new(inner, dir.clone(), ProviderKind::Embedding)?),
        None => inner,
    })
}

pub fn make_generator(spec: &ProviderSpec) -> Result<Arc<dyn Generator>, ProviderError> {
    spec.validate()?;
    let inner: Arc<dyn Generator> = match spec.backend()? {
        Backend::Mock(name) => match name.as_str() {
            "overlap" => Arc::new(OverlapGenerator::new(&spec.model_tag)),
            "fail" => Arc::new(FailingProvider::new(&spec.model_tag)),
            "timeout" => Arc::new(FailingProvider::timeout(&spec.model_tag)),
            n => match n.strip_prefix("script:") {
                Some(path) => Arc::new(ScriptedGenerator::from_file(
                    &spec.model_tag,
                    path.as_ref(),
                )?),
                None => {
                    return Err(ProviderError::Config(format!(
                        "unknown mock generator {n:?}"
                    )))
                }
            },
        },
        Backend::File(_) => {
            return Err(ProviderError::Config(
                "file endpoints only serve embeddings".into(),
            ))
        }
        Backend::Http(url) => Arc::new(HttpGenerator::new(spec, url, spec.api_key())),
    };
    Ok(match &spec.cache_dir {
        Some(dir) => Arc::new(Cached::new(inner, dir.clone(), ProviderKind::Generator)?),
        None => inner,
    })
}

pub fn make_reranker(spec: &ProviderSpec) -> Result<Arc<dyn Reranker>, ProviderError> {
    spec.validate()?;
    let inner: Arc<dyn Reranker> = match spec.backend()? {
        Backend::Mock(name) => match name.as_str() {
            "overlap" => Arc::new(OverlapReranker::new(&spec.model_tag)),
            "fail" => Arc::new(FailingProvider::new(&spec.model_tag)),
            other => {
                return Err(ProviderError::Config(format!(
                    "unknown mock reranker {other:?}"
                )))
            }
        },
        Backend::File(_) => {
            return Err(ProviderError::Config(
                "file endpoints only serve embeddings".into(),
            ))
        }
        Backend::Http(url) => Arc::new(HttpReranker::new(spec, url, spec.api_key())),
    };
    Ok(match &spec.cache_dir {
        Some(dir) => Arc::new(Cached::new(inner, dir.clone(), ProviderKind::Reranker)?),
        None => inner,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stop_truncation() {
        let stops = vec!["\n\n".to_string(), "###".to_string()];
        assert_eq!(
            truncate_at_stop("Answer: C###junk\n\nmore", &stops),
            "Answer: C"
        );
        assert_eq!(truncate_at_stop("Answer: C", &stops), "Answer: C");
        assert_eq!(truncate_at_stop("x", &[String::new()]), "x");
    }

    #[test]
    fn spec_validation() {
        let mut s = ProviderSpec::new(ProviderKind::Embedding, "mock:trigram", "m");
        assert!(s.validate().is_ok());
        s.timeout_ms = 0;
        assert!(s.validate().is_err());
        let s = ProviderSpec::new(ProviderKind::Embedding, "ftp://x", "m");
        assert!(matches!(s.validate(), Err(ProviderError::Config(_))));
        let strict: Result<ProviderSpec, _> = serde_json::from_str(
            r#"{"kind":"embedding","endpoint":"mock:trigram","model_tag":"m","bogus":1}"#,
        );
        assert!(strict.is_err());
    }

    #[test]
    fn batching_invariance() {
        let texts: Vec<String> = (0..37).map(|i| format!("text number {i}")).collect();
        let items: Vec<EmbedItem<'_>> = texts.iter().map(|t| EmbedItem::text(t)).collect();
        let whole =
            embed_texts(&MockEmbedder::new("m").batch(100), &items, Exec::Sequential).unwrap();
        for b in [1, 5, 16] {
            let split =
                embed_texts(&MockEmbedder::new("m").batch(b), &items, Exec::Parallel).unwrap();
            assert_eq!(split, whole);
        }
    }

    struct Drifting;
    impl Embedder for Drifting {
        fn tag(&self) -> &str {
            "drift"
        }
        fn embed(&self, items: &[EmbedItem<'_>]) -> Result<Vec<Vec<f32>>, ProviderError> {
            Ok(items
                .iter()
                .map(|i| vec![1.0; if i.text == "odd" { 3 } else { 4 }])
                .collect())
        }
        fn max_batch(&self) -> usize {
            2
        }
    }

    #[test]
    fn dimension_drift_detected() {
        let items = [
            EmbedItem::text("a"),
            EmbedItem::text("b"),
            EmbedItem::text("odd"),
        ];
        let err = embed_texts(&Drifting, &items, Exec::Sequential).unwrap_err();
        assert!(matches!(
            err,
            ProviderError::Dimension {
                expected: 4,
                got: 3,
                index: 2
            }
        ));
    }

    #[test]
    fn failing_batch_reports_range() {
        let texts: Vec<String> = (0..10).map(|i| i.to_string()).collect();
        let items: Vec<_> = texts.iter().map(|t| EmbedItem::text(t)).collect();
        let fail = FailingProvider::new("f");
        let err = embed_texts(&fail, &items, Exec::Sequential).unwrap_err();
        assert!(matches!(err, ProviderError::Batch { start: 0, .. }));
        assert_eq!(err.first_index(), Some(0));
    }

    #[test]
    fn in_flight_bounds_concurrency() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let gate = InFlight::new(2);
        let active = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    let _g = gate.acquire();
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(std::time::Duration::from_millis(5));
                    active.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
