//! Content-addressed response cache.
//!
//! Each response is stored under `<dir>/<kind>/<h[..2]>/<h>.json` where `h`
//! is the SHA-256 of `[kind, model_tag, input, params]` serialised as JSON.
//! Entries are written to a temporary file and renamed into place, so a
//! reader never sees a partial entry; an unreadable entry counts as a miss
//! and is rewritten.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{
    EmbedItem, Embedder, GenerationParams, Generator, ProviderError, ProviderKind, Reranker,
};

pub fn cache_key(
    kind: ProviderKind,
    model_tag: &str,
    input: &serde_json::Value,
    params: &serde_json::Value,
) -> String {
    let canonical = json!([kind, model_tag, input, params]).to_string();
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: usize,
    pub misses: usize,
}

pub struct Cached<P: ?Sized> {
    inner: Arc<P>,
    dir: PathBuf,
    kind: ProviderKind,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl<P: ?Sized> Cached<P> {
    pub fn new(inner: Arc<P>, dir: PathBuf, kind: ProviderKind) -> Result<Self, ProviderError> {
        std::fs::create_dir_all(dir.join(kind_dir(kind)))?;
        Ok(Self {
            inner,
            dir,
            kind,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        })
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir
            .join(kind_dir(self.kind))
            .join(&key[..2])
            .join(format!("{key}.json"))
    }

    fn get<T: DeserializeOwned>(&self, key: &str) -> Option<T> {
        let bytes = std::fs::read(self.path(key)).ok()?;
        match serde_json::from_slice(&bytes) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("corrupt cache entry {key}: {e}");
                None
            }
        }
    }

    fn put<T: Serialize>(&self, key: &str, value: &T) -> Result<(), ProviderError> {
        let path = self.path(key);
        let parent = path.parent().expect("cache path has a parent");
        std::fs::create_dir_all(parent)?;
        let bytes = serde_json::to_vec(value).map_err(std::io::Error::other)?;
        write_atomic(parent, &path, &bytes)
    }

    fn lookup<T, F>(&self, key: String, compute: F) -> Result<T, ProviderError>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<T, ProviderError>,
    {
        if let Some(v) = self.get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(v);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let v = compute()?;
        self.put(&key, &v)?;
        Ok(v)
    }
}

fn kind_dir(kind: ProviderKind) -> &'static str {
    match kind {
        ProviderKind::Embedding => "embedding",
        ProviderKind::Generator => "generator",
        ProviderKind::Reranker => "reranker",
    }
}

fn write_atomic(dir: &Path, path: &Path, bytes: &[u8]) -> Result<(), ProviderError> {
    static SEQ: AtomicUsize = AtomicUsize::new(0);
    let tmp = dir.join(format!(
        ".tmp-{}-{}",
        std::process::id(),
        SEQ.fetch_add(1, Ordering::Relaxed)
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

impl<P: Embedder + ?Sized> Embedder for Cached<P> {
    fn tag(&self) -> &str {
        self.inner.tag()
    }

    /// Cached per item, so hits do not depend on how inputs were batched.
    fn embed(&self, items: &[EmbedItem<'_>]) -> Result<Vec<Vec<f32>>, ProviderError> {
        let keyed = self.inner.keyed();
        let keys: Vec<String> = items
            .iter()
            .map(|i| {
                let input = if keyed {
                    json!({"key": i.key, "text": i.text})
                } else {
                    json!(i.text)
                };
                cache_key(self.kind, self.inner.tag(), &input, &json!(null))
            })
            .collect();
        let mut out: Vec<Option<Vec<f32>>> = keys.iter().map(|k| self.get(k)).collect();
        let missing: Vec<usize> = (0..items.len()).filter(|&i| out[i].is_none()).collect();
        self.hits
            .fetch_add(items.len() - missing.len(), Ordering::Relaxed);
        self.misses.fetch_add(missing.len(), Ordering::Relaxed);
        if !missing.is_empty() {
            let batch: Vec<EmbedItem<'_>> = missing.iter().map(|&i| items[i]).collect();
            let fresh = self.inner.embed(&batch)?;
            if fresh.len() != batch.len() {
                return Err(ProviderError::Protocol("embedding count mismatch".into()));
            }
            for (&i, v) in missing.iter().zip(fresh) {
                self.put(&keys[i], &v)?;
                out[i] = Some(v);
            }
        }
        Ok(out.into_iter().map(Option::unwrap).collect())
    }

    fn max_batch(&self) -> usize {
        self.inner.max_batch()
    }

    fn keyed(&self) -> bool {
        self.inner.keyed()
    }
}

impl<P: Generator + ?Sized> Generator for Cached<P> {
    fn tag(&self) -> &str {
        self.inner.tag()
    }

    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String, ProviderError> {
        let key = cache_key(self.kind, self.inner.tag(), &json!(prompt), &json!(params));
        self.lookup(key, || self.inner.generate(prompt, params))
    }
}

impl<P: Reranker + ?Sized> Reranker for Cached<P> {
    fn tag(&self) -> &str {
        self.inner.tag()
    }

    fn score(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>, ProviderError> {
        let key = cache_key(
            self.kind,
            self.inner.tag(),
            &json!({"query": query, "documents": passages}),
            &json!(null),
        );
        self.lookup(key, || self.inner.score(query, passages))
    }
}
