use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use super::{EmbedItem, Embedder, ProviderError};

/// Precomputed embeddings from a JSONL file of `{"key": …, "vector": […]}`
/// lines, looked up by [`EmbedItem::key`].
#[derive(Debug, Clone)]
pub struct FileEmbedder {
    tag: String,
    vectors: HashMap<String, Vec<f32>>,
}

#[derive(Deserialize)]
struct Line {
    key: String,
    vector: Vec<f32>,
}

impl FileEmbedder {
    pub fn open(tag: &str, path: &Path) -> Result<Self, ProviderError> {
        let mut vectors = HashMap::new();
        for (i, line) in BufReader::new(std::fs::File::open(path)?)
            .lines()
            .enumerate()
        {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let l: Line = serde_json::from_str(&line).map_err(|e| {
                ProviderError::Config(format!("{} line {}: {e}", path.display(), i + 1))
            })?;
            vectors.insert(l.key, l.vector);
        }
        Ok(Self {
            tag: tag.to_string(),
            vectors,
        })
    }
}

impl Embedder for FileEmbedder {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn embed(&self, items: &[EmbedItem<'_>]) -> Result<Vec<Vec<f32>>, ProviderError> {
        items
            .iter()
            .map(|i| {
                self.vectors
                    .get(i.key)
                    .cloned()
                    .ok_or_else(|| ProviderError::MissingKey(i.key.to_string()))
            })
            .collect()
    }

    fn keyed(&self) -> bool {
        true
    }
}
