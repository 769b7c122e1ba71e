use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{dot, normalize, top_k, vecfile, Candidate, IndexError};
use crate::corpus::ChunkRecord;
use crate::par::{self, Exec};
use crate::providers::{embed_texts, EmbedItem, Embedder};

const SCAN_BLOCK: usize = 256;

/// Exact flat inner-product index over unit-norm rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    dim: usize,
    vectors: Vec<f32>,
    chunk_ids: Vec<String>,
    embedder_tag: String,
    ordinals: HashMap<String, usize>,
}

impl DenseIndex {
    /// Builds from raw rows, normalising each one.
    pub fn from_rows(
        embedder_tag: impl Into<String>,
        chunk_ids: Vec<String>,
        rows: Vec<Vec<f32>>,
    ) -> Result<Self, IndexError> {
        if rows.is_empty() {
            return Err(IndexError::Empty);
        }
        let dim = rows[0].len();
        let mut vectors = Vec::with_capacity(rows.len() * dim);
        for (id, r) in chunk_ids.iter().zip(&rows) {
            if r.len() != dim {
                return Err(IndexError::Dimension {
                    expected: dim,
                    got: r.len(),
                });
            }
            let unit = normalize(r).map_err(|_| IndexError::ZeroEmbedding(id.clone()))?;
            vectors.extend(unit);
        }
        Self::from_parts(dim, vectors, chunk_ids, embedder_tag.into())
    }

    fn from_parts(
        dim: usize,
        vectors: Vec<f32>,
        chunk_ids: Vec<String>,
        embedder_tag: String,
    ) -> Result<Self, IndexError> {
        if dim == 0 {
            return Err(IndexError::Format("zero dimension".into()));
        }
        if vectors.len() != dim * chunk_ids.len() {
            return Err(IndexError::Format(format!(
                "{} ids for {} rows",
                chunk_ids.len(),
                vectors.len() / dim
            )));
        }
        let mut ordinals = HashMap::with_capacity(chunk_ids.len());
        for (i, id) in chunk_ids.iter().enumerate() {
            if ordinals.insert(id.clone(), i).is_some() {
                return Err(IndexError::DuplicateId(id.clone()));
            }
        }
        Ok(Self {
            dim,
            vectors,
            chunk_ids,
            embedder_tag,
            ordinals,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.chunk_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunk_ids.is_empty()
    }

    pub fn chunk_ids(&self) -> &[String] {
        &self.chunk_ids
    }

    pub fn embedder_tag(&self) -> &str {
        &self.embedder_tag
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn ordinal(&self, chunk_id: &str) -> Option<usize> {
        self.ordinals.get(chunk_id).copied()
    }

    /// Top-`k` rows by inner product with `q`. Returns all rows when `k`
    /// exceeds the index size.
    pub fn search(&self, q: &[f32], k: usize) -> Result<Vec<Candidate>, IndexError> {
        self.search_with(q, k, None, Exec::default())
    }

    /// Like [`search`](Self::search) but restricted to rows whose `mask`
    /// entry is true, with an explicit execution mode.
    pub fn search_with(
        &self,
        q: &[f32],
        k: usize,
        mask: Option<&[bool]>,
        exec: Exec,
    ) -> Result<Vec<Candidate>, IndexError> {
        if q.len() != self.dim {
            return Err(IndexError::Dimension {
                expected: self.dim,
                got: q.len(),
            });
        }
        let ordinals: Vec<usize> = (0..self.len()).collect();
        let blocks = par::map_chunks(exec, &ordinals, SCAN_BLOCK, |block| {
            block
                .iter()
                .filter(|&&i| mask.is_none_or(|m| m[i]))
                .map(|&i| (i, dot(self.row(i), q)))
                .collect::<Vec<_>>()
        });
        Ok(top_k(
            blocks.into_iter().flatten().collect(),
            &self.chunk_ids,
            k,
        ))
    }

    /// Writes the vector block to `path` and the chunk ids, one JSON string
    /// per line, to the sidecar `<path>.ids.jsonl`.
    pub fn persist(&self, path: &Path) -> Result<(), IndexError> {
        vecfile::write(path, &self.embedder_tag, self.dim, &self.vectors)?;
        let mut w = BufWriter::new(std::fs::File::create(ids_path(path))?);
        for id in &self.chunk_ids {
            serde_json::to_writer(&mut w, id).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let block = vecfile::read(path)?;
        let sidecar = ids_path(path);
        let mut ids = Vec::with_capacity(block.count);
        for (i, line) in BufReader::new(std::fs::File::open(&sidecar)?)
            .lines()
            .enumerate()
        {
            let id: String = serde_json::from_str(&line?).map_err(|e| {
                IndexError::Format(format!("{} line {}: {e}", sidecar.display(), i + 1))
            })?;
            ids.push(id);
        }
        if ids.len() != block.count {
            return Err(IndexError::Truncated(sidecar.display().to_string()));
        }
        Self::from_parts(block.dim, block.data, ids, block.tag)
    }
}

fn ids_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids.jsonl");
    PathBuf::from(s)
}

/// Embeds every chunk and stores one unit row per chunk, in chunk order.
pub fn build_dense_index(
    chunks: &[ChunkRecord],
    embedder: &dyn Embedder,
    exec: Exec,
) -> Result<DenseIndex, IndexError> {
    if chunks.is_empty() {
        return Err(IndexError::Empty);
    }
    let items: Vec<EmbedItem<'_>> = chunks
        .iter()
        .map(|c| EmbedItem {
            key: &c.chunk_id,
            text: &c.text,
        })
        .collect();
    let rows = embed_texts(embedder, &items, exec).map_err(|e| IndexError::Provider {
        chunk_id: e
            .first_index()
            .and_then(|i| chunks.get(i))
            .map(|c| c.chunk_id.clone())
            .unwrap_or_default(),
        source: e,
    })?;
    let ids = chunks.iter().map(|c| c.chunk_id.clone()).collect();
    DenseIndex::from_rows(embedder.tag(), ids, rows)
}

impl DenseIndex {
    pub fn build(
        chunks: &[ChunkRecord],
        embedder: &dyn Embedder,
        exec: Exec,
    ) -> Result<Self, IndexError> {
        build_dense_index(chunks, embedder, exec)
    }
}
