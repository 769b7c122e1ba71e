use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{dot, normalize, rank_order, vecfile, DenseIndex, IndexError};
use crate::corpus::ChunkRecord;

const FORMAT: &str = "medrag-sections";
const VERSION: u32 = 1;

/// One unit centroid per section: the renormalised mean of its member
/// chunk vectors. Sections keep first-appearance order of the chunk list.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionIndex {
    dim: usize,
    section_ids: Vec<String>,
    centroids: Vec<f32>,
    members: Vec<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct SectionFile {
    format: String,
    version: u32,
    section_ids: Vec<String>,
    members: Vec<Vec<String>>,
}

impl SectionIndex {
    pub fn build(dense: &DenseIndex, chunks: &[ChunkRecord]) -> Result<Self, IndexError> {
        if chunks.is_empty() {
            return Err(IndexError::Empty);
        }
        let mut order: Vec<String> = Vec::new();
        let mut groups: HashMap<String, Vec<usize>> = HashMap::new();
        let mut seen = BTreeSet::new();
        for c in chunks {
            let row = dense
                .ordinal(&c.chunk_id)
                .ok_or_else(|| IndexError::UnknownChunk(c.chunk_id.clone()))?;
            if !seen.insert(row) {
                return Err(IndexError::DuplicateId(c.chunk_id.clone()));
            }
            let key = c.section_key().to_string();
            groups
                .entry(key.clone())
                .or_insert_with(|| {
                    order.push(key);
                    Vec::new()
                })
                .push(row);
        }
        let dim = dense.dim();
        let mut centroids = Vec::with_capacity(order.len() * dim);
        let mut members = Vec::with_capacity(order.len());
        for sid in &order {
            let rows = &groups[sid];
            let mut mean = vec![0.0f64; dim];
            for &r in rows {
                for (m, x) in mean.iter_mut().zip(dense.row(r)) {
                    *m += f64::from(*x);
                }
            }
            let mean: Vec<f32> = mean
                .iter()
                .map(|m| (m / rows.len() as f64) as f32)
                .collect();
            // near-cancellation leaves float noise rather than exact zeros
            if mean.iter().map(|x| f64::from(*x).abs()).sum::<f64>() < 1e-6 {
                return Err(IndexError::ZeroCentroid(sid.clone()));
            }
            let unit = normalize(&mean).map_err(|_| IndexError::ZeroCentroid(sid.clone()))?;
            centroids.extend(unit);
            members.push(rows.iter().map(|&r| dense.chunk_ids()[r].clone()).collect());
        }
        Ok(Self {
            dim,
            section_ids: order,
            centroids,
            members,
        })
    }

    pub fn len(&self) -> usize {
        self.section_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.section_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn section_ids(&self) -> &[String] {
        &self.section_ids
    }

    pub fn centroid(&self, i: usize) -> &[f32] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    pub fn members(&self, i: usize) -> &[String] {
        &self.members[i]
    }

    pub fn members_of(&self, section_id: &str) -> Option<&[String]> {
        self.section_ids
            .iter()
            .position(|s| s == section_id)
            .map(|i| self.members[i].as_slice())
    }

    /// Top-`k` sections by centroid inner product, ties by section id.
    pub fn search(&self, q: &[f32], k: usize) -> Result<Vec<(String, f64)>, IndexError> {
        if q.len() != self.dim {
            return Err(IndexError::Dimension {
                expected: self.dim,
                got: q.len(),
            });
        }
        let mut scored: Vec<(usize, f64)> = (0..self.len())
            .map(|i| (i, dot(self.centroid(i), q)))
            .collect();
        scored.sort_by(|a, b| {
            rank_order((&self.section_ids[a.0], a.1), (&self.section_ids[b.0], b.1))
        });
        scored.truncate(k);
        Ok(scored
            .into_iter()
            .map(|(i, s)| (self.section_ids[i].clone(), s))
            .collect())
    }

    /// Writes `<path>` (JSON: ids and membership) and `<path>.vec` (centroids).
    pub fn persist(&self, path: &Path) -> Result<(), IndexError> {
        let file = SectionFile {
            format: FORMAT.into(),
            version: VERSION,
            section_ids: self.section_ids.clone(),
            members: self.members.clone(),
        };
        std::fs::write(
            path,
            serde_json::to_vec(&file).map_err(std::io::Error::other)?,
        )?;
        vecfile::write(&vec_path(path), FORMAT, self.dim, &self.centroids)
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let bytes = std::fs::read(path)?;
        let v: serde_json::Value = serde_json::from_slice(&bytes)
            .map_err(|e| IndexError::Truncated(format!("{}: {e}", path.display())))?;
        if v.get("format").and_then(|f| f.as_str()) != Some(FORMAT) {
            return Err(IndexError::BadMagic(path.display().to_string()));
        }
        let version = v.get("version").and_then(|x| x.as_u64()).unwrap_or(0) as u32;
        if version != VERSION {
            return Err(IndexError::Version {
                found: version,
                expected: VERSION,
            });
        }
        let f: SectionFile = serde_json::from_value(v)
            .map_err(|e| IndexError::Format(format!("{}: {e}", path.display())))?;
        let block = vecfile::read(&vec_path(path))?;
        if block.count != f.section_ids.len() || f.members.len() != f.section_ids.len() {
            return Err(IndexError::Format("section count mismatch".into()));
        }
        Ok(Self {
            dim: block.dim,
            section_ids: f.section_ids,
            centroids: block.data,
            members: f.members,
        })
    }
}

fn vec_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".vec");
    PathBuf::from(s)
}
