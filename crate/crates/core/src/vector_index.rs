//! Cosine top-K index over unit-norm posting vectors.
//!
//! Rows are stored as row-major `f32`. Exact mode scans every row; clustered
//! mode runs seeded spherical k-means at build time and scans only the rows of
//! the `nprobe` clusters whose centroids are closest to the query.
//!
//! File layout (little-endian): magic `SYNX`, version `u16 = 1`, dims `u32`,
//! count `u64`, `count * dims` f32 values, then `count` ids as
//! (`u16` byte length, UTF-8 bytes).

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::EmbeddingVector;

pub const MAGIC: &[u8; 4] = b"SYNX";
pub const FORMAT_VERSION: u16 = 1;
pub const DEFAULT_K: usize = 25;
const KMEANS_SEED: u64 = 0x5EED_1DE5;
const KMEANS_MAX_ITERS: usize = 25;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("empty index")]
    Empty,
    #[error("dimension mismatch: index has {expected}, got {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("vector for {0:?} is not unit-norm")]
    NotNormalized(String),
    #[error("id {0:?} longer than 65535 bytes")]
    IdTooLong(String),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported index version {0}")]
    VersionMismatch(u16),
    #[error("truncated index file")]
    Truncated,
    #[error("corrupt index file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum IndexMode {
    Exact,
    Clustered { num_clusters: usize, nprobe: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalHit {
    pub posting_id: String,
    pub similarity: f64,
    pub rank: usize,
}

#[derive(Debug, Clone)]
struct Clusters {
    centroids: Vec<f32>,
    members: Vec<Vec<u32>>,
}

#[derive(Debug, Clone)]
pub struct VectorIndex {
    dims: usize,
    ids: Vec<String>,
    rows: HashMap<String, usize>,
    data: Vec<f32>,
    mode: IndexMode,
    clusters: Option<Clusters>,
}

impl VectorIndex {
    pub fn build(vectors: Vec<(String, EmbeddingVector)>, mode: IndexMode) -> Result<Self, IndexError> {
        let dims = vectors.first().ok_or(IndexError::Empty)?.1.dims();
        let mut ids = Vec::with_capacity(vectors.len());
        let mut rows = HashMap::with_capacity(vectors.len());
        let mut data = Vec::with_capacity(vectors.len() * dims);
        for (id, v) in vectors {
            if v.dims() != dims {
                return Err(IndexError::DimMismatch { expected: dims, found: v.dims() });
            }
            if !v.is_normalized() {
                return Err(IndexError::NotNormalized(id));
            }
            if id.len() > u16::MAX as usize {
                return Err(IndexError::IdTooLong(id));
            }
            if rows.insert(id.clone(), ids.len()).is_some() {
                return Err(IndexError::DuplicateId(id));
            }
            data.extend(v.values().iter().map(|&x| x as f32));
            ids.push(id);
        }
        Self::from_parts(dims, ids, rows, data, mode)
    }

    fn from_parts(
        dims: usize,
        ids: Vec<String>,
        rows: HashMap<String, usize>,
        data: Vec<f32>,
        mode: IndexMode,
    ) -> Result<Self, IndexError> {
        let mut index = VectorIndex { dims, ids, rows, data, mode: IndexMode::Exact, clusters: None };
        index.set_mode(mode);
        Ok(index)
    }

    /// Switches search mode, re-running the seeded k-means if clustering is
    /// requested. Clustering is deterministic for a given set of rows.
    pub fn set_mode(&mut self, mode: IndexMode) {
        self.clusters = match mode {
            IndexMode::Exact => None,
            IndexMode::Clustered { num_clusters, .. } => Some(self.kmeans(num_clusters)),
        };
        self.mode = mode;
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn mode(&self) -> IndexMode {
        self.mode
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.rows.contains_key(id)
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    fn kmeans(&self, num_clusters: usize) -> Clusters {
        let n = self.len();
        let k = num_clusters.clamp(1, n);
        let mut rng = ChaCha8Rng::seed_from_u64(KMEANS_SEED);
        let mut centroids: Vec<f32> = sample(&mut rng, n, k)
            .into_iter()
            .flat_map(|i| self.row(i).to_vec())
            .collect();
        let mut assignment = vec![usize::MAX; n];
        for _ in 0..KMEANS_MAX_ITERS {
            let mut changed = false;
            for (i, slot) in assignment.iter_mut().enumerate() {
                let best = nearest(&centroids, self.dims, self.row(i));
                if *slot != best {
                    *slot = best;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            let mut sums = vec![0.0f64; k * self.dims];
            for (i, &c) in assignment.iter().enumerate() {
                for (s, &x) in sums[c * self.dims..(c + 1) * self.dims].iter_mut().zip(self.row(i)) {
                    *s += x as f64;
                }
            }
            for c in 0..k {
                let sum = &sums[c * self.dims..(c + 1) * self.dims];
                let norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
                // Empty clusters keep their previous centroid.
                if norm > 0.0 {
                    for (dst, s) in centroids[c * self.dims..(c + 1) * self.dims].iter_mut().zip(sum) {
                        *dst = (s / norm) as f32;
                    }
                }
            }
        }
        let mut members = vec![Vec::new(); k];
        for (i, &c) in assignment.iter().enumerate() {
            members[c].push(i as u32);
        }
        Clusters { centroids, members }
    }

    /// Top-K hits by cosine, ties broken by ascending id. Returns
    /// `min(k, candidates scanned)` hits.
    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<RetrievalHit>, IndexError> {
        if query.dims() != self.dims {
            return Err(IndexError::DimMismatch { expected: self.dims, found: query.dims() });
        }
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        let q = query.values();
        let mut scored: Vec<(f64, usize)> = match (&self.clusters, self.mode) {
            (Some(clusters), IndexMode::Clustered { nprobe, .. }) => {
                let mut order: Vec<(f64, usize)> = clusters
                    .centroids
                    .chunks_exact(self.dims)
                    .map(|c| similarity(q, c))
                    .enumerate()
                    .map(|(i, s)| (s, i))
                    .collect();
                order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                order
                    .iter()
                    .take(nprobe.max(1))
                    .flat_map(|&(_, c)| clusters.members[c].iter())
                    .map(|&row| (similarity(q, self.row(row as usize)), row as usize))
                    .collect()
            }
            _ => (0..self.len()).map(|row| (similarity(q, self.row(row)), row)).collect(),
        };
        let cmp = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
            b.0.total_cmp(&a.0).then_with(|| self.ids[a.1].cmp(&self.ids[b.1]))
        };
        let take = k.min(scored.len());
        if take < scored.len() {
            scored.select_nth_unstable_by(take - 1, cmp);
            scored.truncate(take);
        }
        scored.sort_by(cmp);
        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(i, (similarity, row))| RetrievalHit {
                posting_id: self.ids[row].clone(),
                similarity,
                rank: i + 1,
            })
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(18 + self.data.len() * 4 + self.ids.len() * 16);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for id in &self.ids {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        out
    }

    /// Parses an index file image. The loaded index is in exact mode; call
    /// [`VectorIndex::set_mode`] to re-cluster.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(IndexError::BadMagic);
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != FORMAT_VERSION {
            return Err(IndexError::VersionMismatch(version));
        }
        let dims = u32::from_le_bytes(r.array()?) as usize;
        let count = u64::from_le_bytes(r.array()?) as usize;
        let floats = count
            .checked_mul(dims)
            .filter(|n| n.checked_mul(4).is_some())
            .ok_or(IndexError::Truncated)?;
        let raw = r.take(floats * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut ids = Vec::with_capacity(count);
        let mut rows = HashMap::with_capacity(count);
        for row in 0..count {
            let len = u16::from_le_bytes(r.array()?) as usize;
            let id = std::str::from_utf8(r.take(len)?)
                .map_err(|e| IndexError::Corrupt(e.to_string()))?
                .to_string();
            if rows.insert(id.clone(), row).is_some() {
                return Err(IndexError::DuplicateId(id));
            }
            ids.push(id);
        }
        if r.pos != bytes.len() {
            return Err(IndexError::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        if count == 0 || dims == 0 {
            return Err(IndexError::Empty);
        }
        Self::from_parts(dims, ids, rows, data, IndexMode::Exact)
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(IndexError::Truncated)?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], IndexError> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }
}

fn similarity(query: &[f64], row: &[f32]) -> f64 {
    query.iter().zip(row).map(|(&q, &x)| q * x as f64).sum()
}

fn nearest(centroids: &[f32], dims: usize, row: &[f32]) -> usize {
    let mut best = (f64::NEG_INFINITY, 0);
    for (c, centroid) in centroids.chunks_exact(dims).enumerate() {
        let s: f64 = centroid.iter().zip(row).map(|(&a, &b)| a as f64 * b as f64).sum();
        if s > best.0 {
            best = (s, c);
        }
    }
    best.1
}
