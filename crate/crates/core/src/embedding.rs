//! Embedding spaces, dense and sparse vectors, and the deterministic
//! sparsifier that lets dense vectors be matched like keywords.
//!
//! A [`SparseEmbedding`] is derived from a [`DenseEmbedding`] by a seeded,
//! overcomplete random projection followed by rectification and top-k
//! selection. The resulting entries have strictly positive weights, so the
//! sparse score between two documents is a sum of positive products over
//! the dimensions they share.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keyword::tokenize;

/// Non-zero entries per projection row.
pub const PROJECTION_FAN_IN: usize = 8;

const TOY_EMBED_SALT: u64 = 0x7e57_ab1e_0dd5_eed5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbeddingError {
    #[error("embedding space mismatch: `{left}` vs `{right}`")]
    SpaceMismatch { left: String, right: String },
    #[error("vector has zero norm")]
    ZeroVector,
    #[error("text is empty after normalization")]
    EmptyText,
    #[error("expected {expected} dimensions, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("vector contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("invalid sparse embedding: {0}")]
    InvalidSparse(String),
    #[error("invalid embedding space: {0}")]
    InvalidSpace(String),
}

/// A named embedding space with its dense and sparse geometry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSpace {
    pub name: String,
    #[serde(default = "default_dense_dim")]
    pub dense_dim: usize,
    #[serde(default = "default_sparse_dim")]
    pub sparse_dim: usize,
    #[serde(default = "default_sparsifier_seed")]
    pub sparsifier_seed: u64,
    #[serde(default = "default_top_k")]
    pub sparsifier_top_k: usize,
}

fn default_dense_dim() -> usize {
    2048
}
fn default_sparse_dim() -> usize {
    8192
}
fn default_sparsifier_seed() -> u64 {
    0x5eed_0001
}
fn default_top_k() -> usize {
    16
}

impl EmbeddingSpace {
    /// A space with the default geometry: 2048 dense dims, 8192 sparse dims,
    /// top-16 sparsification.
    pub fn with_defaults(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            dense_dim: default_dense_dim(),
            sparse_dim: default_sparse_dim(),
            sparsifier_seed: default_sparsifier_seed(),
            sparsifier_top_k: default_top_k(),
        }
    }

    pub fn new(
        name: impl Into<String>,
        dense_dim: usize,
        sparse_dim: usize,
        sparsifier_seed: u64,
        sparsifier_top_k: usize,
    ) -> Result<Self, EmbeddingError> {
        let space = Self {
            name: name.into(),
            dense_dim,
            sparse_dim,
            sparsifier_seed,
            sparsifier_top_k,
        };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<(), EmbeddingError> {
        let bad = |msg: String| Err(EmbeddingError::InvalidSpace(msg));
        if self.name.trim().is_empty() {
            return bad("name must not be empty".into());
        }
        if self.dense_dim == 0 || self.sparse_dim == 0 || self.sparsifier_top_k == 0 {
            return bad(format!("`{}`: dimensions and top_k must be positive", self.name));
        }
        if self.sparse_dim < self.dense_dim {
            return bad(format!(
                "`{}`: sparse_dim {} is smaller than dense_dim {}",
                self.name, self.sparse_dim, self.dense_dim
            ));
        }
        if self.sparsifier_top_k > self.sparse_dim {
            return bad(format!(
                "`{}`: sparsifier_top_k {} exceeds sparse_dim {}",
                self.name, self.sparsifier_top_k, self.sparse_dim
            ));
        }
        if self.sparse_dim > u32::MAX as usize {
            return bad(format!("`{}`: sparse_dim does not fit in u32", self.name));
        }
        Ok(())
    }
}

/// A dense vector tagged with the space it lives in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseEmbedding {
    space: String,
    values: Vec<f64>,
}

impl DenseEmbedding {
    pub fn new(space: &EmbeddingSpace, values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.len() != space.dense_dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: space.dense_dim,
                actual: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(i));
        }
        Ok(Self {
            space: space.name.clone(),
            values,
        })
    }

    pub fn space(&self) -> &str {
        &self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    /// Returns a unit-length copy.
    pub fn normalized(&self) -> Result<Self, EmbeddingError> {
        let mut values = self.values.clone();
        normalize_in_place(&mut values)?;
        Ok(Self {
            space: self.space.clone(),
            values,
        })
    }
}

/// Sparse vector: strictly increasing dimension indices, positive weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseEmbedding {
    space: String,
    entries: Vec<(u32, f64)>,
}

impl SparseEmbedding {
    pub fn new(space: &EmbeddingSpace, entries: Vec<(u32, f64)>) -> Result<Self, EmbeddingError> {
        let bad = |msg: String| Err(EmbeddingError::InvalidSparse(msg));
        if entries.len() > space.sparsifier_top_k {
            return bad(format!(
                "{} entries exceed top_k {}",
                entries.len(),
                space.sparsifier_top_k
            ));
        }
        for (i, &(dim, weight)) in entries.iter().enumerate() {
            if dim as usize >= space.sparse_dim {
                return bad(format!("dimension {dim} out of range [0, {})", space.sparse_dim));
            }
            if !(weight.is_finite() && weight > 0.0) {
                return bad(format!("weight {weight} at dimension {dim} is not positive and finite"));
            }
            if i > 0 && entries[i - 1].0 >= dim {
                return bad(format!("dimension {dim} is not strictly increasing"));
            }
        }
        Ok(Self {
            space: space.name.clone(),
            entries,
        })
    }

    pub fn space(&self) -> &str {
        &self.space
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Result of scoring one sparse embedding against another.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseDot {
    pub matched_dims: usize,
    pub score: f64,
}

fn check_same_space(left: &str, right: &str) -> Result<(), EmbeddingError> {
    if left != right {
        return Err(EmbeddingError::SpaceMismatch {
            left: left.to_string(),
            right: right.to_string(),
        });
    }
    Ok(())
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(a: &DenseEmbedding, b: &DenseEmbedding) -> Result<f64, EmbeddingError> {
    check_same_space(&a.space, &b.space)?;
    if a.values.len() != b.values.len() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: a.values.len(),
            actual: b.values.len(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok((dot(&a.values, &b.values) / (na * nb)).clamp(-1.0, 1.0))
}

/// Count and weighted sum over the dimensions two sparse embeddings share.
///
/// Terms are accumulated in increasing dimension order.
pub fn sparse_dot(q: &SparseEmbedding, d: &SparseEmbedding) -> Result<SparseDot, EmbeddingError> {
    check_same_space(&q.space, &d.space)?;
    let (mut i, mut j) = (0, 0);
    let mut matched_dims = 0;
    let mut score = 0.0;
    while i < q.entries.len() && j < d.entries.len() {
        let (qd, qw) = q.entries[i];
        let (dd, dw) = d.entries[j];
        match qd.cmp(&dd) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                matched_dims += 1;
                score += qw * dw;
                i += 1;
                j += 1;
            }
        }
    }
    Ok(SparseDot { matched_dims, score })
}

/// Turns a dense vector into a sparse one.
pub trait Sparsifier {
    fn sparsify(&self, v: &DenseEmbedding) -> Result<SparseEmbedding, EmbeddingError>;
}

/// Seeded overcomplete random projection, rectified, top-k by magnitude.
///
/// Row `r` of the `sparse_dim x dense_dim` projection matrix has
/// [`PROJECTION_FAN_IN`] signed entries of magnitude `1/sqrt(PROJECTION_FAN_IN)`.
/// Slot `k` of row `r` is derived from `h = splitmix64(seed ^ splitmix64(r * FAN_IN + k))`:
/// the column is `h % dense_dim` and the sign is negative when bit 63 of `h`
/// is set. Colliding slots add up. The input is L2-normalized before
/// projection, so weights do not depend on the input's scale.
#[derive(Debug, Clone)]
pub struct RandomProjectionSparsifier {
    space: EmbeddingSpace,
    // (column, signed coefficient) per row, FAN_IN slots each.
    slots: Vec<(u32, f64)>,
}

impl RandomProjectionSparsifier {
    pub fn new(space: &EmbeddingSpace) -> Result<Self, EmbeddingError> {
        space.validate()?;
        let scale = 1.0 / (PROJECTION_FAN_IN as f64).sqrt();
        let mut slots = Vec::with_capacity(space.sparse_dim * PROJECTION_FAN_IN);
        for row in 0..space.sparse_dim as u64 {
            for k in 0..PROJECTION_FAN_IN as u64 {
                let (col, negative) =
                    projection_slot(space.sparsifier_seed, row, k, space.dense_dim);
                slots.push((col as u32, if negative { -scale } else { scale }));
            }
        }
        Ok(Self {
            space: space.clone(),
            slots,
        })
    }

    pub fn space(&self) -> &EmbeddingSpace {
        &self.space
    }

    /// Rectified projection of a unit vector, one value per sparse dimension.
    fn project(&self, unit: &[f64]) -> Vec<f64> {
        self.slots
            .chunks_exact(PROJECTION_FAN_IN)
            .map(|row| {
                let mut acc = 0.0;
                for &(col, coef) in row {
                    acc += coef * unit[col as usize];
                }
                acc
            })
            .collect()
    }
}

impl Sparsifier for RandomProjectionSparsifier {
    fn sparsify(&self, v: &DenseEmbedding) -> Result<SparseEmbedding, EmbeddingError> {
        check_same_space(&self.space.name, &v.space)?;
        if v.values.len() != self.space.dense_dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.space.dense_dim,
                actual: v.values.len(),
            });
        }
        let mut unit = v.values.clone();
        normalize_in_place(&mut unit)?;
        let projected = self.project(&unit);

        let mut positive: Vec<(u32, f64)> = projected
            .into_iter()
            .enumerate()
            .filter(|&(_, w)| w > 0.0)
            .map(|(d, w)| (d as u32, w))
            .collect();
        let k = self.space.sparsifier_top_k;
        let by_weight = |a: &(u32, f64), b: &(u32, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        if positive.len() > k {
            positive.select_nth_unstable_by(k - 1, by_weight);
            positive.truncate(k);
        }
        positive.sort_unstable_by_key(|e| e.0);
        Ok(SparseEmbedding {
            space: self.space.name.clone(),
            entries: positive,
        })
    }
}

/// Column and sign of one projection slot.
pub fn projection_slot(seed: u64, row: u64, k: u64, dense_dim: usize) -> (usize, bool) {
    let h = splitmix64(seed ^ splitmix64(row * PROJECTION_FAN_IN as u64 + k));
    ((h % dense_dim as u64) as usize, h >> 63 == 1)
}

/// Deterministic bag-of-tokens embedder used when no model embedding is
/// supplied.
///
/// Each normalized token maps to a fixed Gaussian vector seeded from the
/// token bytes and the space name; a text's embedding is the L2-normalized
/// sum of its token vectors, so texts that share tokens point in similar
/// directions.
pub fn toy_embed(text: &str, space: &EmbeddingSpace) -> Result<DenseEmbedding, EmbeddingError> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(EmbeddingError::EmptyText);
    }
    let space_seed = fnv1a64(space.name.as_bytes()) ^ TOY_EMBED_SALT;
    let mut values = vec![0.0; space.dense_dim];
    for token in &tokens {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(space_seed ^ fnv1a64(token.as_bytes())));
        for v in values.iter_mut() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *v += g;
        }
    }
    normalize_in_place(&mut values)?;
    Ok(DenseEmbedding {
        space: space.name.clone(),
        values,
    })
}

/// Sequential dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub(crate) fn normalize_in_place(v: &mut [f64]) -> Result<(), EmbeddingError> {
    let n = l2_norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(EmbeddingError::ZeroVector);
    }
    for x in v.iter_mut() {
        *x /= n;
    }
    Ok(())
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
