//! Dense vector embeddings and the small amount of vector math the
//! retriever needs: normalization, dot products and cosine similarity.

use thiserror::Error;

/// Norms below this are treated as zero vectors.
pub const ZERO_NORM_EPS: f64 = 1e-12;

/// Tolerance for "is unit-normalized" checks.
pub const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum EmbeddingError {
    #[error("vector has zero (or near-zero) norm")]
    ZeroVector,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("vector must have at least one component")]
    Empty,
    #[error("vector contains a non-finite component at position {0}")]
    NonFinite(usize),
}

/// A finite dense vector. Construction rejects NaN/Inf components and
/// zero-dimensional vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(i));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Whether the Euclidean norm is within [`UNIT_NORM_TOL`] of 1.
    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_NORM_TOL
    }

    /// Scale to unit Euclidean norm, preserving direction.
    pub fn normalize(&self) -> Result<Embedding, EmbeddingError> {
        let n = self.norm();
        if n < ZERO_NORM_EPS {
            return Err(EmbeddingError::ZeroVector);
        }
        Ok(Embedding {
            values: self.values.iter().map(|v| v / n).collect(),
        })
    }

    /// Plain dot product. Both vectors must have the same dimension.
    pub fn dot(&self, other: &Embedding) -> Result<f64, EmbeddingError> {
        if self.dim() != other.dim() {
            return Err(EmbeddingError::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum())
    }
}

/// Cosine similarity, clamped to [-1, 1] so rounding overshoot never
/// leaks out of range. Errors on dimension mismatch or zero vectors.
pub fn cosine(u: &Embedding, v: &Embedding) -> Result<f64, EmbeddingError> {
    let dot = u.dot(v)?;
    let nu = u.norm();
    let nv = v.norm();
    if nu < ZERO_NORM_EPS || nv < ZERO_NORM_EPS {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}
