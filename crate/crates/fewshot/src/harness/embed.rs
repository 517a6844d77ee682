//! Pluggable embedding sources: a precomputed vector file, an HTTP
//! embeddings endpoint, and a deterministic hash-based source for offline
//! runs and tests.

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{content_hash, normalize_text};

#[derive(Debug, Error)]
pub enum EmbedSourceError {
    #[error("no vector available for text {hash} ({preview:?})")]
    MissingText { hash: String, preview: String },
    #[error("wrong dimension for text {preview:?}: expected {expected}, got {got}")]
    WrongDimension {
        preview: String,
        expected: usize,
        got: usize,
    },
    #[error("embedding endpoint unavailable after {attempts} attempt(s): {message}")]
    Unavailable { attempts: u32, message: String },
    #[error("embedding endpoint rejected request: {message}")]
    Rejected { message: String },
    #[error("failed to read vector file {path}: {reason}")]
    BadFile { path: String, reason: String },
}

pub(crate) fn preview(text: &str) -> String {
    let mut p: String = text.chars().take(40).collect();
    if text.chars().count() > 40 {
        p.push('…');
    }
    p
}

/// Produces one dense vector per text with a fixed dimension.
pub trait EmbeddingSource: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedSourceError>;
    /// Declared output dimension, when known up front.
    fn dim(&self) -> Option<usize>;
}

/// Deterministic pseudo-embeddings derived from the text's content hash.
/// Not semantically meaningful; suitable for plumbing tests and offline
/// mock runs where only determinism matters.
pub struct HashEmbeddingSource {
    dim: usize,
    seed: u64,
}

impl HashEmbeddingSource {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim >= 1, "dimension must be at least 1");
        Self { dim, seed }
    }
}

impl EmbeddingSource for HashEmbeddingSource {
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedSourceError> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(normalize_text(text).as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        Ok((0..self.dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect())
    }

    fn dim(&self) -> Option<usize> {
        Some(self.dim)
    }
}

#[derive(Serialize, Deserialize)]
struct VectorLine {
    hash: String,
    vector: Vec<f64>,
}

/// Vectors precomputed externally (e.g. sentence-encoder embeddings) and
/// stored as JSONL `{"hash": ..., "vector": [...]}`, keyed by the content
/// hash of the text.
pub struct FileEmbeddingSource {
    vectors: HashMap<String, Vec<f64>>,
    dim: Option<usize>,
}

impl FileEmbeddingSource {
    pub fn load(path: &Path) -> Result<Self, EmbedSourceError> {
        let bad = |reason: String| EmbedSourceError::BadFile {
            path: path.display().to_string(),
            reason,
        };
        let content = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
        let mut vectors = HashMap::new();
        let mut dim = None;
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: VectorLine =
                serde_json::from_str(line).map_err(|e| bad(format!("line {}: {e}", i + 1)))?;
            match dim {
                None => dim = Some(parsed.vector.len()),
                Some(d) if d != parsed.vector.len() => {
                    return Err(bad(format!(
                        "line {}: dimension {} differs from {}",
                        i + 1,
                        parsed.vector.len(),
                        d
                    )))
                }
                _ => {}
            }
            vectors.insert(parsed.hash, parsed.vector);
        }
        Ok(Self { vectors, dim })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

impl EmbeddingSource for FileEmbeddingSource {
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedSourceError> {
        let hash = content_hash(text);
        self.vectors
            .get(&hash)
            .cloned()
            .ok_or_else(|| EmbedSourceError::MissingText {
                hash,
                preview: preview(text),
            })
    }

    fn dim(&self) -> Option<usize> {
        self.dim
    }
}

/// Configuration for [`HttpEmbeddingSource`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpEmbeddingConfig {
    pub endpoint: String,
    pub model: String,
    pub credential_env: Option<String>,
    pub timeout_secs: u64,
    pub retry_base_ms: u64,
    pub max_attempts: u32,
}

impl Default for HttpEmbeddingConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: String::new(),
            credential_env: None,
            timeout_secs: 60,
            retry_base_ms: 1000,
            max_attempts: 5,
        }
    }
}

/// Embeddings fetched from an embeddings-style HTTP endpoint, with the
/// same retry policy as the scoring backend.
pub struct HttpEmbeddingSource {
    config: HttpEmbeddingConfig,
    client: reqwest::blocking::Client,
    token: Option<String>,
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: Vec<&'a str>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingData>,
}

#[derive(Deserialize)]
struct EmbeddingData {
    embedding: Vec<f64>,
}

impl HttpEmbeddingSource {
    pub fn new(config: HttpEmbeddingConfig) -> Result<Self, EmbedSourceError> {
        let token = match &config.credential_env {
            Some(var) => Some(std::env::var(var).map_err(|_| EmbedSourceError::Rejected {
                message: format!("credential environment variable {var} is not set"),
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| EmbedSourceError::Rejected {
                message: format!("failed to build http client: {e}"),
            })?;
        Ok(Self {
            config,
            client,
            token,
        })
    }

    fn post_once(&self, text: &str) -> Result<Vec<f64>, EmbedSourceError> {
        let body = EmbeddingRequest {
            model: &self.config.model,
            input: vec![text],
        };
        let mut req = self.client.post(&self.config.endpoint).json(&body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| EmbedSourceError::Unavailable {
            attempts: 1,
            message: e.to_string(),
        })?;
        let status = resp.status();
        if status.is_client_error() {
            return Err(EmbedSourceError::Rejected {
                message: format!("status {status}: {}", resp.text().unwrap_or_default()),
            });
        }
        if !status.is_success() {
            return Err(EmbedSourceError::Unavailable {
                attempts: 1,
                message: format!("status {status}"),
            });
        }
        let parsed: EmbeddingResponse = resp.json().map_err(|e| EmbedSourceError::Unavailable {
            attempts: 1,
            message: format!("bad response body: {e}"),
        })?;
        parsed
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| EmbedSourceError::Rejected {
                message: "response contained no embedding data".into(),
            })
    }
}

impl EmbeddingSource for HttpEmbeddingSource {
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedSourceError> {
        let attempts = self.config.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self
                    .config
                    .retry_base_ms
                    .saturating_mul(1u64.checked_shl(attempt - 1).unwrap_or(u64::MAX));
                std::thread::sleep(Duration::from_millis(delay));
            }
            match self.post_once(text) {
                Ok(v) => return Ok(v),
                Err(e @ EmbedSourceError::Unavailable { .. }) => {
                    log::warn!(
                        "embedding request attempt {}/{} failed: {e}",
                        attempt + 1,
                        attempts
                    );
                    last = e.to_string();
                }
                Err(e) => return Err(e),
            }
        }
        Err(EmbedSourceError::Unavailable {
            attempts,
            message: last,
        })
    }

    fn dim(&self) -> Option<usize> {
        None
    }
}
