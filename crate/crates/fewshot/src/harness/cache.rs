//! On-disk caches: question embeddings, demonstration quality biases, and
//! scored log-probabilities. All three are JSON Lines files that are
//! loaded at open and appended as new entries are computed, so an
//! interrupted run keeps completed work and a rerun only fills the
//! remainder.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::content_hash;
use crate::embedding::{Embedding, EmbeddingError};
use crate::llm::{score, ScoreError, ScoringBackend};

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad cache line {line} in {path}: {reason}")]
    BadLine {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("embedding dimension mismatch: cache holds {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CacheError + '_ {
    move |source| CacheError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn append_handle(path: &Path) -> Result<File, CacheError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(path))?;
    }
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CacheError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| CacheError::BadLine {
            path: path.display().to_string(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct EmbeddingLine {
    hash: String,
    vector: Vec<f64>,
}

/// Embedding cache keyed by the content hash of the (normalized) text.
/// Vectors are unit-normalized on load and on insert.
pub struct EmbeddingCache {
    entries: HashMap<String, Arc<Embedding>>,
    dim: Option<usize>,
    file: Option<File>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self {
            entries: HashMap::new(),
            dim: None,
            file: None,
        }
    }

    /// Open (or create) a cache backed by the given JSONL file.
    pub fn open(path: &Path) -> Result<Self, CacheError> {
        let mut cache = Self::in_memory();
        cache.merge_file(path)?;
        cache.file = Some(append_handle(path)?);
        Ok(cache)
    }

    /// Merge entries from an embedding file without adopting it as the
    /// write target.
    pub fn merge_file(&mut self, path: &Path) -> Result<usize, CacheError> {
        let lines: Vec<EmbeddingLine> = read_lines(path)?;
        let mut added = 0;
        for line in lines {
            let emb = Embedding::new(line.vector)?.normalize()?;
            self.check_dim(emb.dim())?;
            if self.entries.insert(line.hash, Arc::new(emb)).is_none() {
                added += 1;
            }
        }
        Ok(added)
    }

    fn check_dim(&mut self, dim: usize) -> Result<(), CacheError> {
        match self.dim {
            None => {
                self.dim = Some(dim);
                Ok(())
            }
            Some(expected) if expected == dim => Ok(()),
            Some(expected) => Err(CacheError::DimensionMismatch { expected, got: dim }),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn get_hash(&self, hash: &str) -> Option<Arc<Embedding>> {
        self.entries.get(hash).cloned()
    }

    pub fn get_text(&self, text: &str) -> Option<Arc<Embedding>> {
        self.get_hash(&content_hash(text))
    }

    pub fn contains_text(&self, text: &str) -> bool {
        self.entries.contains_key(&content_hash(text))
    }

    /// Insert a raw vector for a text; it is normalized and persisted.
    pub fn insert_text(
        &mut self,
        text: &str,
        vector: Vec<f64>,
    ) -> Result<Arc<Embedding>, CacheError> {
        let emb = Embedding::new(vector)?.normalize()?;
        self.check_dim(emb.dim())?;
        let hash = content_hash(text);
        if let Some(file) = &mut self.file {
            let line = EmbeddingLine {
                hash: hash.clone(),
                vector: emb.values().to_vec(),
            };
            writeln!(
                file,
                "{}",
                serde_json::to_string(&line).expect("serializable")
            )
            .map_err(|source| CacheError::Io {
                path: "<embedding cache>".into(),
                source,
            })?;
        }
        let arc = Arc::new(emb);
        self.entries.insert(hash, arc.clone());
        Ok(arc)
    }
}

#[derive(Serialize, Deserialize)]
struct BiasLine {
    demo_id: String,
    bias: f64,
    model: String,
}

/// Quality-bias cache keyed by demonstration id, scoped to one model.
/// Lines for other models in the same file are ignored on load.
pub struct BiasCache {
    model: String,
    entries: HashMap<String, f64>,
    file: Option<File>,
}

impl BiasCache {
    pub fn in_memory(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            entries: HashMap::new(),
            file: None,
        }
    }

    pub fn open(path: &Path, model: impl Into<String>) -> Result<Self, CacheError> {
        let model = model.into();
        let mut entries = HashMap::new();
        for line in read_lines::<BiasLine>(path)? {
            if line.model == model {
                entries.insert(line.demo_id, line.bias);
            }
        }
        Ok(Self {
            model,
            entries,
            file: Some(append_handle(path)?),
        })
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, demo_id: &str) -> Option<f64> {
        self.entries.get(demo_id).copied()
    }

    pub fn insert(&mut self, demo_id: &str, bias: f64) -> Result<(), CacheError> {
        if let Some(file) = &mut self.file {
            let line = BiasLine {
                demo_id: demo_id.to_string(),
                bias,
                model: self.model.clone(),
            };
            writeln!(
                file,
                "{}",
                serde_json::to_string(&line).expect("serializable")
            )
            .map_err(|source| CacheError::Io {
                path: "<bias cache>".into(),
                source,
            })?;
        }
        self.entries.insert(demo_id.to_string(), bias);
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ScoreLine {
    prefix_hash: String,
    target_hash: String,
    model: String,
    logprobs: Vec<f64>,
}

/// Call statistics for the caching scorer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: usize,
    pub backend_calls: usize,
}

struct ScoreCacheInner {
    entries: HashMap<(String, String), Vec<f64>>,
    file: Option<File>,
}

/// Scoring front-end that memoizes per-token log-probabilities by
/// (model, prefix hash, target hash), backed by an optional JSONL file.
/// Cache reads are concurrent-safe; writes are serialized.
pub struct CachingScorer<'a> {
    backend: &'a dyn ScoringBackend,
    model: String,
    inner: Mutex<ScoreCacheInner>,
    hits: AtomicUsize,
    backend_calls: AtomicUsize,
}

impl<'a> CachingScorer<'a> {
    pub fn new(backend: &'a dyn ScoringBackend) -> Self {
        Self {
            backend,
            model: backend.capability().model,
            inner: Mutex::new(ScoreCacheInner {
                entries: HashMap::new(),
                file: None,
            }),
            hits: AtomicUsize::new(0),
            backend_calls: AtomicUsize::new(0),
        }
    }

    /// Back the scorer with a JSONL file; existing entries for this
    /// backend's model are loaded.
    pub fn with_file(backend: &'a dyn ScoringBackend, path: &Path) -> Result<Self, CacheError> {
        let scorer = Self::new(backend);
        {
            let mut inner = scorer.inner.lock().expect("not poisoned");
            for line in read_lines::<ScoreLine>(path)? {
                if line.model == scorer.model {
                    inner
                        .entries
                        .insert((line.prefix_hash, line.target_hash), line.logprobs);
                }
            }
            inner.file = Some(append_handle(path)?);
        }
        Ok(scorer)
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn backend(&self) -> &dyn ScoringBackend {
        self.backend
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            backend_calls: self.backend_calls.load(Ordering::Relaxed),
        }
    }

    /// Per-token log-probabilities of the target given the prefix,
    /// from cache when available.
    pub fn logprobs(&self, prefix: &str, target: &str) -> Result<Vec<f64>, ScoreError> {
        let key = (raw_hash(prefix), raw_hash(target));
        {
            let inner = self.inner.lock().expect("not poisoned");
            if let Some(lps) = inner.entries.get(&key) {
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Ok(lps.clone());
            }
        }
        let cs = score(self.backend, prefix, target)?;
        self.backend_calls.fetch_add(1, Ordering::Relaxed);
        let lps: Vec<f64> = cs.tokens.iter().map(|t| t.logprob).collect();
        let mut inner = self.inner.lock().expect("not poisoned");
        if let Some(file) = &mut inner.file {
            let line = ScoreLine {
                prefix_hash: key.0.clone(),
                target_hash: key.1.clone(),
                model: self.model.clone(),
                logprobs: lps.clone(),
            };
            // best-effort persistence; the computed value is still returned
            if let Err(e) = writeln!(
                file,
                "{}",
                serde_json::to_string(&line).expect("serializable")
            ) {
                log::warn!("failed to append score cache line: {e}");
            }
        }
        inner.entries.insert(key, lps.clone());
        Ok(lps)
    }

    /// Total log-probability of the target given the prefix.
    pub fn total_logprob(&self, prefix: &str, target: &str) -> Result<f64, ScoreError> {
        Ok(self.logprobs(prefix, target)?.iter().sum())
    }
}

/// sha256 of the raw (un-normalized) text, hex-encoded. Prompts are
/// byte-significant, so no normalization is applied here.
fn raw_hash(text: &str) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    hex::encode(h.finalize())
}

/// Conventional cache file locations under a cache directory.
pub struct CacheLayout {
    pub dir: PathBuf,
}

impl CacheLayout {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn embeddings(&self) -> PathBuf {
        self.dir.join("embeddings.jsonl")
    }

    pub fn biases(&self, model: &str) -> PathBuf {
        self.dir.join(format!("bias-{}.jsonl", sanitize(model)))
    }

    pub fn scores(&self, model: &str) -> PathBuf {
        self.dir.join(format!("scores-{}.jsonl", sanitize(model)))
    }
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}
