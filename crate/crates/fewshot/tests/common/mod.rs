//! Shared test infrastructure: an independent brute-force oracle for the
//! greedy selection, random instance generators, synthetic corpora, and
//! backend wrappers for concurrency tests.

#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use fewshot::dataset::{build_eval_set, expand_pairs, DemoStore, EvalExample, RawRecord};
use fewshot::embedding::Embedding;
use fewshot::harness::EmbeddingCache;
use fewshot::llm::{
    whitespace_tokens, BackendCapability, CompletionScore, ScoreError, ScoringBackend, TokenScore,
};
use fewshot::retrieval::CandidateIndex;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Brute-force greedy re-implementation of the selection rule, used as an
/// oracle. Every step recomputes relevance, max-similarity and trade-off
/// scores from scratch with plain loops; ties break on the lowest index.
pub fn greedy_oracle(
    query: &[f64],
    embeddings: &[Vec<f64>],
    biases: &[f64],
    k: usize,
    lambda_d: f64,
    lambda_b: f64,
) -> Vec<usize> {
    let n = embeddings.len();
    let norm = query.iter().map(|x| x * x).sum::<f64>().sqrt();
    let q: Vec<f64> = query.iter().map(|x| x / norm).collect();
    let mut selected: Vec<usize> = Vec::new();
    while selected.len() < k.min(n) {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if selected.contains(&i) {
                continue;
            }
            let v = lambda_b * dot(&q, &embeddings[i]) + (1.0 - lambda_b) * biases[i];
            let score = if selected.is_empty() {
                v
            } else {
                let m = selected
                    .iter()
                    .map(|&j| dot(&embeddings[i], &embeddings[j]))
                    .fold(f64::NEG_INFINITY, f64::max);
                lambda_d * v - (1.0 - lambda_d) * m
            };
            match best {
                Some((_, bs)) if score <= bs => {}
                _ => best = Some((i, score)),
            }
        }
        selected.push(best.expect("candidates remain").0);
    }
    selected
}

/// Exhaustive top-k by cosine to the query: descending score, lowest index
/// first on ties.
pub fn top_k_cosine_oracle(query: &[f64], embeddings: &[Vec<f64>], k: usize) -> Vec<usize> {
    let norm = query.iter().map(|x| x * x).sum::<f64>().sqrt();
    let q: Vec<f64> = query.iter().map(|x| x / norm).collect();
    let mut order: Vec<usize> = (0..embeddings.len()).collect();
    let scores: Vec<f64> = embeddings.iter().map(|e| dot(&q, e)).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// A random selection instance: unit candidate embeddings, biases in
/// [-10, 0], and an unnormalized query.
pub struct Instance {
    pub query: Vec<f64>,
    pub embeddings: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

pub fn random_unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.iter().map(|x| x / norm).collect();
        }
    }
}

pub fn random_instance(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Instance {
    Instance {
        query: (0..d).map(|_| StandardNormal.sample(rng)).collect(),
        embeddings: (0..n).map(|_| random_unit_vector(rng, d)).collect(),
        biases: (0..n).map(|_| rng.gen_range(-10.0..0.0)).collect(),
    }
}

impl Instance {
    pub fn index(&self) -> CandidateIndex {
        let ids = (0..self.embeddings.len())
            .map(|i| format!("c{i}"))
            .collect();
        let embeddings = self
            .embeddings
            .iter()
            .map(|e| Arc::new(Embedding::new(e.clone()).unwrap()))
            .collect();
        CandidateIndex::new(ids, embeddings, self.biases.clone()).unwrap()
    }

    pub fn query_embedding(&self) -> Embedding {
        Embedding::new(self.query.clone()).unwrap()
    }

    /// Ids as produced by [`Instance::index`], for oracle comparison.
    pub fn ids_for(positions: &[usize]) -> Vec<String> {
        positions.iter().map(|i| format!("c{i}")).collect()
    }
}

/// Average pairwise dot product of the selected unit embeddings; the
/// test-side counterpart of the library's diversity statistic.
pub fn mean_pairwise_dot(embeddings: &[Vec<f64>], selected: &[usize]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (a, &i) in selected.iter().enumerate() {
        for &j in &selected[a + 1..] {
            sum += dot(&embeddings[i], &embeddings[j]);
            count += 1;
        }
    }
    sum / count as f64
}

/// Spearman rank correlation between two equally long samples.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rank = |vals: &[f64]| -> Vec<f64> {
        let mut order: Vec<usize> = (0..vals.len()).collect();
        order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
        let mut ranks = vec![0.0; vals.len()];
        for (r, &i) in order.iter().enumerate() {
            ranks[i] = r as f64;
        }
        ranks
    };
    let rx = rank(xs);
    let ry = rank(ys);
    let n = xs.len() as f64;
    let mean = (n - 1.0) / 2.0;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..xs.len() {
        cov += (rx[i] - mean) * (ry[i] - mean);
        vx += (rx[i] - mean).powi(2);
        vy += (ry[i] - mean).powi(2);
    }
    cov / (vx.sqrt() * vy.sqrt())
}

// ---------------------------------------------------------------------------
// Synthetic clustered corpus
// ---------------------------------------------------------------------------

/// A corpus of near-duplicate clusters with a query per cluster, plus a
/// backend whose correct-answer boost grows with the number of distinct
/// clusters present in the prompt.
pub struct ClusteredCorpus {
    pub store: DemoStore,
    pub evals: Vec<EvalExample>,
    pub query_embeddings: EmbeddingCache,
}

pub const CLUSTER_BOOST_PER_CLUSTER: f64 = 0.35;
pub const CORRECT_BASE: f64 = -6.0;
pub const INCORRECT_BASE: f64 = -5.0;

fn cluster_tag(cluster: usize) -> String {
    format!("topic-{cluster:02}")
}

/// Build `clusters x members` demonstrations whose question embeddings
/// share a common direction plus a per-cluster axis, with a separate eval
/// query per listed cluster. Queries sit closer to the common direction
/// than the members, so pure relevance stays inside the query's own
/// cluster while the diversified selection crosses clusters.
pub fn clustered_corpus(clusters: usize, members: usize, eval_clusters: usize) -> ClusteredCorpus {
    let dim = clusters + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut records = Vec::new();
    let mut cache = EmbeddingCache::in_memory();

    let mut demo_vectors: Vec<(String, Vec<f64>)> = Vec::new();
    for c in 0..clusters {
        for m in 0..members {
            let question = format!("What defines {} variant {m}?", cluster_tag(c));
            let mut v = vec![0.0; dim];
            v[0] = 1.0;
            v[c + 1] = 0.35;
            for component in v.iter_mut() {
                let noise: f64 = StandardNormal.sample(&mut rng);
                *component += 0.002 * noise;
            }
            demo_vectors.push((question.clone(), v));
            records.push(RawRecord {
                question,
                correct_answers: vec!["alpha reference statement".into()],
                incorrect_answers: vec![],
            });
        }
    }
    let corpus_evals = build_eval_set(&records).unwrap();
    let store = expand_pairs(&corpus_evals);
    for (question, v) in demo_vectors {
        cache.insert_text(&question, v).unwrap();
    }

    let mut eval_records = Vec::new();
    for c in 0..eval_clusters.min(clusters) {
        let question = format!("Overall, how would you summarize {}?", cluster_tag(c));
        let mut v = vec![0.0; dim];
        v[0] = 1.0;
        v[c + 1] = 0.05;
        cache.insert_text(&question, v).unwrap();
        eval_records.push(RawRecord {
            question,
            correct_answers: vec!["alpha conclusion".into()],
            incorrect_answers: vec!["beta conclusion".into()],
        });
    }
    let evals = build_eval_set(&eval_records).unwrap();

    let store = store.attach(|q| cache.get_text(q), |_| Some(-2.0));
    ClusteredCorpus {
        store,
        evals,
        query_embeddings: cache,
    }
}

/// Backend rewarding prompts that span many clusters: correct answers
/// ("alpha" targets) score `CORRECT_BASE + boost * distinct_clusters`,
/// incorrect answers ("beta" targets) a flat `INCORRECT_BASE`.
pub struct ClusterBoostBackend;

fn distinct_clusters(prefix: &str) -> usize {
    let mut seen = std::collections::HashSet::new();
    let bytes = prefix.as_bytes();
    let pat = b"topic-";
    let mut i = 0;
    while i + pat.len() + 2 <= bytes.len() {
        if &bytes[i..i + pat.len()] == pat {
            let digits = &bytes[i + pat.len()..i + pat.len() + 2];
            if digits.iter().all(u8::is_ascii_digit) {
                seen.insert(digits.to_vec());
            }
        }
        i += 1;
    }
    seen.len()
}

impl ScoringBackend for ClusterBoostBackend {
    fn capability(&self) -> BackendCapability {
        BackendCapability {
            model: "cluster-boost".into(),
            max_concurrency: 16,
            supports_scoring: true,
        }
    }

    fn score(&self, prefix: &str, target: &str) -> Result<CompletionScore, ScoreError> {
        let tokens = whitespace_tokens(target);
        let total = if target.contains("alpha") {
            (CORRECT_BASE + CLUSTER_BOOST_PER_CLUSTER * distinct_clusters(prefix) as f64).min(-0.1)
        } else if target.contains("beta") {
            INCORRECT_BASE
        } else {
            -2.0 * tokens.len() as f64
        };
        let per_token = total / tokens.len() as f64;
        let scored = tokens
            .into_iter()
            .map(|t| TokenScore::new(t, per_token).unwrap())
            .collect();
        Ok(CompletionScore::from_tokens(scored))
    }
}

/// Wraps a backend with a small pseudo-random sleep per call so concurrent
/// completions land in a scrambled order. Scores are unchanged.
pub struct JitterBackend<B: ScoringBackend> {
    inner: B,
    seed: u64,
    counter: std::sync::atomic::AtomicU64,
}

impl<B: ScoringBackend> JitterBackend<B> {
    pub fn new(inner: B, seed: u64) -> Self {
        Self {
            inner,
            seed,
            counter: std::sync::atomic::AtomicU64::new(0),
        }
    }
}

impl<B: ScoringBackend> ScoringBackend for JitterBackend<B> {
    fn capability(&self) -> BackendCapability {
        self.inner.capability()
    }

    fn score(&self, prefix: &str, target: &str) -> Result<CompletionScore, ScoreError> {
        let n = self
            .counter
            .fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ n);
        std::thread::sleep(std::time::Duration::from_micros(rng.gen_range(0..500)));
        self.inner.score(prefix, target)
    }
}

/// A backend that fails transiently for questions containing a marker
/// until `allow_after` prior failures have occurred, for drop/resume
/// tests.
pub struct FlakyBackend {
    pub inner: fewshot::MockBackend,
    pub fail_marker: String,
    pub failures_left: std::sync::atomic::AtomicUsize,
}

impl FlakyBackend {
    pub fn new(fail_marker: impl Into<String>, failures: usize) -> Self {
        Self {
            inner: fewshot::MockBackend::new(-2.0),
            fail_marker: fail_marker.into(),
            failures_left: std::sync::atomic::AtomicUsize::new(failures),
        }
    }
}

impl ScoringBackend for FlakyBackend {
    fn capability(&self) -> BackendCapability {
        self.inner.capability()
    }

    fn score(&self, prefix: &str, target: &str) -> Result<CompletionScore, ScoreError> {
        if prefix.contains(&self.fail_marker) || target.contains(&self.fail_marker) {
            let left = self.failures_left.load(std::sync::atomic::Ordering::SeqCst);
            if left > 0 {
                self.failures_left
                    .fetch_sub(1, std::sync::atomic::Ordering::SeqCst);
                return Err(ScoreError::BackendUnavailable {
                    attempts: 1,
                    message: "flaky".into(),
                });
            }
        }
        self.inner.score(prefix, target)
    }
}

/// Simple random corpus: `n_demos` single-answer demo questions plus
/// `n_evals` separate eval questions, all hash-embedded at dimension `d`.
pub fn random_corpus(
    n_demos: usize,
    n_evals: usize,
    d: usize,
    seed: u64,
) -> (DemoStore, Vec<EvalExample>, EmbeddingCache) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cache = EmbeddingCache::in_memory();
    let mut records = Vec::new();
    for i in 0..n_demos {
        let question = format!("Corpus question number {i}?");
        cache
            .insert_text(&question, random_unit_vector(&mut rng, d))
            .unwrap();
        records.push(RawRecord {
            question,
            correct_answers: vec![format!("demo answer {i}")],
            incorrect_answers: vec![],
        });
    }
    let corpus_evals = build_eval_set(&records).unwrap();
    let store = expand_pairs(&corpus_evals).attach(|q| cache.get_text(q), |_| Some(-2.0));

    let mut eval_records = Vec::new();
    for i in 0..n_evals {
        let question = format!("Probe question number {i}?");
        cache
            .insert_text(&question, random_unit_vector(&mut rng, d))
            .unwrap();
        eval_records.push(RawRecord {
            question,
            correct_answers: vec![format!("right answer {i}")],
            incorrect_answers: vec![format!("wrong answer {i}")],
        });
    }
    let evals = build_eval_set(&eval_records).unwrap();
    (store, evals, cache)
}
