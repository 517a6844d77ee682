//! Diversity- and quality-aware retrieval of few-shot demonstrations,
//! with an evaluation harness that measures a retriever's effect on a
//! language model through token-level log-probabilities.
//!
//! The pieces:
//!
//! - [`embedding`]: dense vectors, normalization, cosine similarity.
//! - [`dataset`]: eval examples, the demonstration pool, scoring
//!   triplets, leave-one-out filtering, and ingestion (JSONL and the
//!   TruthfulQA CSV layout).
//! - [`retrieval`]: greedy maximal-marginal-relevance selection with a
//!   quality-bias term, plus the ablation variants.
//! - [`llm`]: prompt templating and log-probability scoring backends
//!   (deterministic mock and HTTP).
//! - [`metrics`]: MC1/MC2/MC3, the DPO metric, and pairwise-similarity
//!   diversity statistics.
//! - [`harness`]: the leave-one-out evaluation loop, ablation runner,
//!   diversity sweep, and embedding/bias/score caches.

pub mod dataset;
pub mod embedding;
pub mod harness;
pub mod llm;
pub mod metrics;
pub mod retrieval;

pub use dataset::{
    build_eval_set, content_hash, expand_pairs, expand_triplets, normalize_text, DemoStore,
    Demonstration, DpoTriplet, EvalExample, RawRecord,
};
pub use embedding::{cosine, Embedding, EmbeddingError};
pub use harness::{
    diversity_sweep, evaluate, precompute_biases, precompute_embeddings, run_ablation, EvalRun,
    HarnessError, SweepRow,
};
pub use llm::{
    format_prompt, quality_bias, score, CompletionScore, MockBackend, PromptTemplate, ScoreError,
    ScoringBackend, TokenScore,
};
pub use metrics::{
    avg_pairwise_similarity, dpo_aggregate, dpo_term, mc1, mc2, mc3, ExampleScores, MetricsError,
    MetricsReport,
};
pub use retrieval::{
    biased_relevance, mmr_select, retrieve, top_k_by_score, CandidateIndex, Method, RetrievalError,
    RetrievedContext, RetrieverConfig,
};
