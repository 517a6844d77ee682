//! The evaluation harness: leave-one-out scoring of every eval example
//! with and without a retrieved context, metric aggregation, the ablation
//! runner over retriever variants, the diversity sweep, and cache
//! precomputation.
//!
//! Scoring requests run through a bounded worker pool; results are merged
//! by job index, so reports do not depend on response arrival order.

mod cache;
mod embed;

pub use cache::{BiasCache, CacheError, CacheLayout, CacheStats, CachingScorer, EmbeddingCache};
pub use embed::{
    EmbedSourceError, EmbeddingSource, FileEmbeddingSource, HashEmbeddingSource,
    HttpEmbeddingConfig, HttpEmbeddingSource,
};

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    content_hash, expand_triplets, normalize_text, DemoStore, Demonstration, EvalExample,
};
use crate::embedding::Embedding;
use crate::llm::PromptTemplate;
use crate::llm::{format_prompt, quality_bias, ScoreError, ScoringBackend, TemplateError};
use crate::metrics::{
    avg_pairwise_similarity, binomial_standard_error, dpo_aggregate, dpo_term, mc1, mc2, mc3,
    mc_skipped, ExampleScores, MetricsError, MetricsReport,
};
use crate::retrieval::{retrieve, CandidateIndex, Method, RetrievalError, RetrieverConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no embedding available for text {hash} ({preview:?})")]
    MissingEmbedding { hash: String, preview: String },
    #[error("no quality bias available for demonstration {demo_id}")]
    MissingBias { demo_id: String },
    #[error("leave-one-out violation: example {example_id} retrieved demonstration {demo_id} with the same question")]
    LeaveOneOutViolation { example_id: String, demo_id: String },
    #[error("scoring failed for example {example_id}: {source}")]
    Backend {
        example_id: String,
        source: ScoreError,
    },
    #[error("bias computation failed for demonstration {demo_id}: {source}")]
    BiasComputation { demo_id: String, source: ScoreError },
    #[error("all {0} examples were dropped")]
    AllExamplesDropped(usize),
    #[error("invalid run: {0}")]
    InvalidRun(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    EmbedSource(#[from] EmbedSourceError),
}

/// One evaluation run's configuration.
#[derive(Debug, Clone)]
pub struct EvalRun {
    pub dataset_id: String,
    pub retriever: RetrieverConfig,
    pub template: PromptTemplate,
    pub cache_dir: Option<PathBuf>,
    /// Upper bound on in-flight scoring requests; further capped by the
    /// backend's own declared concurrency.
    pub concurrency: usize,
    pub seed: u64,
}

impl EvalRun {
    pub fn new(dataset_id: impl Into<String>, retriever: RetrieverConfig) -> Self {
        Self {
            dataset_id: dataset_id.into(),
            retriever,
            template: PromptTemplate::default(),
            cache_dir: None,
            concurrency: 1,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.concurrency < 1 {
            return Err(HarnessError::InvalidRun("concurrency must be >= 1".into()));
        }
        self.template.validate()?;
        self.retriever.validate()?;
        Ok(())
    }
}

/// The context retrieved for one example, by demonstration id.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExampleContext {
    pub example_id: String,
    pub demo_ids: Vec<String>,
}

/// Everything a single evaluation produced, beyond the headline report.
#[derive(Debug)]
pub struct EvalOutcome {
    pub report: MetricsReport,
    pub contexts: Vec<ExampleContext>,
    pub example_scores: Vec<ExampleScores>,
    /// Mean over examples of the average pairwise cosine similarity of the
    /// retrieved context embeddings; None when no context had two or more
    /// demonstrations.
    pub avg_context_similarity: Option<f64>,
    pub dropped_example_ids: Vec<String>,
    pub cache_stats: CacheStats,
}

/// One row of the diversity-vs-DPO sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda_d: f64,
    pub avg_similarity: f64,
    pub dpo: f64,
}

struct PendingExample<'a> {
    example: &'a EvalExample,
    context: Vec<&'a Demonstration>,
    correct_ctx: Vec<usize>,
    correct_bare: Vec<usize>,
    incorrect_ctx: Vec<usize>,
    incorrect_bare: Vec<usize>,
}

type ScoredLogprobs = Result<Vec<f64>, ScoreError>;

/// Per-answer (context, bare) total log-probabilities keyed by normalized
/// answer text.
type AnswerTotals = HashMap<String, (f64, f64)>;

/// Retrieve the leave-one-out context for one question. An empty candidate
/// view yields an empty context (zero-shot).
fn retrieve_context<'s>(
    config: &RetrieverConfig,
    store: &'s DemoStore,
    query_embeddings: &EmbeddingCache,
    question: &str,
) -> Result<Vec<&'s Demonstration>, HarnessError> {
    let view = store.leave_one_out(question);
    if view.is_empty() {
        return Ok(Vec::new());
    }
    let mut ids = Vec::with_capacity(view.len());
    let mut embeddings = Vec::with_capacity(view.len());
    let mut biases = Vec::with_capacity(view.len());
    for demo in &view {
        let emb = demo
            .embedding
            .clone()
            .ok_or_else(|| HarnessError::MissingEmbedding {
                hash: content_hash(&demo.question),
                preview: embed::preview(&demo.question),
            })?;
        let bias = if config.method.uses_bias() {
            demo.bias.ok_or_else(|| HarnessError::MissingBias {
                demo_id: demo.id.clone(),
            })?
        } else {
            demo.bias.unwrap_or(0.0)
        };
        ids.push(demo.id.clone());
        embeddings.push(emb);
        biases.push(bias);
    }
    let index = CandidateIndex::new(ids, embeddings, biases)?;

    let query = if config.method.needs_query() {
        // demos sharing the question carry the same embedding
        let emb = query_embeddings.get_text(question).or_else(|| {
            store
                .find_by_question(question)
                .and_then(|d| d.embedding.clone())
        });
        Some(emb.ok_or_else(|| HarnessError::MissingEmbedding {
            hash: content_hash(question),
            preview: embed::preview(question),
        })?)
    } else {
        None
    };

    let ctx = retrieve(config, &index, query.as_deref())?;
    let by_id: HashMap<&str, &Demonstration> = view.iter().map(|d| (d.id.as_str(), *d)).collect();
    Ok(ctx
        .ids
        .iter()
        .map(|id| *by_id.get(id.as_str()).expect("retrieved id is in the view"))
        .collect())
}

/// Run scoring jobs through a bounded worker pool. Duplicate
/// (prefix, target) jobs are scored once. Results are returned in job
/// order regardless of completion order.
fn score_jobs(
    scorer: &CachingScorer,
    jobs: &[(String, String)],
    concurrency: usize,
) -> Vec<ScoredLogprobs> {
    let mut unique: Vec<&(String, String)> = Vec::new();
    let mut key_of: HashMap<(&str, &str), usize> = HashMap::new();
    let mut job_to_unique = Vec::with_capacity(jobs.len());
    for job in jobs {
        let key = (job.0.as_str(), job.1.as_str());
        let idx = *key_of.entry(key).or_insert_with(|| {
            unique.push(job);
            unique.len() - 1
        });
        job_to_unique.push(idx);
    }

    let results: Mutex<Vec<Option<ScoredLogprobs>>> = Mutex::new(vec![None; unique.len()]);
    let next = AtomicUsize::new(0);
    let workers = concurrency.max(1).min(unique.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= unique.len() {
                    break;
                }
                let r = scorer.logprobs(&unique[i].0, &unique[i].1);
                results.lock().expect("not poisoned")[i] = Some(r);
            });
        }
    });

    let results = results.into_inner().expect("not poisoned");
    job_to_unique
        .into_iter()
        .map(|u| results[u].clone().expect("every job was scored"))
        .collect()
}

/// Evaluate one retriever configuration. Convenience wrapper that builds
/// a caching scorer from the run's cache directory.
pub fn evaluate(
    run: &EvalRun,
    evals: &[EvalExample],
    store: &DemoStore,
    query_embeddings: &EmbeddingCache,
    backend: &dyn ScoringBackend,
) -> Result<MetricsReport, HarnessError> {
    let scorer = make_scorer(run, backend)?;
    evaluate_with_scorer(run, evals, store, query_embeddings, &scorer).map(|o| o.report)
}

fn make_scorer<'a>(
    run: &EvalRun,
    backend: &'a dyn ScoringBackend,
) -> Result<CachingScorer<'a>, HarnessError> {
    Ok(match &run.cache_dir {
        Some(dir) => {
            let path = CacheLayout::new(dir).scores(&backend.capability().model);
            CachingScorer::with_file(backend, &path)?
        }
        None => CachingScorer::new(backend),
    })
}

/// Full evaluation loop: for every example, build the leave-one-out view,
/// retrieve a context, and score each correct and incorrect answer both
/// with the context and with the empty context; then aggregate the MC and
/// DPO metrics. Examples whose scoring fails transiently are dropped and
/// counted; a non-retryable backend rejection aborts the run.
pub fn evaluate_with_scorer(
    run: &EvalRun,
    evals: &[EvalExample],
    store: &DemoStore,
    query_embeddings: &EmbeddingCache,
    scorer: &CachingScorer,
) -> Result<EvalOutcome, HarnessError> {
    run.validate()?;
    if evals.is_empty() {
        return Err(HarnessError::InvalidRun("no evaluation examples".into()));
    }
    let backend_cap = scorer.backend().capability();
    if !backend_cap.supports_scoring {
        return Err(HarnessError::InvalidRun(format!(
            "backend {} does not support scoring",
            backend_cap.model
        )));
    }
    let concurrency = run.concurrency.min(backend_cap.max_concurrency).max(1);

    // Phase 1: retrieval (sequential, deterministic) and job assembly.
    let mut jobs: Vec<(String, String)> = Vec::new();
    let mut pending: Vec<PendingExample> = Vec::with_capacity(evals.len());
    for example in evals {
        let context = retrieve_context(&run.retriever, store, query_embeddings, &example.question)?;
        for demo in &context {
            if normalize_text(&demo.question) == normalize_text(&example.question) {
                return Err(HarnessError::LeaveOneOutViolation {
                    example_id: example.id.clone(),
                    demo_id: demo.id.clone(),
                });
            }
        }
        let ctx_prefix = format_prompt(
            &run.template,
            context
                .iter()
                .map(|d| (d.question.as_str(), d.answer.as_str())),
            &example.question,
        );
        let bare_prefix = format_prompt(&run.template, [], &example.question);

        let mut push_jobs = |answers: &[String]| -> Result<(Vec<usize>, Vec<usize>), HarnessError> {
            let mut ctx_idx = Vec::with_capacity(answers.len());
            let mut bare_idx = Vec::with_capacity(answers.len());
            for answer in answers {
                let target = run.template.completion_target(&example.question, answer)?;
                ctx_idx.push(jobs.len());
                jobs.push((ctx_prefix.clone(), target.clone()));
                bare_idx.push(jobs.len());
                jobs.push((bare_prefix.clone(), target));
            }
            Ok((ctx_idx, bare_idx))
        };
        let (correct_ctx, correct_bare) = push_jobs(&example.correct_answers)?;
        let (incorrect_ctx, incorrect_bare) = push_jobs(&example.incorrect_answers)?;
        pending.push(PendingExample {
            example,
            context,
            correct_ctx,
            correct_bare,
            incorrect_ctx,
            incorrect_bare,
        });
    }

    // Phase 2: scoring through the bounded pool.
    let results = score_jobs(scorer, &jobs, concurrency);

    // Phase 3: sequential assembly and aggregation.
    let mut kept: Vec<(&PendingExample, ExampleScores)> = Vec::new();
    let mut dropped: Vec<String> = Vec::new();
    for p in &pending {
        let total = |idx: &[usize]| -> Result<Vec<f64>, ScoreError> {
            idx.iter()
                .map(|&i| results[i].clone().map(|lps| lps.iter().sum()))
                .collect()
        };
        let assembled = (|| -> Result<ExampleScores, ScoreError> {
            Ok(ExampleScores {
                example_id: p.example.id.clone(),
                correct_logprobs_ctx: total(&p.correct_ctx)?,
                correct_logprobs_bare: total(&p.correct_bare)?,
                incorrect_logprobs_ctx: total(&p.incorrect_ctx)?,
                incorrect_logprobs_bare: total(&p.incorrect_bare)?,
            })
        })();
        match assembled {
            Ok(scores) => kept.push((p, scores)),
            Err(e @ ScoreError::BackendRejected { .. }) => {
                return Err(HarnessError::Backend {
                    example_id: p.example.id.clone(),
                    source: e,
                });
            }
            Err(e) => {
                log::warn!("dropping example {}: {e}", p.example.id);
                dropped.push(p.example.id.clone());
            }
        }
    }
    if kept.is_empty() {
        return Err(HarnessError::AllExamplesDropped(evals.len()));
    }

    // DPO over the distinct-triplet expansion of the kept examples; an
    // example without incorrect answers contributes one term per correct
    // answer with the incorrect delta omitted.
    let mut answer_lookup: HashMap<&str, (AnswerTotals, AnswerTotals)> = HashMap::new();
    for (p, scores) in &kept {
        // first occurrence wins, matching the triplet deduplication
        let mut correct = HashMap::new();
        for (i, answer) in p.example.correct_answers.iter().enumerate() {
            correct.entry(normalize_text(answer)).or_insert((
                scores.correct_logprobs_ctx[i],
                scores.correct_logprobs_bare[i],
            ));
        }
        let mut incorrect = HashMap::new();
        for (i, answer) in p.example.incorrect_answers.iter().enumerate() {
            incorrect.entry(normalize_text(answer)).or_insert((
                scores.incorrect_logprobs_ctx[i],
                scores.incorrect_logprobs_bare[i],
            ));
        }
        answer_lookup.insert(p.example.id.as_str(), (correct, incorrect));
    }
    let mut terms: Vec<f64> = Vec::new();
    for triplet in expand_triplets(evals) {
        if let Some((correct, incorrect)) = answer_lookup.get(triplet.source_example_id.as_str()) {
            let (a_ctx, a_bare) = correct[&normalize_text(&triplet.correct)];
            let inc = incorrect[&normalize_text(&triplet.incorrect)];
            terms.push(dpo_term(a_ctx, a_bare, Some(inc)));
        }
    }
    for (p, scores) in &kept {
        if p.example.incorrect_answers.is_empty() {
            for (&ctx, &bare) in scores
                .correct_logprobs_ctx
                .iter()
                .zip(&scores.correct_logprobs_bare)
            {
                terms.push(dpo_term(ctx, bare, None));
            }
        }
    }

    let example_scores: Vec<ExampleScores> = kept.iter().map(|(_, s)| s.clone()).collect();
    let mc1_v = mc1(&example_scores)?;
    let report = MetricsReport {
        method: run.retriever.method.to_string(),
        k: run.retriever.k,
        lambda_d: run.retriever.lambda_d,
        lambda_b: run.retriever.lambda_b,
        dpo: dpo_aggregate(&terms)?,
        mc1: mc1_v,
        mc2: mc2(&example_scores)?,
        mc3: mc3(&example_scores)?,
        n_examples: kept.len(),
        n_triplets: terms.len(),
        n_skipped_no_incorrect: mc_skipped(&example_scores),
        n_dropped: dropped.len(),
        mc1_standard_error: binomial_standard_error(
            mc1_v,
            example_scores.len() - mc_skipped(&example_scores),
        ),
        model: scorer.model().to_string(),
    };

    let mut similarity_sum = 0.0;
    let mut similarity_count = 0usize;
    for (p, _) in &kept {
        if p.context.len() >= 2 {
            let embs: Vec<&Embedding> = p
                .context
                .iter()
                .filter_map(|d| d.embedding.as_deref())
                .collect();
            if embs.len() >= 2 {
                similarity_sum += avg_pairwise_similarity(&embs)?;
                similarity_count += 1;
            }
        }
    }

    Ok(EvalOutcome {
        report,
        contexts: kept
            .iter()
            .map(|(p, _)| ExampleContext {
                example_id: p.example.id.clone(),
                demo_ids: p.context.iter().map(|d| d.id.clone()).collect(),
            })
            .collect(),
        example_scores,
        avg_context_similarity: (similarity_count > 0)
            .then(|| similarity_sum / similarity_count as f64),
        dropped_example_ids: dropped,
        cache_stats: scorer.stats(),
    })
}

/// Run the same evaluation for each method, sharing caches, and return one
/// report per method.
pub fn run_ablation(
    run: &EvalRun,
    methods: &[Method],
    evals: &[EvalExample],
    store: &DemoStore,
    query_embeddings: &EmbeddingCache,
    backend: &dyn ScoringBackend,
) -> Result<Vec<MetricsReport>, HarnessError> {
    if methods.is_empty() {
        return Err(HarnessError::InvalidRun("no methods to run".into()));
    }
    let scorer = make_scorer(run, backend)?;
    let mut reports = Vec::with_capacity(methods.len());
    for &method in methods {
        let mut method_run = run.clone();
        method_run.retriever.method = method;
        let outcome = evaluate_with_scorer(&method_run, evals, store, query_embeddings, &scorer)?;
        reports.push(outcome.report);
    }
    Ok(reports)
}

/// Evaluate the full algorithm across a grid of diversity weights,
/// recording the DPO metric and the mean retrieved-context similarity at
/// each point.
pub fn diversity_sweep(
    run: &EvalRun,
    lambda_d_grid: &[f64],
    evals: &[EvalExample],
    store: &DemoStore,
    query_embeddings: &EmbeddingCache,
    backend: &dyn ScoringBackend,
) -> Result<Vec<SweepRow>, HarnessError> {
    for &ld in lambda_d_grid {
        if !(0.0..=1.0).contains(&ld) || !ld.is_finite() {
            return Err(HarnessError::InvalidRun(format!(
                "grid value {ld} outside [0, 1]"
            )));
        }
    }
    if lambda_d_grid.is_empty() {
        return Ok(Vec::new());
    }
    let scorer = make_scorer(run, backend)?;
    let mut rows = Vec::with_capacity(lambda_d_grid.len());
    for &lambda_d in lambda_d_grid {
        let mut point_run = run.clone();
        point_run.retriever.method = Method::RelDivBias;
        point_run.retriever.lambda_d = lambda_d;
        let outcome = evaluate_with_scorer(&point_run, evals, store, query_embeddings, &scorer)?;
        rows.push(SweepRow {
            lambda_d,
            avg_similarity: outcome.avg_context_similarity.unwrap_or(f64::NAN),
            dpo: outcome.report.dpo,
        });
    }
    Ok(rows)
}

/// Ensure every demonstration question and eval question has a cached
/// unit-normalized embedding. Returns the number of newly embedded texts;
/// a warm cache costs zero source calls.
pub fn precompute_embeddings(
    store: &DemoStore,
    evals: &[EvalExample],
    source: &dyn EmbeddingSource,
    cache: &mut EmbeddingCache,
) -> Result<usize, HarnessError> {
    let mut seen: HashSet<String> = HashSet::new();
    let mut texts: Vec<&str> = Vec::new();
    for d in store.demos() {
        if seen.insert(content_hash(&d.question)) {
            texts.push(&d.question);
        }
    }
    for e in evals {
        if seen.insert(content_hash(&e.question)) {
            texts.push(&e.question);
        }
    }
    let mut added = 0;
    for text in texts {
        if cache.contains_text(text) {
            continue;
        }
        let vector = source.embed(text)?;
        let expected = source.dim().or(cache.dim());
        if let Some(expected) = expected {
            if vector.len() != expected {
                return Err(HarnessError::EmbedSource(
                    EmbedSourceError::WrongDimension {
                        preview: embed::preview(text),
                        expected,
                        got: vector.len(),
                    },
                ));
            }
        }
        cache.insert_text(text, vector)?;
        added += 1;
    }
    Ok(added)
}

/// Ensure every demonstration has a cached quality bias, computing missing
/// ones through the backend with the given concurrency. Completed entries
/// are written through immediately, so an interrupted run resumes where it
/// stopped.
pub fn precompute_biases(
    store: &DemoStore,
    backend: &dyn ScoringBackend,
    template: &PromptTemplate,
    cache: &mut BiasCache,
    concurrency: usize,
) -> Result<usize, HarnessError> {
    let missing: Vec<&Demonstration> = store
        .demos()
        .iter()
        .filter(|d| cache.get(&d.id).is_none())
        .collect();
    if missing.is_empty() {
        return Ok(0);
    }
    let workers = concurrency
        .max(1)
        .min(backend.capability().max_concurrency.max(1))
        .min(missing.len());
    let cache = Mutex::new(cache);
    let first_error: Mutex<Option<HarnessError>> = Mutex::new(None);
    let next = AtomicUsize::new(0);
    let added = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= missing.len() {
                    break;
                }
                let demo = missing[i];
                match quality_bias(backend, demo, template) {
                    Ok(bias) => {
                        let mut cache = cache.lock().expect("not poisoned");
                        if let Err(e) = cache.insert(&demo.id, bias) {
                            let mut slot = first_error.lock().expect("not poisoned");
                            slot.get_or_insert(HarnessError::Cache(e));
                        } else {
                            added.fetch_add(1, Ordering::Relaxed);
                        }
                    }
                    Err(e) => {
                        let mut slot = first_error.lock().expect("not poisoned");
                        slot.get_or_insert(HarnessError::BiasComputation {
                            demo_id: demo.id.clone(),
                            source: e,
                        });
                    }
                }
            });
        }
    });
    if let Some(e) = first_error.into_inner().expect("not poisoned") {
        return Err(e);
    }
    Ok(added.load(Ordering::Relaxed))
}

/// Render sweep rows as CSV with the `lambda_d,avg_similarity,dpo` header.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("lambda_d,avg_similarity,dpo\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.lambda_d, r.avg_similarity, r.dpo));
    }
    out
}

/// Minimal SVG scatter of avg_similarity (x) against dpo (y).
pub fn sweep_svg(rows: &[SweepRow]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const M: f64 = 60.0;
    let finite: Vec<&SweepRow> = rows
        .iter()
        .filter(|r| r.avg_similarity.is_finite() && r.dpo.is_finite())
        .collect();
    let (x_min, x_max, y_min, y_max) = if finite.is_empty() {
        (0.0, 1.0, -1.0, 0.0)
    } else {
        let xs: Vec<f64> = finite.iter().map(|r| r.avg_similarity).collect();
        let ys: Vec<f64> = finite.iter().map(|r| r.dpo).collect();
        let pad = |min: f64, max: f64| {
            let span = (max - min).abs();
            if span < 1e-12 {
                (min - 0.5, max + 0.5)
            } else {
                (min - 0.05 * span, max + 0.05 * span)
            }
        };
        let (x_min, x_max) = pad(
            xs.iter().cloned().fold(f64::INFINITY, f64::min),
            xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        );
        let (y_min, y_max) = pad(
            ys.iter().cloned().fold(f64::INFINITY, f64::min),
            ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        );
        (x_min, x_max, y_min, y_max)
    };
    let sx = |x: f64| M + (x - x_min) / (x_max - x_min) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y_min) / (y_max - y_min) * (H - 2.0 * M);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <line x1=\"{M}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{}\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"14\">avg_similarity</text>\n\
         <text x=\"16\" y=\"{}\" transform=\"rotate(-90 16 {})\" text-anchor=\"middle\" font-size=\"14\">dpo</text>\n",
        H - M,
        W - M,
        H - M,
        H - M,
        W / 2.0,
        H - 16.0,
        H / 2.0,
        H / 2.0,
    );
    for r in &finite {
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"steelblue\"><title>lambda_d={}</title></circle>\n",
            sx(r.avg_similarity),
            sy(r.dpo),
            r.lambda_d
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{M}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{:.3}</text>\n\
         <text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{:.3}</text>\n\
         <text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{:.3}</text>\n\
         <text x=\"{}\" y=\"{M}\" font-size=\"11\" text-anchor=\"end\">{:.3}</text>\n",
        H - M + 24.0,
        x_min,
        W - M,
        H - M + 24.0,
        x_max,
        M - 6.0,
        H - M,
        y_min,
        M - 6.0,
        y_max,
    ));
    svg.push_str("</svg>\n");
    svg
}
