//! Evaluation metrics: the MC1/MC2/MC3 multiple-choice classification
//! metrics over correct/incorrect answer log-probabilities, the DPO metric
//! measuring how much a retrieved context shifts probability toward
//! correct answers relative to the no-context baseline, and the average
//! pairwise similarity statistic used to quantify context diversity.
//!
//! All log quantities are natural logarithms (nats).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine, Embedding, EmbeddingError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("metric requires at least one usable example")]
    EmptyInput,
    #[error("pairwise similarity requires at least two embeddings")]
    TooFewItems,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// Per-example answer log-probabilities, with and without a retrieved
/// context. The `bare` lists are positionally aligned with the `ctx`
/// lists.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExampleScores {
    pub example_id: String,
    pub correct_logprobs_ctx: Vec<f64>,
    pub incorrect_logprobs_ctx: Vec<f64>,
    pub correct_logprobs_bare: Vec<f64>,
    pub incorrect_logprobs_bare: Vec<f64>,
}

/// Numerically stable ln(sigmoid(x)).
pub fn log_sigmoid(x: f64) -> f64 {
    if x < 0.0 {
        x - x.exp().ln_1p()
    } else {
        -(-x).exp().ln_1p()
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Examples usable by the MC metrics: at least one correct and one
/// incorrect answer. Examples without incorrect answers are skipped and
/// reported in run metadata.
fn mc_usable(scores: &[ExampleScores]) -> Vec<&ExampleScores> {
    scores
        .iter()
        .filter(|s| !s.correct_logprobs_ctx.is_empty() && !s.incorrect_logprobs_ctx.is_empty())
        .collect()
}

/// Fraction of examples whose designated correct answer (the first listed,
/// which ingestion places as the best answer) has strictly greater
/// context log-probability than every incorrect answer.
pub fn mc1(scores: &[ExampleScores]) -> Result<f64, MetricsError> {
    let usable = mc_usable(scores);
    if usable.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let hits = usable
        .iter()
        .filter(|s| {
            let best = s.correct_logprobs_ctx[0];
            s.incorrect_logprobs_ctx.iter().all(|&inc| best > inc)
        })
        .count();
    Ok(hits as f64 / usable.len() as f64)
}

/// Mean over examples of the fraction of correct answers that beat every
/// incorrect answer (strict inequality).
pub fn mc2(scores: &[ExampleScores]) -> Result<f64, MetricsError> {
    let usable = mc_usable(scores);
    if usable.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let total: f64 = usable
        .iter()
        .map(|s| {
            let wins = s
                .correct_logprobs_ctx
                .iter()
                .filter(|&&c| s.incorrect_logprobs_ctx.iter().all(|&inc| c > inc))
                .count();
            wins as f64 / s.correct_logprobs_ctx.len() as f64
        })
        .sum();
    Ok(total / usable.len() as f64)
}

/// Mean over examples of the ratio of total correct-answer probability to
/// total incorrect-answer probability (context scores). Computed through
/// log-sum-exp so long answers do not underflow.
pub fn mc3(scores: &[ExampleScores]) -> Result<f64, MetricsError> {
    let usable = mc_usable(scores);
    if usable.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let total: f64 = usable
        .iter()
        .map(|s| {
            (log_sum_exp(&s.correct_logprobs_ctx) - log_sum_exp(&s.incorrect_logprobs_ctx)).exp()
        })
        .sum();
    Ok(total / usable.len() as f64)
}

/// Count of examples the MC metrics skip for lack of incorrect answers.
pub fn mc_skipped(scores: &[ExampleScores]) -> usize {
    scores.len() - mc_usable(scores).len()
}

/// One DPO term: `ln sigmoid((a_ctx - a_bare) - (abar_ctx - abar_bare))`,
/// the log-odds that the context improves the correct answer more than the
/// incorrect one. When no incorrect answer is available the second delta
/// is omitted. Always <= 0; a context that changes nothing gives ln(1/2).
pub fn dpo_term(a_ctx: f64, a_bare: f64, incorrect: Option<(f64, f64)>) -> f64 {
    let correct_delta = a_ctx - a_bare;
    let incorrect_delta = incorrect.map(|(c, b)| c - b).unwrap_or(0.0);
    log_sigmoid(correct_delta - incorrect_delta)
}

/// Arithmetic mean of per-triplet DPO terms.
pub fn dpo_aggregate(terms: &[f64]) -> Result<f64, MetricsError> {
    if terms.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// Mean cosine similarity over all unordered pairs of the given
/// embeddings.
pub fn avg_pairwise_similarity(embeddings: &[&Embedding]) -> Result<f64, MetricsError> {
    let n = embeddings.len();
    if n < 2 {
        return Err(MetricsError::TooFewItems);
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            sum += cosine(embeddings[i], embeddings[j])?;
        }
    }
    Ok(sum / (n * (n - 1) / 2) as f64)
}

/// Aggregate metrics for one retriever configuration.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub method: String,
    pub k: usize,
    pub lambda_d: f64,
    pub lambda_b: f64,
    pub dpo: f64,
    pub mc1: f64,
    pub mc2: f64,
    pub mc3: f64,
    pub n_examples: usize,
    pub n_triplets: usize,
    /// Examples skipped by the MC metrics for lack of incorrect answers.
    pub n_skipped_no_incorrect: usize,
    /// Examples dropped because scoring ultimately failed.
    pub n_dropped: usize,
    /// Binomial standard error of MC1 at this sample size.
    pub mc1_standard_error: f64,
    pub model: String,
}

impl MetricsReport {
    pub fn markdown_header() -> String {
        "| Method | DPO | MC1 | MC2 | MC3 |\n|---|---:|---:|---:|---:|".to_string()
    }

    pub fn markdown_row(&self) -> String {
        format!(
            "| {} | {:.4} | {:.4} | {:.4} | {:.4} |",
            self.method, self.dpo, self.mc1, self.mc2, self.mc3
        )
    }

    /// Render reports as a markdown table matching the ablation layout.
    pub fn markdown_table(reports: &[MetricsReport]) -> String {
        let mut out = Self::markdown_header();
        for r in reports {
            out.push('\n');
            out.push_str(&r.markdown_row());
        }
        out.push('\n');
        out
    }
}

/// Binomial standard error sqrt(p(1-p)/n).
pub fn binomial_standard_error(p: f64, n: usize) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    (p * (1.0 - p) / n as f64).sqrt()
}
