//! Token-level log-probability scoring of a target text given a prefix,
//! behind a backend trait with a deterministic offline mock and an HTTP
//! implementation, plus the per-demonstration quality bias derived from
//! answer perplexity.

mod http;
mod template;

pub use http::{HttpBackend, HttpBackendConfig};
pub use template::{format_prompt, PromptTemplate, TemplateError};

use std::collections::HashMap;

use thiserror::Error;

use crate::dataset::Demonstration;

#[derive(Debug, Clone, Error)]
pub enum ScoreError {
    #[error("target text must be non-empty")]
    EmptyTarget,
    #[error("backend unavailable after {attempts} attempt(s): {message}")]
    BackendUnavailable { attempts: u32, message: String },
    #[error("backend rejected request{}: {message}", status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    BackendRejected {
        status: Option<u16>,
        message: String,
    },
    #[error(
        "token concatenation does not reconstruct the target: expected {expected:?}, got {got:?}"
    )]
    TokenizationMismatch { expected: String, got: String },
    #[error("log-probability {0} is not finite and <= 0")]
    InvalidLogprob(f64),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

impl ScoreError {
    /// Transient errors worth retrying; rejections and contract
    /// violations are not.
    pub fn is_retryable(&self) -> bool {
        matches!(self, ScoreError::BackendUnavailable { .. })
    }
}

/// One scored token of the target text. Log-probabilities are in nats,
/// finite and <= 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenScore {
    pub token: String,
    pub logprob: f64,
}

impl TokenScore {
    pub fn new(token: impl Into<String>, logprob: f64) -> Result<Self, ScoreError> {
        if !logprob.is_finite() || logprob > 0.0 {
            return Err(ScoreError::InvalidLogprob(logprob));
        }
        Ok(Self {
            token: token.into(),
            logprob,
        })
    }
}

/// Per-token log-probabilities of a target given a prefix, with their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionScore {
    pub tokens: Vec<TokenScore>,
    pub total_logprob: f64,
}

impl CompletionScore {
    pub fn from_tokens(tokens: Vec<TokenScore>) -> Self {
        let total_logprob = tokens.iter().map(|t| t.logprob).sum();
        Self {
            tokens,
            total_logprob,
        }
    }

    /// exp(total), the joint probability of the target under the backend's
    /// tokenization; in (0, 1].
    pub fn sequence_probability(&self) -> f64 {
        self.total_logprob.exp()
    }

    fn concatenated(&self) -> String {
        self.tokens.iter().map(|t| t.token.as_str()).collect()
    }
}

/// Capability descriptor a backend reports about itself.
#[derive(Debug, Clone)]
pub struct BackendCapability {
    pub model: String,
    pub max_concurrency: usize,
    pub supports_scoring: bool,
}

/// A scoring backend: given a prefix and a target, returns the per-token
/// log-probabilities of the target conditioned on the prefix, under the
/// backend's own tokenization. Implementations must be safe for
/// concurrent calls up to their declared `max_concurrency`.
pub trait ScoringBackend: Send + Sync {
    fn capability(&self) -> BackendCapability;
    fn score(&self, prefix: &str, target: &str) -> Result<CompletionScore, ScoreError>;
}

/// Score a target given a prefix, enforcing the shared contract: the
/// target is non-empty and the returned tokens concatenate back to it
/// exactly.
pub fn score(
    backend: &dyn ScoringBackend,
    prefix: &str,
    target: &str,
) -> Result<CompletionScore, ScoreError> {
    if target.is_empty() {
        return Err(ScoreError::EmptyTarget);
    }
    let cs = backend.score(prefix, target)?;
    let got = cs.concatenated();
    if got != target {
        return Err(ScoreError::TokenizationMismatch {
            expected: target.to_string(),
            got,
        });
    }
    Ok(cs)
}

/// Quality bias of a demonstration: the mean per-token log-probability of
/// its answer given the zero-shot-formatted question prompt. Independent
/// of any evaluation query, so it can be computed once and cached.
pub fn quality_bias(
    backend: &dyn ScoringBackend,
    demo: &Demonstration,
    template: &PromptTemplate,
) -> Result<f64, ScoreError> {
    if demo.answer.is_empty() {
        return Err(ScoreError::EmptyTarget);
    }
    let prefix = template.render_query(&demo.question);
    let target = template.completion_target(&demo.question, &demo.answer)?;
    let cs = score(backend, &prefix, &target)?;
    Ok(cs.total_logprob / cs.tokens.len() as f64)
}

/// Split text into whitespace-delimited tokens, gluing each whitespace run
/// to the word that follows it (and any trailing run to the last token) so
/// the tokens concatenate back to the input exactly.
pub fn whitespace_tokens(text: &str) -> Vec<String> {
    let mut tokens: Vec<String> = Vec::new();
    let mut current = String::new();
    let mut in_word = false;
    for ch in text.chars() {
        if ch.is_whitespace() {
            if in_word {
                tokens.push(std::mem::take(&mut current));
                in_word = false;
            }
            current.push(ch);
        } else {
            in_word = true;
            current.push(ch);
        }
    }
    if !current.is_empty() {
        if in_word {
            tokens.push(current);
        } else if let Some(last) = tokens.last_mut() {
            last.push_str(&current);
        } else {
            tokens.push(current);
        }
    }
    tokens
}

/// Deterministic offline backend: fixtured (prefix, target) pairs return
/// their stored per-token log-probabilities; everything else scores at a
/// constant fallback per whitespace token.
pub struct MockBackend {
    model: String,
    fallback_per_token: f64,
    fixtures: HashMap<(String, String), Vec<f64>>,
}

impl MockBackend {
    /// `fallback_per_token` must be finite and <= 0.
    pub fn new(fallback_per_token: f64) -> Self {
        assert!(
            fallback_per_token.is_finite() && fallback_per_token <= 0.0,
            "fallback log-probability must be finite and <= 0"
        );
        Self {
            model: "mock".into(),
            fallback_per_token,
            fixtures: HashMap::new(),
        }
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    /// Register a fixture. The log-probability list must have one entry
    /// per whitespace token of the target, all finite and <= 0.
    pub fn with_fixture(
        mut self,
        prefix: impl Into<String>,
        target: impl Into<String>,
        logprobs: Vec<f64>,
    ) -> Self {
        let target = target.into();
        let n = whitespace_tokens(&target).len();
        assert_eq!(
            logprobs.len(),
            n,
            "fixture must provide one log-probability per token"
        );
        assert!(
            logprobs.iter().all(|lp| lp.is_finite() && *lp <= 0.0),
            "fixture log-probabilities must be finite and <= 0"
        );
        self.fixtures.insert((prefix.into(), target), logprobs);
        self
    }
}

impl ScoringBackend for MockBackend {
    fn capability(&self) -> BackendCapability {
        BackendCapability {
            model: self.model.clone(),
            max_concurrency: 64,
            supports_scoring: true,
        }
    }

    fn score(&self, prefix: &str, target: &str) -> Result<CompletionScore, ScoreError> {
        let tokens = whitespace_tokens(target);
        let logprobs: Vec<f64> = match self.fixtures.get(&(prefix.to_string(), target.to_string()))
        {
            Some(fixture) => fixture.clone(),
            None => vec![self.fallback_per_token; tokens.len()],
        };
        let scored = tokens
            .into_iter()
            .zip(logprobs)
            .map(|(t, lp)| TokenScore::new(t, lp))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(CompletionScore::from_tokens(scored))
    }
}
