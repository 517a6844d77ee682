//! HTTP scoring backend for completions-style APIs that echo prompt token
//! log-probabilities.
//!
//! The full prompt (prefix + target) is submitted with `echo` enabled and
//! zero generated tokens; the target's tokens are located by walking the
//! echoed tokens until their concatenation equals the prefix. Transient
//! failures retry with exponential backoff.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendCapability, CompletionScore, ScoreError, ScoringBackend, TokenScore};

/// Configuration for [`HttpBackend`]. Credentials are resolved from the
/// named environment variable, never passed inline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    /// Full URL of the completions-style scoring endpoint.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token, if the endpoint
    /// requires one.
    pub credential_env: Option<String>,
    pub max_concurrency: usize,
    pub timeout_secs: u64,
    /// First backoff delay in milliseconds; doubles per attempt.
    pub retry_base_ms: u64,
    /// Total attempts including the first.
    pub max_attempts: u32,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: String::new(),
            credential_env: None,
            max_concurrency: 4,
            timeout_secs: 60,
            retry_base_ms: 1000,
            max_attempts: 5,
        }
    }
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
    token: Option<String>,
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    echo: bool,
    logprobs: u32,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    logprobs: Option<EchoedLogprobs>,
}

#[derive(Deserialize)]
struct EchoedLogprobs {
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, ScoreError> {
        let token = match &config.credential_env {
            Some(var) => Some(std::env::var(var).map_err(|_| ScoreError::BackendRejected {
                status: None,
                message: format!("credential environment variable {var} is not set"),
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ScoreError::BackendRejected {
                status: None,
                message: format!("failed to build http client: {e}"),
            })?;
        Ok(Self {
            config,
            client,
            token,
        })
    }

    fn post_once(&self, prompt: &str) -> Result<CompletionResponse, ScoreError> {
        let body = CompletionRequest {
            model: &self.config.model,
            prompt,
            max_tokens: 0,
            echo: true,
            logprobs: 0,
        };
        let mut req = self.client.post(&self.config.endpoint).json(&body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| ScoreError::BackendUnavailable {
            attempts: 1,
            message: e.to_string(),
        })?;
        let status = resp.status();
        if status.is_client_error() {
            return Err(ScoreError::BackendRejected {
                status: Some(status.as_u16()),
                message: resp.text().unwrap_or_default(),
            });
        }
        if !status.is_success() {
            return Err(ScoreError::BackendUnavailable {
                attempts: 1,
                message: format!("status {status}"),
            });
        }
        resp.json().map_err(|e| ScoreError::BackendUnavailable {
            attempts: 1,
            message: format!("bad response body: {e}"),
        })
    }

    fn post_with_retry(&self, prompt: &str) -> Result<CompletionResponse, ScoreError> {
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
            match self.post_once(prompt) {
                Ok(resp) => return Ok(resp),
                Err(e) if e.is_retryable() => {
                    log::warn!(
                        "scoring request attempt {}/{} failed: {e}",
                        attempt + 1,
                        attempts
                    );
                    last = e.to_string();
                }
                Err(e) => return Err(e),
            }
        }
        Err(ScoreError::BackendUnavailable {
            attempts,
            message: last,
        })
    }

    /// Split echoed prompt tokens at the prefix/target boundary and build
    /// the target's completion score. Fails with TokenizationMismatch when
    /// the boundary splits a token or the echoed text disagrees.
    fn extract_target(
        tokens: &[String],
        logprobs: &[Option<f64>],
        prefix: &str,
        target: &str,
    ) -> Result<CompletionScore, ScoreError> {
        let mismatch = |got: String| ScoreError::TokenizationMismatch {
            expected: target.to_string(),
            got,
        };
        let mut acc_len = 0usize;
        let mut boundary = None;
        let mut acc = String::new();
        for (i, t) in tokens.iter().enumerate() {
            if acc_len == prefix.len() && acc == prefix {
                boundary = Some(i);
                break;
            }
            if acc_len > prefix.len() {
                break;
            }
            acc.push_str(t);
            acc_len += t.len();
        }
        if boundary.is_none() && acc == prefix {
            boundary = Some(tokens.len());
        }
        let boundary = boundary.ok_or_else(|| mismatch(acc.clone()))?;

        let echoed: String = tokens[boundary..].concat();
        if echoed != target {
            return Err(mismatch(echoed));
        }
        let mut scored = Vec::with_capacity(tokens.len() - boundary);
        for (t, lp) in tokens[boundary..].iter().zip(&logprobs[boundary..]) {
            let lp = lp.ok_or_else(|| ScoreError::BackendRejected {
                status: None,
                message: format!("no log-probability echoed for token {t:?}"),
            })?;
            // APIs occasionally round a hair above zero
            scored.push(TokenScore::new(t.clone(), lp.min(0.0))?);
        }
        Ok(CompletionScore::from_tokens(scored))
    }
}

impl ScoringBackend for HttpBackend {
    fn capability(&self) -> BackendCapability {
        BackendCapability {
            model: self.config.model.clone(),
            max_concurrency: self.config.max_concurrency.max(1),
            supports_scoring: true,
        }
    }

    fn score(&self, prefix: &str, target: &str) -> Result<CompletionScore, ScoreError> {
        let prompt = format!("{prefix}{target}");
        let resp = self.post_with_retry(&prompt)?;
        let choice =
            resp.choices
                .into_iter()
                .next()
                .ok_or_else(|| ScoreError::BackendRejected {
                    status: None,
                    message: "response contained no choices".into(),
                })?;
        let lp = choice.logprobs.ok_or_else(|| ScoreError::BackendRejected {
            status: None,
            message: "response contained no logprobs; endpoint may not support echo".into(),
        })?;
        if lp.tokens.len() != lp.token_logprobs.len() {
            return Err(ScoreError::BackendRejected {
                status: None,
                message: "tokens and token_logprobs lengths differ".into(),
            });
        }
        Self::extract_target(&lp.tokens, &lp.token_logprobs, prefix, target)
    }
}
