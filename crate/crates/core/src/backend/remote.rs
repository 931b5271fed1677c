//! OpenAI-compatible completions backend.
//!
//! Requests one-token completions with top-k logprobs at temperature 0 (the
//! most deterministic settings the wire protocol offers; sampling
//! temperature is always applied locally from the returned logprobs).
//! Responses are cached on disk so an alpha sweep issues each distinct model
//! query once. Hosted endpoints may still return slightly different logprobs
//! across days or replicas; the cache also pins results against that.
//!
//! This backend has no tokenizer: `tokenize` treats its input as a single
//! token, so multi-token completions are scored in one step per class. The
//! wire protocol is prefix-in, logprobs-out, which is all scoring needs.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backend::cache::{CacheStats, ResponseCache, TokenLogprob};
use crate::backend::{CoverageKind, LogitProvider, VocabInfo};
use crate::error::{CoreError, Result};
use crate::logits::{LogitVector, Token};

/// Largest top-k the protocol allows.
pub const MAX_TOP_LOGPROBS: u8 = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteBackendConfig {
    /// Endpoint base, e.g. `http://localhost:8000/v1`; `/completions` is
    /// appended.
    pub base_url: String,
    pub model_name: String,
    /// How many logprobs to request per position, within [1, 20].
    #[serde(default = "default_top_logprobs")]
    pub top_logprobs: u8,
    /// Upper bound on in-flight requests.
    #[serde(default = "default_max_concurrent")]
    pub max_concurrent: usize,
    /// Attempts per request, including the first.
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    /// Base of the exponential retry backoff, in milliseconds.
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
    /// Name of the environment variable holding the bearer token. The
    /// credential itself never appears in configuration.
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Directory for the response cache; no caching when absent.
    #[serde(default)]
    pub cache_dir: Option<std::path::PathBuf>,
    /// Token text that terminates generation, if the model has one.
    #[serde(default)]
    pub end_of_text: Option<String>,
}

fn default_top_logprobs() -> u8 {
    5
}
fn default_max_concurrent() -> usize {
    4
}
fn default_max_attempts() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    250
}

impl RemoteBackendConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        RemoteBackendConfig {
            base_url: base_url.into(),
            model_name: model_name.into(),
            top_logprobs: default_top_logprobs(),
            max_concurrent: default_max_concurrent(),
            max_attempts: default_max_attempts(),
            backoff_base_ms: default_backoff_ms(),
            api_key_env: None,
            cache_dir: None,
            end_of_text: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_TOP_LOGPROBS).contains(&self.top_logprobs) {
            return Err(CoreError::invalid_parameter(
                "top_logprobs",
                format!("must be in [1, {MAX_TOP_LOGPROBS}], got {}", self.top_logprobs),
            ));
        }
        if self.max_concurrent < 1 {
            return Err(CoreError::invalid_parameter(
                "max_concurrent",
                "must be at least 1",
            ));
        }
        if self.max_attempts < 1 {
            return Err(CoreError::invalid_parameter(
                "max_attempts",
                "must be at least 1",
            ));
        }
        if self.base_url.starts_with("https:")
            && !cfg!(any(feature = "native-tls", feature = "rustls-tls"))
        {
            return Err(CoreError::invalid_parameter(
                "base_url",
                "https endpoints require building with the native-tls or rustls-tls feature",
            ));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(CoreError::invalid_parameter(
                "base_url",
                format!("expected an http(s) URL, got {:?}", self.base_url),
            ));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    logprobs: u8,
    temperature: f64,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    logprobs: Option<LogprobsPayload>,
}

#[derive(Deserialize)]
struct LogprobsPayload {
    top_logprobs: Vec<BTreeMap<String, f64>>,
}

/// Counting semaphore bounding in-flight requests.
struct Gate {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Gate {
    fn new(permits: usize) -> Self {
        Gate {
            permits: Mutex::new(permits),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) -> GatePermit<'_> {
        let mut permits = self.permits.lock().expect("gate lock");
        while *permits == 0 {
            permits = self.available.wait(permits).expect("gate lock");
        }
        *permits -= 1;
        GatePermit { gate: self }
    }
}

struct GatePermit<'a> {
    gate: &'a Gate,
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        *self.gate.permits.lock().expect("gate lock") += 1;
        self.gate.available.notify_one();
    }
}

pub struct RemoteBackend {
    cfg: RemoteBackendConfig,
    client: reqwest::blocking::Client,
    bearer: Option<String>,
    cache: Option<ResponseCache>,
    gate: Gate,
    hits: AtomicU64,
    misses: AtomicU64,
    requests: AtomicU64,
}

impl RemoteBackend {
    pub fn new(cfg: RemoteBackendConfig) -> Result<Self> {
        cfg.validate()?;
        let bearer = match &cfg.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                CoreError::BackendUnavailable(format!(
                    "credential environment variable {var} is not set"
                ))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| CoreError::BackendUnavailable(format!("http client: {e}")))?;
        let cache = cfg.cache_dir.as_ref().map(ResponseCache::new);
        let gate = Gate::new(cfg.max_concurrent);
        Ok(RemoteBackend {
            cfg,
            client,
            bearer,
            cache,
            gate,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            requests: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &RemoteBackendConfig {
        &self.cfg
    }

    pub fn cache_stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    /// Number of HTTP requests actually issued (cache misses times retries).
    pub fn requests_issued(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    fn completions_url(&self) -> String {
        format!("{}/completions", self.cfg.base_url.trim_end_matches('/'))
    }

    fn fetch_top_logprobs(&self, prefix: &str) -> Result<Vec<TokenLogprob>> {
        if let Some(cache) = &self.cache {
            if let Some(record) = cache.read(&self.cfg.model_name, prefix, self.cfg.top_logprobs)? {
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Ok(record.tokens);
            }
        }
        self.misses.fetch_add(1, Ordering::Relaxed);

        let _permit = self.gate.acquire();
        let request = CompletionRequest {
            model: &self.cfg.model_name,
            prompt: prefix,
            max_tokens: 1,
            logprobs: self.cfg.top_logprobs,
            temperature: 0.0,
        };

        let mut last_error = String::new();
        for attempt in 0..self.cfg.max_attempts {
            if attempt > 0 {
                let delay = self.cfg.backoff_base_ms.saturating_mul(1 << (attempt - 1));
                std::thread::sleep(Duration::from_millis(delay));
            }
            self.requests.fetch_add(1, Ordering::Relaxed);
            let mut builder = self.client.post(self.completions_url()).json(&request);
            if let Some(token) = &self.bearer {
                builder = builder.bearer_auth(token);
            }
            match builder.send() {
                Err(e) => last_error = format!("transport: {e}"),
                Ok(response) => {
                    let status = response.status();
                    let body = response
                        .text()
                        .map_err(|e| CoreError::BackendUnavailable(format!("reading body: {e}")))?;
                    if status.is_success() {
                        let tokens = parse_completion_body(&body)?;
                        if let Some(cache) = &self.cache {
                            cache.write(&self.cfg.model_name, prefix, self.cfg.top_logprobs, &tokens)?;
                        }
                        return Ok(tokens);
                    }
                    last_error = format!("http {status}: {}", truncate(&body, 200));
                }
            }
        }
        Err(CoreError::BackendUnavailable(format!(
            "{} failed after {} attempts; last error: {last_error}",
            self.completions_url(),
            self.cfg.max_attempts
        )))
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((idx, _)) => &s[..idx],
        None => s,
    }
}

fn parse_completion_body(body: &str) -> Result<Vec<TokenLogprob>> {
    let protocol = |message: String| CoreError::Protocol {
        message,
        payload: body.to_owned(),
    };
    let parsed: CompletionResponse = serde_json::from_str(body)
        .map_err(|e| protocol(format!("malformed completions response: {e}")))?;
    let choice = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| protocol("response has no choices".to_owned()))?;
    let logprobs = choice
        .logprobs
        .ok_or_else(|| protocol("choice has no logprobs (is logprobs supported?)".to_owned()))?;
    let first = logprobs
        .top_logprobs
        .into_iter()
        .next()
        .ok_or_else(|| protocol("logprobs.top_logprobs is empty".to_owned()))?;
    if first.is_empty() {
        return Err(protocol("top_logprobs[0] has no entries".to_owned()));
    }
    Ok(first
        .into_iter()
        .map(|(token, logprob)| TokenLogprob { token, logprob })
        .collect())
}

fn logit_vector_from(tokens: &[TokenLogprob]) -> Result<LogitVector> {
    let entries: BTreeMap<Token, f64> = tokens
        .iter()
        .map(|t| (Token::new(t.token.clone()), t.logprob))
        .collect();
    LogitVector::top_k_default_floor(entries)
}

impl LogitProvider for RemoteBackend {
    fn next_logits(&self, prefix: &str) -> Result<LogitVector> {
        let tokens = self.fetch_top_logprobs(prefix)?;
        logit_vector_from(&tokens)
    }

    /// No tokenizer is available over the wire; the text is one pseudo-token.
    fn tokenize(&self, text: &str) -> Result<Vec<Token>> {
        Ok(vec![Token::new(text)])
    }

    fn decode(&self, tokens: &[Token]) -> Result<String> {
        Ok(tokens.iter().map(Token::as_str).collect())
    }

    fn vocab_info(&self) -> VocabInfo {
        VocabInfo {
            size: None,
            kind: CoverageKind::TopK,
        }
    }

    fn end_of_text(&self) -> Option<Token> {
        self.cfg.end_of_text.as_deref().map(Token::new)
    }

    fn model_id(&self) -> String {
        self.cfg.model_name.clone()
    }

    fn cache_stats(&self) -> Option<CacheStats> {
        Some(RemoteBackend::cache_stats(self))
    }
}
