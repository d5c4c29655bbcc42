//! Uniform access to language-model oracles.
//!
//! Every query goes through [`ask_oracle`]: the response cache is consulted
//! first, then the backend is called with exponential back-off on retryable
//! failures, and successful answers are written back to the cache.

mod cache;
mod http;
mod scripted;

use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_key, CacheEntry, KeyInputs, ResponseCache};
pub use http::{HttpBackend, API_KEY_ENV, BASE_URL_ENV};
pub use scripted::{CacheOnlyBackend, DryRunBackend, Fallback, ScriptRule, ScriptedBackend};

pub const DEFAULT_MAX_TOKENS: u32 = 1000;
pub const DEFAULT_MAX_RETRIES: u32 = 2;
pub const DEFAULT_INITIAL_DELAY: Duration = Duration::from_secs(30);
pub const DEFAULT_BACKOFF_FACTOR: f64 = 1.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("oracle unavailable after {attempts} attempt(s): {last_cause}")]
    Unavailable { attempts: u32, last_cause: String },
    #[error("oracle rejected the request: {0}")]
    Rejected(String),
    #[error("invalid oracle request: {0}")]
    InvalidRequest(String),
    #[error("response cache error: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_id: String,
}

impl SamplingParams {
    pub fn new(model_id: &str, temperature: f64, max_tokens: u32) -> Result<Self, OracleError> {
        let params = Self {
            temperature,
            max_tokens,
            model_id: model_id.to_string(),
        };
        params.validate()?;
        Ok(params)
    }

    /// Defaults per model family: GPT-style models sample at 0.7, others at
    /// 0.1; 1000 output tokens.
    pub fn for_model(model_id: &str) -> Self {
        let temperature = if model_id.to_ascii_lowercase().starts_with("gpt") {
            0.7
        } else {
            0.1
        };
        Self {
            temperature,
            max_tokens: DEFAULT_MAX_TOKENS,
            model_id: model_id.to_string(),
        }
    }

    pub fn with_temperature(&self, temperature: f64) -> Self {
        Self {
            temperature,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(OracleError::InvalidRequest(format!(
                "temperature {} outside [0, 1]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(OracleError::InvalidRequest("max_tokens must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_delay: Duration,
    pub backoff_factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: DEFAULT_MAX_RETRIES,
            initial_delay: DEFAULT_INITIAL_DELAY,
            backoff_factor: DEFAULT_BACKOFF_FACTOR,
        }
    }
}

impl RetryPolicy {
    pub fn new(
        max_retries: u32,
        initial_delay: Duration,
        backoff_factor: f64,
    ) -> Result<Self, OracleError> {
        if !(backoff_factor >= 1.0 && backoff_factor.is_finite()) {
            return Err(OracleError::InvalidRequest(format!(
                "back-off factor {backoff_factor} must be ≥ 1"
            )));
        }
        Ok(Self {
            max_retries,
            initial_delay,
            backoff_factor,
        })
    }

    /// Wait before the given attempt (1-based). The first attempt is never
    /// delayed; retry `k` waits `initial_delay · factor^(k-1)`.
    pub fn delay_before(&self, attempt: u32) -> Duration {
        if attempt <= 1 {
            return Duration::ZERO;
        }
        let retry = attempt - 1;
        self.initial_delay
            .mul_f64(self.backoff_factor.powi(retry as i32 - 1))
    }

    pub fn total_attempts(&self) -> u32 {
        self.max_retries + 1
    }

    pub fn worst_case_wait(&self) -> Duration {
        (1..=self.total_attempts())
            .map(|a| self.delay_before(a))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub truncated: bool,
}

impl Completion {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            truncated: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    /// Rate limits, overload, transport problems.
    Retryable,
    /// Authentication, malformed requests, cache misses in replay mode.
    Fatal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendError {
    pub kind: FailureKind,
    pub message: String,
}

impl BackendError {
    pub fn retryable(message: impl Into<String>) -> Self {
        Self {
            kind: FailureKind::Retryable,
            message: message.into(),
        }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        Self {
            kind: FailureKind::Fatal,
            message: message.into(),
        }
    }
}

impl fmt::Display for BackendError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// A text-in/text-out model service. Implementations must be reentrant.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, query: &str, params: &SamplingParams) -> Result<Completion, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn complete(&self, query: &str, params: &SamplingParams) -> Result<Completion, BackendError> {
        (**self).complete(query, params)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn complete(&self, query: &str, params: &SamplingParams) -> Result<Completion, BackendError> {
        (**self).complete(query, params)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleResponse {
    pub text: String,
    pub truncated: bool,
    pub from_cache: bool,
    /// Backend calls made for this response; 0 when served from cache.
    pub attempt_count: u32,
    pub backend_id: String,
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, delay: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, delay: Duration) {
        if !delay.is_zero() {
            std::thread::sleep(delay);
        }
    }
}

/// Virtual clock: records requested delays instead of sleeping.
#[derive(Debug, Default)]
pub struct RecordingSleeper {
    delays: Mutex<Vec<Duration>>,
}

impl RecordingSleeper {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn delays(&self) -> Vec<Duration> {
        self.delays.lock().unwrap().clone()
    }

    pub fn total(&self) -> Duration {
        self.delays().into_iter().sum()
    }
}

impl Sleeper for RecordingSleeper {
    fn sleep(&self, delay: Duration) {
        self.delays.lock().unwrap().push(delay);
    }
}

pub fn ask_oracle(
    backend: &dyn Backend,
    cache: Option<&ResponseCache>,
    query: &str,
    params: &SamplingParams,
    policy: &RetryPolicy,
    sleeper: &dyn Sleeper,
) -> Result<OracleResponse, OracleError> {
    if query.trim().is_empty() {
        return Err(OracleError::InvalidRequest("empty query".into()));
    }
    params.validate()?;
    let inputs = KeyInputs::new(backend.id(), params, query);
    if let Some(cache) = cache {
        if let Some(entry) = cache.get(&inputs)? {
            log::debug!("cache hit for {:?}", query);
            return Ok(OracleResponse {
                text: entry.response_text,
                truncated: entry.truncated,
                from_cache: true,
                attempt_count: 0,
                backend_id: backend.id().to_string(),
            });
        }
    }
    let mut last_cause = String::new();
    for attempt in 1..=policy.total_attempts() {
        let delay = policy.delay_before(attempt);
        if attempt > 1 {
            log::warn!(
                "attempt {}/{} for {:?} after {:.1}s back-off: {}",
                attempt,
                policy.total_attempts(),
                query,
                delay.as_secs_f64(),
                last_cause
            );
            sleeper.sleep(delay);
        }
        match backend.complete(query, params) {
            Ok(completion) => {
                if let Some(cache) = cache {
                    cache.put(&inputs, &completion)?;
                }
                return Ok(OracleResponse {
                    text: completion.text,
                    truncated: completion.truncated,
                    from_cache: false,
                    attempt_count: attempt,
                    backend_id: backend.id().to_string(),
                });
            }
            Err(e) if e.kind == FailureKind::Fatal => return Err(OracleError::Rejected(e.message)),
            Err(e) => last_cause = e.message,
        }
    }
    Err(OracleError::Unavailable {
        attempts: policy.total_attempts(),
        last_cause,
    })
}

/// A backend bundled with its cache, retry policy and clock.
pub struct Oracle {
    backend: Box<dyn Backend>,
    cache: Option<ResponseCache>,
    policy: RetryPolicy,
    sleeper: Arc<dyn Sleeper>,
}

impl Oracle {
    pub fn new(backend: impl Backend + 'static) -> Self {
        Self {
            backend: Box::new(backend),
            cache: None,
            policy: RetryPolicy::default(),
            sleeper: Arc::new(ThreadSleeper),
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_policy(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_sleeper(mut self, sleeper: Arc<dyn Sleeper>) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn ask(&self, query: &str, params: &SamplingParams) -> Result<OracleResponse, OracleError> {
        ask_oracle(
            self.backend.as_ref(),
            self.cache.as_ref(),
            query,
            params,
            &self.policy,
            self.sleeper.as_ref(),
        )
    }
}
