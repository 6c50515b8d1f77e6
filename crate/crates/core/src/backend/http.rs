//! Blocking client for OpenAI-compatible `/completions` endpoints.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{apply_stop, BackendError, GenerationRequest, Generator};

/// Environment variable holding the bearer token, if the server needs one.
pub const API_KEY_ENV: &str = "OREX_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Total attempts per request, first try included.
    pub max_attempts: u32,
    #[serde(with = "millis")]
    pub base_delay: Duration,
    #[serde(with = "millis")]
    pub max_delay: Duration,
    /// Wall-clock budget across all attempts of one request.
    #[serde(with = "millis")]
    pub budget: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 6,
            base_delay: Duration::from_millis(250),
            max_delay: Duration::from_secs(8),
            budget: Duration::from_secs(120),
        }
    }
}

impl RetryPolicy {
    /// Exponential backoff with equal jitter: half the capped delay plus a
    /// uniform draw over the other half.
    fn delay(&self, retry: u32) -> Duration {
        let exp = self.base_delay.saturating_mul(1u32 << retry.min(16));
        let capped = exp.min(self.max_delay);
        let half = capped / 2;
        half + half.mul_f64(rand::rng().random::<f64>())
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Base URL such as `http://localhost:8000/v1`; `/completions` is appended
    /// unless already present.
    pub endpoint: String,
    pub model: String,
    #[serde(skip)]
    pub api_key: Option<String>,
    #[serde(with = "millis")]
    pub request_timeout: Duration,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            request_timeout: Duration::from_secs(60),
            max_in_flight: 8,
            retry: RetryPolicy::default(),
        }
    }

    fn url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/completions") {
            base.to_string()
        } else {
            format!("{base}/completions")
        }
    }
}

#[derive(Serialize)]
struct CompletionBody<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    temperature: f32,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    stop: &'a [String],
    n: u32,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    text: String,
}

/// Counting gate bounding concurrent requests.
#[derive(Debug)]
struct InFlightGate {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlightGate);

impl InFlightGate {
    fn new(limit: usize) -> Self {
        Self { limit: limit.max(1), active: Mutex::new(0), freed: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().expect("gate poisoned");
        while *active >= self.limit {
            active = self.freed.wait(active).expect("gate poisoned");
        }
        *active += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.active.lock().expect("gate poisoned") -= 1;
        self.0.freed.notify_one();
    }
}

/// Outcome of one logical request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub attempts: u32,
}

#[derive(Debug)]
pub struct HttpBackend {
    cfg: HttpConfig,
    client: reqwest::blocking::Client,
    gate: InFlightGate,
    attempts: AtomicU64,
}

impl HttpBackend {
    pub fn new(cfg: HttpConfig) -> Result<Self, BackendError> {
        if cfg.retry.max_attempts == 0 {
            return Err(BackendError::Config("max_attempts must be positive".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.request_timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        let gate = InFlightGate::new(cfg.max_in_flight);
        Ok(Self { cfg, client, gate, attempts: AtomicU64::new(0) })
    }

    /// HTTP attempts made so far, retries included.
    pub fn total_attempts(&self) -> u64 {
        self.attempts.load(Ordering::Relaxed)
    }

    pub fn complete(&self, request: &GenerationRequest) -> Result<Completion, BackendError> {
        let started = Instant::now();
        let policy = &self.cfg.retry;
        let mut attempts = 0;
        loop {
            attempts += 1;
            let outcome = {
                let _permit = self.gate.acquire();
                self.attempts.fetch_add(1, Ordering::Relaxed);
                self.send_once(request)
            };
            match outcome {
                Ok(text) => return Ok(Completion { text: apply_stop(&text, &request.stop), attempts }),
                Err(e) if e.is_retryable() => {
                    let wait = policy.delay(attempts - 1);
                    if attempts >= policy.max_attempts || started.elapsed() + wait > policy.budget {
                        return Err(BackendError::Timeout { attempts });
                    }
                    std::thread::sleep(wait);
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn send_once(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let body = CompletionBody {
            model: &self.cfg.model,
            prompt: &request.prompt,
            max_tokens: request.max_tokens,
            temperature: request.temperature,
            stop: &request.stop,
            n: 1,
        };
        let mut builder = self.client.post(self.cfg.url()).json(&body);
        if let Some(key) = &self.cfg.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Transport(format!("timeout: {e}"))
            } else {
                BackendError::Transport(e.to_string())
            }
        })?;
        let status = response.status().as_u16();
        let text = response.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        match status {
            200..=299 => {}
            429 => return Err(BackendError::RateLimited),
            _ => return Err(BackendError::Server { status, message: text }),
        }
        let parsed: CompletionResponse = serde_json::from_str(&text)
            .map_err(|e| BackendError::Server { status, message: format!("malformed completion body: {e}") })?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.text)
            .ok_or_else(|| BackendError::Server { status, message: "completion has no choices".into() })
    }
}

impl Generator for HttpBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        self.complete(request).map(|c| c.text)
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "kind": "http", "config": self.cfg })
    }
}
