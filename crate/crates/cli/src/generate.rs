//! Blocking client for OpenAI-compatible chat completions.
//!
//! One POST per request with `{model, messages, temperature, max_tokens}`.
//! Connection failures, timeouts, HTTP 408, 429 and 5xx are retried with
//! exponential backoff; other statuses fail at once.

use std::thread;
use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

use crate::config::check_url;

pub const DEFAULT_MAX_TOKENS: u32 = 256;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    /// Either the full `.../chat/completions` URL or a base such as `http://host/v1`.
    pub endpoint: String,
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout: Duration,
}

impl GenerationRequest {
    /// Greedy request: temperature 0, default token cap and timeout.
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            prompt: prompt.into(),
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn validate(&self) -> Result<(), GenerationError> {
        check_url(&self.endpoint).map_err(GenerationError::InvalidRequest)?;
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GenerationError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GenerationError::InvalidRequest("max_tokens must be positive".into()));
        }
        if self.timeout.is_zero() {
            return Err(GenerationError::InvalidRequest("timeout must be positive".into()));
        }
        Ok(())
    }

    pub fn url(&self) -> String {
        completions_url(&self.endpoint)
    }

    pub fn body(&self) -> Value {
        json!({
            "model": self.model,
            "messages": [{"role": "user", "content": self.prompt}],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        })
    }
}

pub fn completions_url(endpoint: &str) -> String {
    let trimmed = endpoint.trim_end_matches('/');
    if trimmed.ends_with("/chat/completions") {
        trimmed.to_string()
    } else {
        format!("{trimmed}/chat/completions")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub attempts: u32,
    /// Delay before the second attempt; doubled for each later one.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    pub fn delay_before(&self, attempt: u32) -> Duration {
        self.base_delay.saturating_mul(1 << attempt.saturating_sub(2).min(16))
    }
}

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("invalid generation request: {0}")]
    InvalidRequest(String),
    #[error("timed out after {timeout:?} on attempt {attempts}")]
    Timeout { attempts: u32, timeout: Duration },
    #[error("HTTP {status} after {attempts} attempt(s): {body}")]
    Http { status: u16, attempts: u32, body: String },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed response: {0}")]
    BadResponse(String),
}

impl GenerationError {
    pub fn attempts(&self) -> Option<u32> {
        match self {
            Self::Timeout { attempts, .. } | Self::Http { attempts, .. } | Self::Transport { attempts, .. } => {
                Some(*attempts)
            }
            _ => None,
        }
    }
}

/// Retrying JSON POST shared by the generation client and the remote
/// attention provider. Returns the response body of the first 2xx reply.
#[derive(Debug, Clone, Default)]
pub struct HttpClient {
    pub bearer_token: Option<String>,
    pub retry: RetryPolicy,
}

enum Failure {
    Retryable(GenerationError),
    Fatal(GenerationError),
}

fn is_timeout(e: &ureq::Error) -> bool {
    match e {
        ureq::Error::Timeout(_) => true,
        ureq::Error::Io(io) => matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock),
        _ => false,
    }
}

impl HttpClient {
    pub fn new(bearer_token: Option<String>) -> Self {
        Self {
            bearer_token,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn attempt(&self, agent: &ureq::Agent, url: &str, body: &Value, n: u32, timeout: Duration) -> Result<String, Failure> {
        let mut req = agent.post(url);
        if let Some(token) = &self.bearer_token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(e) if is_timeout(&e) => return Err(Failure::Retryable(GenerationError::Timeout { attempts: n, timeout })),
            Err(e) => {
                let err = GenerationError::Transport {
                    attempts: n,
                    message: e.to_string(),
                };
                return Err(match e {
                    ureq::Error::BadUri(_) | ureq::Error::Http(_) | ureq::Error::Json(_) => Failure::Fatal(err),
                    _ => Failure::Retryable(err),
                });
            }
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) if is_timeout(&e) => return Err(Failure::Retryable(GenerationError::Timeout { attempts: n, timeout })),
            Err(e) => {
                return Err(Failure::Retryable(GenerationError::Transport {
                    attempts: n,
                    message: e.to_string(),
                }))
            }
        };
        if (200..300).contains(&status) {
            return Ok(text);
        }
        let err = GenerationError::Http {
            status,
            attempts: n,
            body: text.chars().take(200).collect(),
        };
        if status == 408 || status == 429 || status >= 500 {
            Err(Failure::Retryable(err))
        } else {
            Err(Failure::Fatal(err))
        }
    }

    pub fn post_json(&self, url: &str, body: &Value, timeout: Duration) -> Result<String, GenerationError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let attempts = self.retry.attempts.max(1);
        let mut n = 1;
        loop {
            match self.attempt(&agent, url, body, n, timeout) {
                Ok(text) => return Ok(text),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(e)) if n >= attempts => return Err(e),
                Err(Failure::Retryable(_)) => {
                    n += 1;
                    thread::sleep(self.retry.delay_before(n));
                }
            }
        }
    }
}

/// Assistant text of the first choice.
pub fn parse_completion(body: &str) -> Result<String, GenerationError> {
    let v: Value = serde_json::from_str(body).map_err(|e| GenerationError::BadResponse(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| GenerationError::BadResponse("missing choices[0].message.content".into()))
}

/// One chat completion, retried on transient failures.
pub fn generate_remote(req: &GenerationRequest, client: &HttpClient) -> Result<String, GenerationError> {
    req.validate()?;
    let body = client.post_json(&req.url(), &req.body(), req.timeout)?;
    parse_completion(&body)
}
