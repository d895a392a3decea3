use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendConfig, BackendError, ChatBackend, ChatRequest};

/// Wire dialect of a chat-completion endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderFlavor {
    /// `POST .../chat/completions` with bearer auth.
    #[serde(rename = "openai")]
    OpenAi,
    /// `POST .../v1/messages` with `x-api-key`.
    Anthropic,
    /// `POST .../models/{model}:generateContent` with `x-goog-api-key`.
    Gemini,
}

impl ProviderFlavor {
    pub fn as_str(self) -> &'static str {
        match self {
            ProviderFlavor::OpenAi => "openai",
            ProviderFlavor::Anthropic => "anthropic",
            ProviderFlavor::Gemini => "gemini",
        }
    }

    pub fn request_url(self, endpoint: &str, model: &str) -> String {
        match self {
            ProviderFlavor::Gemini if !endpoint.contains(":generateContent") => {
                format!("{}/models/{model}:generateContent", endpoint.trim_end_matches('/'))
            }
            _ => endpoint.to_string(),
        }
    }

    pub fn request_body(self, model: &str, request: &ChatRequest) -> Value {
        match self {
            ProviderFlavor::OpenAi => json!({
                "model": model,
                "messages": [
                    {"role": "system", "content": request.system_prompt},
                    {"role": "user", "content": request.user_prompt},
                ],
                "temperature": request.temperature,
                "max_tokens": request.max_output_tokens,
            }),
            ProviderFlavor::Anthropic => json!({
                "model": model,
                "system": request.system_prompt,
                "messages": [{"role": "user", "content": request.user_prompt}],
                "temperature": request.temperature,
                "max_tokens": request.max_output_tokens,
            }),
            ProviderFlavor::Gemini => json!({
                "systemInstruction": {"parts": [{"text": request.system_prompt}]},
                "contents": [{"role": "user", "parts": [{"text": request.user_prompt}]}],
                "generationConfig": {
                    "temperature": request.temperature,
                    "maxOutputTokens": request.max_output_tokens,
                },
            }),
        }
    }

    /// Pulls the reply text out of a provider response body.
    pub fn extract_text(self, body: &Value) -> Result<String, String> {
        let text = match self {
            ProviderFlavor::OpenAi => body
                .pointer("/choices/0/message/content")
                .and_then(Value::as_str)
                .map(str::to_owned),
            ProviderFlavor::Anthropic => body.get("content").and_then(Value::as_array).map(|blocks| {
                blocks
                    .iter()
                    .filter(|b| b.get("type").and_then(Value::as_str) == Some("text"))
                    .filter_map(|b| b.get("text").and_then(Value::as_str))
                    .collect::<String>()
            }),
            ProviderFlavor::Gemini => body
                .pointer("/candidates/0/content/parts")
                .and_then(Value::as_array)
                .map(|parts| parts.iter().filter_map(|p| p.get("text").and_then(Value::as_str)).collect()),
        };
        text.ok_or_else(|| format!("{} response has no reply text", self.as_str()))
    }
}

/// Token bucket: `capacity` requests, refilled continuously at
/// `per_minute` requests per minute. `acquire` blocks until a token is free.
#[derive(Debug)]
pub struct RateLimiter {
    capacity: f64,
    per_ms: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn per_minute(per_minute: u32) -> Self {
        let capacity = f64::from(per_minute.max(1));
        Self {
            capacity,
            per_ms: capacity / 60_000.0,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Takes a token if one is available, otherwise returns how long to wait.
    pub fn try_acquire(&self) -> Result<(), Duration> {
        let mut state = self.state.lock();
        let now = Instant::now();
        let elapsed = now.duration_since(state.1).as_secs_f64() * 1000.0;
        state.0 = (state.0 + elapsed * self.per_ms).min(self.capacity);
        state.1 = now;
        if state.0 >= 1.0 {
            state.0 -= 1.0;
            Ok(())
        } else {
            Err(Duration::from_secs_f64((1.0 - state.0) / self.per_ms / 1000.0))
        }
    }

    pub fn acquire(&self) {
        while let Err(wait) = self.try_acquire() {
            std::thread::sleep(wait);
        }
    }
}

/// Transport retry: `max_retries` extra attempts with exponential backoff
/// starting at `initial_backoff`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, retry: u32) -> Duration {
        self.initial_backoff * 2u32.pow(retry)
    }
}

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    flavor: ProviderFlavor,
    url: String,
    model: String,
    api_key: String,
    timeout_ms: u64,
    limiter: RateLimiter,
    retry: RetryPolicy,
}

enum Failure {
    Retryable(BackendError),
    Fatal(BackendError),
}

impl HttpBackend {
    /// Reads the credential from the environment variable named in the config.
    pub fn from_config(config: &BackendConfig) -> Result<Self, BackendError> {
        let flavor = config
            .provider
            .ok_or_else(|| BackendError::InvalidConfig("http_provider requires `provider`".into()))?;
        let api_key = std::env::var(&config.auth_env_var).map_err(|_| BackendError::MissingCredential {
            var: config.auth_env_var.clone(),
        })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| BackendError::InvalidConfig(e.to_string()))?;
        Ok(Self {
            client,
            flavor,
            url: flavor.request_url(&config.endpoint_url, &config.model_name),
            model: config.model_name.clone(),
            api_key,
            timeout_ms: config.timeout_ms,
            limiter: RateLimiter::per_minute(config.requests_per_minute),
            retry: RetryPolicy::default(),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn attempt(&self, request: &ChatRequest) -> Result<String, Failure> {
        let body = self.flavor.request_body(&self.model, request);
        let builder = self.client.post(&self.url).json(&body);
        let builder = match self.flavor {
            ProviderFlavor::OpenAi => builder.bearer_auth(&self.api_key),
            ProviderFlavor::Anthropic => builder
                .header("x-api-key", &self.api_key)
                .header("anthropic-version", "2023-06-01"),
            ProviderFlavor::Gemini => builder.header("x-goog-api-key", &self.api_key),
        };
        let response = builder.send().map_err(|e| {
            if e.is_timeout() {
                Failure::Retryable(BackendError::Timeout {
                    after_ms: self.timeout_ms,
                })
            } else {
                Failure::Retryable(BackendError::ProviderError {
                    message: e.to_string(),
                    status: None,
                })
            }
        })?;
        let status = response.status();
        let text = response.text().map_err(|e| {
            Failure::Retryable(BackendError::ProviderError {
                message: e.to_string(),
                status: Some(status.as_u16()),
            })
        })?;
        if !status.is_success() {
            let err = BackendError::ProviderError {
                message: text.chars().take(500).collect(),
                status: Some(status.as_u16()),
            };
            return Err(if status.as_u16() == 429 || status.is_server_error() {
                Failure::Retryable(err)
            } else {
                Failure::Fatal(err)
            });
        }
        let json: Value = serde_json::from_str(&text).map_err(|e| {
            Failure::Fatal(BackendError::ProviderError {
                message: format!("provider returned non-JSON body: {e}"),
                status: Some(status.as_u16()),
            })
        })?;
        self.flavor.extract_text(&json).map_err(|message| {
            Failure::Fatal(BackendError::ProviderError {
                message,
                status: Some(status.as_u16()),
            })
        })
    }
}

impl ChatBackend for HttpBackend {
    fn describe(&self) -> String {
        format!("{}-{}", self.flavor.as_str(), self.model)
    }

    fn send(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let mut retry = 0;
        loop {
            self.limiter.acquire();
            match self.attempt(request) {
                Ok(text) => return Ok(text),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(e)) if retry >= self.retry.max_retries => return Err(e),
                Err(Failure::Retryable(e)) => {
                    tracing::warn!(retry, error = %e, "provider call failed; backing off");
                    std::thread::sleep(self.retry.backoff(retry));
                    retry += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_from_500ms() {
        let p = RetryPolicy::default();
        assert_eq!(p.max_retries, 3);
        assert_eq!(p.backoff(0), Duration::from_millis(500));
        assert_eq!(p.backoff(1), Duration::from_millis(1000));
        assert_eq!(p.backoff(2), Duration::from_millis(2000));
    }

    #[test]
    fn bucket_drains_then_refuses() {
        let limiter = RateLimiter::per_minute(2);
        assert!(limiter.try_acquire().is_ok());
        assert!(limiter.try_acquire().is_ok());
        let wait = limiter.try_acquire().unwrap_err();
        assert!(wait > Duration::from_secs(20) && wait <= Duration::from_secs(30));
    }

    #[test]
    fn extract_text_per_flavor() {
        let openai = json!({"choices": [{"message": {"content": "hi"}}]});
        assert_eq!(ProviderFlavor::OpenAi.extract_text(&openai).unwrap(), "hi");
        let anthropic = json!({"content": [{"type": "text", "text": "a"}, {"type": "text", "text": "b"}]});
        assert_eq!(ProviderFlavor::Anthropic.extract_text(&anthropic).unwrap(), "ab");
        let gemini = json!({"candidates": [{"content": {"parts": [{"text": "g"}]}}]});
        assert_eq!(ProviderFlavor::Gemini.extract_text(&gemini).unwrap(), "g");
        assert!(ProviderFlavor::OpenAi.extract_text(&json!({})).is_err());
    }

    #[test]
    fn gemini_url_includes_model() {
        assert_eq!(
            ProviderFlavor::Gemini.request_url("https://x/v1beta/", "gemini-pro"),
            "https://x/v1beta/models/gemini-pro:generateContent"
        );
        assert_eq!(ProviderFlavor::OpenAi.request_url("https://x/v1/chat/completions", "m"), "https://x/v1/chat/completions");
    }
}
