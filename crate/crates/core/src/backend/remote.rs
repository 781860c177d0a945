use std::env;
use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, ChatBackend, ChatMessage, ChatParams};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer credential.
    pub api_key_env: String,
    pub timeout: Duration,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout: Duration::from_secs(120),
        }
    }
}

/// Retries apply to transport failures and 5xx responses only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    fn delay_after(&self, failed_attempt: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(failed_attempt.saturating_sub(1))
    }
}

/// Backend for any endpoint that speaks the chat-completion message-array
/// convention.
pub struct RemoteBackend {
    id: String,
    config: RemoteConfig,
    retry: RetryPolicy,
    api_key: Option<String>,
    client: Client,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig, retry: RetryPolicy) -> Result<Self, BackendError> {
        if retry.attempts == 0 {
            return Err(BackendError::Config(
                "retry attempts must be at least 1".into(),
            ));
        }
        let api_key = env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        if api_key.is_none() {
            log::warn!(
                "{} is not set; requests to {} will be unauthenticated",
                config.api_key_env,
                config.endpoint
            );
        }
        let client = Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(RemoteBackend {
            id: format!("remote:{}", config.model),
            config,
            retry,
            api_key,
            client,
        })
    }

    fn request_body(&self, history: &[ChatMessage], params: &ChatParams) -> Value {
        let messages: Vec<Value> = history
            .iter()
            .map(|m| json!({"role": m.role.wire_name(), "content": m.content}))
            .collect();
        json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": params.temperature,
            "max_tokens": params.max_output_tokens,
        })
    }
}

fn retry_after(headers: &reqwest::header::HeaderMap) -> Option<Duration> {
    headers
        .get(reqwest::header::RETRY_AFTER)?
        .to_str()
        .ok()?
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|s| *s >= 0.0)
        .map(Duration::from_secs_f64)
}

fn reply_content(body: &Value) -> Option<String> {
    body.get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
        .map(str::to_string)
}

impl ChatBackend for RemoteBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn reply(
        &self,
        _session_id: &str,
        history: &[ChatMessage],
        params: &ChatParams,
    ) -> Result<String, BackendError> {
        let body = self.request_body(history, params);
        let mut last_error = String::new();
        for attempt in 1..=self.retry.attempts {
            let mut request = self.client.post(&self.config.endpoint).json(&body);
            if let Some(key) = &self.api_key {
                request = request.bearer_auth(key);
            }
            match request.send() {
                Err(e) => last_error = format!("transport: {e}"),
                Ok(response) => {
                    let status = response.status();
                    if status == StatusCode::TOO_MANY_REQUESTS {
                        return Err(BackendError::RateLimited {
                            retry_after: retry_after(response.headers()),
                        });
                    }
                    if status.is_server_error() {
                        last_error = format!("server error {status}");
                    } else if !status.is_success() {
                        let text = response.text().unwrap_or_default();
                        return Err(BackendError::Rejected {
                            status: status.as_u16(),
                            body: text,
                        });
                    } else {
                        let value: Value = response.json().map_err(|e| BackendError::Rejected {
                            status: status.as_u16(),
                            body: format!("unreadable completion body: {e}"),
                        })?;
                        return match reply_content(&value) {
                            Some(text) if !text.trim().is_empty() => Ok(text),
                            _ => Err(BackendError::EmptyCompletion),
                        };
                    }
                }
            }
            if attempt < self.retry.attempts {
                let delay = self.retry.delay_after(attempt);
                log::debug!("attempt {attempt} failed ({last_error}); retrying in {delay:?}");
                thread::sleep(delay);
            }
        }
        Err(BackendError::BackendUnavailable {
            attempts: self.retry.attempts,
            last_error,
        })
    }
}
