//! Blocking OpenAI-compatible chat-completions client with bounded
//! concurrency, retry/backoff, and budget accounting.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::agents::CompletionBackend;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn user(content: &str) -> Message {
        Message {
            role: "user".to_string(),
            content: content.to_string(),
        }
    }
}

/// Wire body for POST {base_url}/chat/completions. Field order is the
/// serialization order and is part of the byte-stable request contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl CompletionRequest {
    pub fn new(model: &str, messages: Vec<Message>, temperature: f64, max_tokens: u32) -> CompletionRequest {
        assert!(temperature >= 0.0, "temperature must be non-negative");
        assert!(max_tokens >= 1, "max_tokens must be at least 1");
        assert!(!messages.is_empty(), "at least one message required");
        CompletionRequest {
            model: model.to_string(),
            messages,
            temperature,
            max_tokens,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub backoff_cap_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 5,
            backoff_base_ms: 500,
            backoff_cap_ms: 30_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    /// Name of the environment variable holding the bearer token. The
    /// token itself is read per request and never stored or logged.
    pub api_key_env: String,
    #[serde(default = "default_max_concurrent")]
    pub max_concurrent: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_max_concurrent() -> usize {
    4
}

fn default_timeout_secs() -> u64 {
    60
}

impl EndpointConfig {
    pub fn new(base_url: &str, api_key_env: &str) -> EndpointConfig {
        EndpointConfig {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key_env: api_key_env.to_string(),
            max_concurrent: default_max_concurrent(),
            retry: RetryPolicy::default(),
            timeout_secs: default_timeout_secs(),
        }
    }
}

/// Latency and token accounting across all completed requests.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct UsageStats {
    pub requests: u64,
    pub retries: u64,
    pub total_latency_ms: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Counting semaphore; admission control for in-flight requests.
struct Limiter {
    available: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Limiter {
        Limiter {
            available: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> LimiterGuard<'_> {
        let mut avail = self.available.lock().unwrap();
        while *avail == 0 {
            avail = self.cv.wait(avail).unwrap();
        }
        *avail -= 1;
        LimiterGuard { limiter: self }
    }
}

struct LimiterGuard<'a> {
    limiter: &'a Limiter,
}

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.limiter.available.lock().unwrap() += 1;
        self.limiter.cv.notify_one();
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: String,
}

#[derive(Deserialize, Default)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

/// Shareable across concurrent match runners; calls block the caller.
pub struct LlmClient {
    cfg: EndpointConfig,
    agent: ureq::Agent,
    limiter: Limiter,
    stats: Mutex<UsageStats>,
}

impl LlmClient {
    pub fn new(cfg: EndpointConfig) -> LlmClient {
        let agent_cfg = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build();
        LlmClient {
            limiter: Limiter::new(cfg.max_concurrent.max(1)),
            agent: ureq::Agent::new_with_config(agent_cfg),
            stats: Mutex::new(UsageStats::default()),
            cfg,
        }
    }

    pub fn stats(&self) -> UsageStats {
        *self.stats.lock().unwrap()
    }

    fn api_key(&self) -> Result<String> {
        std::env::var(&self.cfg.api_key_env).map_err(|_| {
            Error::ConfigError(format!(
                "environment variable {} is not set",
                self.cfg.api_key_env
            ))
        })
    }

    /// Sends one chat-completions request and returns the first
    /// choice's message content.
    pub fn complete(&self, req: &CompletionRequest) -> Result<String> {
        let key = self.api_key()?;
        let url = format!("{}/chat/completions", self.cfg.base_url);
        let body = serde_json::to_string(req)?;
        let _permit = self.limiter.acquire();

        let mut retries = 0u64;
        let mut last_err = String::new();
        for attempt in 0..self.cfg.retry.max_attempts {
            if attempt > 0 {
                retries += 1;
                let backoff = self
                    .cfg
                    .retry
                    .backoff_base_ms
                    .saturating_mul(1 << (attempt - 1).min(20))
                    .min(self.cfg.retry.backoff_cap_ms);
                std::thread::sleep(Duration::from_millis(backoff));
            }
            let start = Instant::now();
            let sent = self
                .agent
                .post(&url)
                .header("Authorization", &format!("Bearer {key}"))
                .header("Content-Type", "application/json")
                .send(body.as_str());
            let mut resp = match sent {
                Ok(resp) => resp,
                Err(e) => {
                    // Transport-level failure (connect, timeout): retry.
                    last_err = redact(&e.to_string(), &key);
                    continue;
                }
            };
            let status = resp.status().as_u16();
            if status == 429 || status >= 500 {
                last_err = format!("HTTP {status}");
                continue;
            }
            if status >= 400 {
                return Err(Error::ConfigError(format!("HTTP {status} from endpoint")));
            }
            let wire: WireResponse = resp
                .body_mut()
                .read_json()
                .map_err(|e| Error::Other(format!("bad completion body: {e}")))?;
            let choice = wire
                .choices
                .into_iter()
                .next()
                .ok_or_else(|| Error::Other("completion response has no choices".into()))?;
            let mut stats = self.stats.lock().unwrap();
            stats.requests += 1;
            stats.retries += retries;
            stats.total_latency_ms += start.elapsed().as_millis() as u64;
            if let Some(usage) = wire.usage {
                stats.prompt_tokens += usage.prompt_tokens;
                stats.completion_tokens += usage.completion_tokens;
            }
            return Ok(choice.message.content);
        }
        Err(Error::TransportError {
            attempts: self.cfg.retry.max_attempts,
            message: last_err,
        })
    }

    /// Same as [`complete`](Self::complete) but pins temperature to 0
    /// for deterministic judging.
    pub fn judge_complete(&self, req: &CompletionRequest) -> Result<String> {
        let mut pinned = req.clone();
        pinned.temperature = 0.0;
        self.complete(&pinned)
    }
}

/// Strips the bearer token out of any error text that might surface in
/// logs or artifacts.
fn redact(message: &str, key: &str) -> String {
    if key.is_empty() {
        message.to_string()
    } else {
        message.replace(key, "[redacted]")
    }
}

impl CompletionBackend for LlmClient {
    fn complete(&self, model: &str, prompt: &str, temperature: f64, max_tokens: u32) -> Result<String> {
        let req = CompletionRequest::new(model, vec![Message::user(prompt)], temperature, max_tokens);
        LlmClient::complete(self, &req)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_body_is_byte_stable() {
        let req = CompletionRequest::new(
            "model-x",
            vec![Message::user("hello")],
            0.7,
            2000,
        );
        let body = serde_json::to_string(&req).unwrap();
        assert_eq!(
            body,
            r#"{"model":"model-x","messages":[{"role":"user","content":"hello"}],"temperature":0.7,"max_tokens":2000}"#
        );
        assert_eq!(body, serde_json::to_string(&req).unwrap());
    }

    #[test]
    fn judge_request_pins_temperature() {
        let req = CompletionRequest::new("j", vec![Message::user("x")], 0.7, 100);
        let mut pinned = req.clone();
        pinned.temperature = 0.0;
        let body = serde_json::to_string(&pinned).unwrap();
        assert!(body.contains(r#""temperature":0.0"#));
    }

    #[test]
    fn missing_api_key_fails_before_network() {
        let cfg = EndpointConfig::new("http://127.0.0.1:9", "DILEMMA_LAB_NO_SUCH_KEY");
        let client = LlmClient::new(cfg);
        let req = CompletionRequest::new("m", vec![Message::user("x")], 0.7, 10);
        assert!(matches!(client.complete(&req), Err(Error::ConfigError(_))));
    }

    #[test]
    fn redact_strips_key() {
        assert_eq!(redact("Bearer sekrit failed", "sekrit"), "Bearer [redacted] failed");
    }
}
