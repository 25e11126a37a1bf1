use super::{Backend, BackendError, CallContext, CompletionRequest};
use crate::model::AgentBinding;
use rand::Rng;
use serde_json::{json, Value};
use std::sync::{Condvar, Mutex};
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    /// Worth retrying: connection errors, 429, 5xx.
    #[error("transient: {0}")]
    Transient(String),
    #[error("fatal: {0}")]
    Fatal(String),
}

/// Sends one JSON request body and returns the JSON response.
pub trait Transport: Send + Sync {
    fn post(&self, url: &str, key: &str, body: &Value) -> Result<Value, TransportError>;
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self { client })
    }
}

impl Transport for HttpTransport {
    fn post(&self, url: &str, key: &str, body: &Value) -> Result<Value, TransportError> {
        let resp = self
            .client
            .post(url)
            .bearer_auth(key)
            .json(body)
            .send()
            .map_err(|e| TransportError::Transient(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(TransportError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(TransportError::Fatal(format!("HTTP {status}: {text}")));
        }
        resp.json::<Value>()
            .map_err(|e| TransportError::Transient(format!("bad response body: {e}")))
    }
}

/// Exponential backoff: the i-th retry waits `base_delay * 2^i` scaled by a
/// uniform factor in `[1 - jitter, 1 + jitter]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_secs(1),
            jitter: 0.2,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32, rng: &mut impl Rng) -> Duration {
        let nominal = self.base_delay.as_secs_f64() * 2f64.powi(retry as i32);
        let factor = if self.jitter > 0.0 {
            rng.gen_range(1.0 - self.jitter..=1.0 + self.jitter)
        } else {
            1.0
        };
        Duration::from_secs_f64(nominal * factor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub url: String,
    pub key: String,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
}

impl RemoteConfig {
    /// Reads `WISE_BACKEND_<ID>_URL` and `WISE_BACKEND_<ID>_KEY`.
    pub fn from_env(backend_id: &str) -> Result<Self, BackendError> {
        let prefix = format!("WISE_BACKEND_{}", env_id(backend_id));
        let var = |suffix: &str| {
            let name = format!("{prefix}_{suffix}");
            std::env::var(&name).map_err(|_| BackendError::Config(format!("{name} is not set")))
        };
        Ok(Self {
            url: var("URL")?,
            key: var("KEY")?,
            retry: RetryPolicy::default(),
            max_in_flight: 4,
        })
    }
}

fn env_id(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' })
        .collect()
}

struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut p = self.permits.lock().unwrap();
        while *p == 0 {
            p = self.freed.wait(p).unwrap();
        }
        *p -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

/// Messages-style chat-completion client with retry and an in-flight cap.
pub struct RemoteBackend {
    config: RemoteConfig,
    transport: Box<dyn Transport>,
    in_flight: Semaphore,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig, transport: Box<dyn Transport>) -> Self {
        let in_flight = Semaphore::new(config.max_in_flight);
        Self {
            config,
            transport,
            in_flight,
        }
    }

    pub fn from_env(backend_id: &str) -> Result<Self, BackendError> {
        let config = RemoteConfig::from_env(backend_id)?;
        let transport = HttpTransport::new(Duration::from_secs(600))?;
        Ok(Self::new(config, Box::new(transport)))
    }

    pub fn request_body(binding: &AgentBinding, req: &CompletionRequest) -> Value {
        let mut content = vec![json!({ "type": "text", "text": req.user_text })];
        for image in &req.image_refs {
            content.push(json!({ "type": "image_url", "image_url": { "url": image } }));
        }
        let mut messages = Vec::new();
        if !req.system_text.is_empty() {
            messages.push(json!({ "role": "system", "content": req.system_text }));
        }
        messages.push(json!({ "role": "user", "content": content }));
        let mut body = json!({
            "model": binding.model_id(),
            "messages": messages,
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        });
        if let Some(seed) = req.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    /// Pulls the assistant text out of a chat-completion response.
    pub fn extract_text(resp: &Value) -> Option<String> {
        let content = resp.pointer("/choices/0/message/content")?;
        match content {
            Value::String(s) => Some(s.clone()),
            Value::Array(parts) => Some(
                parts
                    .iter()
                    .filter_map(|p| p.get("text").and_then(Value::as_str))
                    .collect::<Vec<_>>()
                    .join(""),
            ),
            _ => None,
        }
    }

    /// Issues the request, retrying transient failures. Returns the text and
    /// the number of attempts used.
    pub fn send_with_retry(
        &self,
        binding: &AgentBinding,
        req: &CompletionRequest,
    ) -> Result<(String, u32), BackendError> {
        let _permit = self.in_flight.acquire();
        let body = Self::request_body(binding, req);
        let mut rng = rand::thread_rng();
        let mut attempt = 0;
        loop {
            attempt += 1;
            let err = match self.transport.post(&self.config.url, &self.config.key, &body) {
                Ok(resp) => match Self::extract_text(&resp) {
                    Some(text) => return Ok((text, attempt)),
                    None => TransportError::Transient("response has no message content".into()),
                },
                Err(e) => e,
            };
            match err {
                TransportError::Fatal(msg) => return Err(BackendError::Failure(msg)),
                TransportError::Transient(msg) if attempt > self.config.retry.max_retries => {
                    return Err(BackendError::Failure(format!(
                        "gave up after {attempt} attempts: {msg}"
                    )));
                }
                TransportError::Transient(msg) => {
                    let wait = self.config.retry.delay(attempt - 1, &mut rng);
                    log::warn!("{}: attempt {attempt} failed ({msg}); retrying in {wait:?}", binding.name);
                    std::thread::sleep(wait);
                }
            }
        }
    }
}

impl Backend for RemoteBackend {
    fn complete(
        &self,
        binding: &AgentBinding,
        _ctx: &CallContext,
        req: &CompletionRequest,
    ) -> Result<String, BackendError> {
        self.send_with_retry(binding, req).map(|(text, _)| text)
    }
}
