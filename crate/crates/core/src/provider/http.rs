//! OpenAI-compatible HTTP backends and the process-wide offline switch.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::chat::{BackendError, ChatBackend, ChatRequest};

pub const ENV_API_KEY: &str = "HAG_API_KEY";
pub const ENV_BASE_URL: &str = "HAG_BASE_URL";
pub const ENV_MODEL: &str = "HAG_MODEL";
pub const ENV_OFFLINE: &str = "HAG_OFFLINE";

static OFFLINE: AtomicBool = AtomicBool::new(false);
static ATTEMPTS: AtomicUsize = AtomicUsize::new(0);

/// Disables (or re-enables) every network call in this process.
pub fn set_offline(offline: bool) {
    OFFLINE.store(offline, Ordering::SeqCst);
}

/// Outgoing requests attempted by this process so far.
pub fn network_attempts() -> usize {
    ATTEMPTS.load(Ordering::SeqCst)
}

/// True when offline mode was requested programmatically or via `HAG_OFFLINE`.
pub fn is_offline() -> bool {
    OFFLINE.load(Ordering::SeqCst)
        || std::env::var(ENV_OFFLINE).map(|v| !v.is_empty() && v != "0" && v != "false").unwrap_or(false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub base_url: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub model: String,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            api_key: None,
            model: "gpt-4o".into(),
            timeout_secs: 120,
            max_in_flight: 8,
        }
    }
}

impl HttpConfig {
    /// Applies environment overrides (`HAG_BASE_URL`, `HAG_API_KEY` falling back
    /// to `OPENAI_API_KEY`, `HAG_MODEL`).
    pub fn with_env(mut self) -> Self {
        if let Ok(url) = std::env::var(ENV_BASE_URL) {
            self.base_url = url;
        }
        if let Ok(key) = std::env::var(ENV_API_KEY).or_else(|_| std::env::var("OPENAI_API_KEY")) {
            self.api_key = Some(key);
        }
        if let Ok(model) = std::env::var(ENV_MODEL) {
            self.model = model;
        }
        self
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}/{}", self.base_url.trim_end_matches('/'), path)
    }
}

/// Counting semaphore capping in-flight requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Self { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut free = self.free.lock().unwrap();
            while *free == 0 {
                free = self.cv.wait(free).unwrap();
            }
            *free -= 1;
        }
        let out = f();
        *self.free.lock().unwrap() += 1;
        self.cv.notify_one();
        out
    }
}

struct HttpCore {
    config: HttpConfig,
    agent: ureq::Agent,
    gate: Gate,
}

impl HttpCore {
    fn new(config: HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = Gate::new(config.max_in_flight);
        Self { config, agent, gate }
    }

    fn post(&self, path: &str, body: serde_json::Value) -> Result<serde_json::Value, BackendError> {
        if is_offline() {
            return Err(BackendError::Offline);
        }
        let url = self.config.endpoint(path);
        self.gate.run(|| {
            ATTEMPTS.fetch_add(1, Ordering::SeqCst);
            let mut req = self.agent.post(&url).header("Content-Type", "application/json");
            if let Some(key) = &self.config.api_key {
                req = req.header("Authorization", format!("Bearer {key}"));
            }
            let mut resp = req.send_json(&body).map_err(|e| BackendError::Transport(e.to_string()))?;
            let status = resp.status().as_u16();
            let text = resp.body_mut().read_to_string().map_err(|e| BackendError::Transport(e.to_string()))?;
            if !(200..300).contains(&status) {
                return Err(BackendError::Http { status, body: text });
            }
            serde_json::from_str(&text).map_err(|e| BackendError::Transport(format!("invalid JSON body: {e}")))
        })
    }
}

#[derive(Deserialize)]
struct ChatCompletion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

/// Chat-completions client for any OpenAI-compatible endpoint.
pub struct HttpBackend {
    core: HttpCore,
}

impl HttpBackend {
    /// Fails immediately in offline mode.
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        if is_offline() {
            return Err(BackendError::Offline);
        }
        Ok(Self { core: HttpCore::new(config) })
    }

    pub fn request_body(request: &ChatRequest) -> serde_json::Value {
        json!({
            "model": request.model,
            "temperature": request.temperature,
            "messages": request.messages,
        })
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let value = self.core.post("chat/completions", Self::request_body(request))?;
        let parsed: ChatCompletion =
            serde_json::from_value(value).map_err(|e| BackendError::Transport(format!("unexpected response: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Transport("response has no message content".into()))
    }

    fn fingerprint(&self) -> String {
        format!("http:{}", self.core.config.model)
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    index: usize,
    embedding: Vec<f32>,
}

/// Embeddings endpoint client (`POST {base}/embeddings`).
pub struct HttpEmbeddingClient {
    core: HttpCore,
}

impl HttpEmbeddingClient {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        if is_offline() {
            return Err(BackendError::Offline);
        }
        Ok(Self { core: HttpCore::new(config) })
    }

    pub fn model(&self) -> &str {
        &self.core.config.model
    }

    pub fn embed(&self, inputs: &[String]) -> Result<Vec<Vec<f32>>, BackendError> {
        let value = self.core.post("embeddings", json!({ "model": self.core.config.model, "input": inputs }))?;
        let mut parsed: EmbeddingResponse =
            serde_json::from_value(value).map_err(|e| BackendError::Transport(format!("unexpected response: {e}")))?;
        parsed.data.sort_by_key(|d| d.index);
        if parsed.data.len() != inputs.len() {
            return Err(BackendError::Transport(format!(
                "expected {} embeddings, got {}",
                inputs.len(),
                parsed.data.len()
            )));
        }
        Ok(parsed.data.into_iter().map(|d| d.embedding).collect())
    }
}
