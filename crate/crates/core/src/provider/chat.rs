//! Chat-level plumbing shared by every language-model call: request types,
//! the backend trait, and the validate-and-repair loop.

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ProviderError;
use crate::persona::PersonaVector;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: "user".into(), content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: "assistant".into(), content: content.into() }
    }
}

/// A dimension the model is asked to fill, with its allowed labels if closed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FillSlot {
    pub dimension: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed: Option<Vec<String>>,
}

/// Structured description of what a request asks for. It travels alongside
/// the rendered prompt so offline backends can answer without parsing prose,
/// and it is logged in transcripts for auditing. It is never sent over the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum Task {
    PrioritizeDims {
        topic: String,
        candidates: Vec<String>,
        max_depth: usize,
    },
    InferConditional {
        topic: String,
        dimension: String,
        name: String,
        context: PersonaVector,
        max_branches: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        allowed: Option<Vec<String>>,
    },
    GeneratePersona {
        topic: String,
        fixed: PersonaVector,
        fill: Vec<FillSlot>,
        variant: usize,
    },
    GenerateBatch {
        topic: String,
        count: usize,
        batch: usize,
        fill: Vec<FillSlot>,
    },
    InferFromText {
        theme: String,
        user_id: String,
        fill: Vec<FillSlot>,
    },
    JudgeArchetypes {
        topic: String,
        clusters: usize,
    },
    JudgeIndividual {
        topic: String,
        profile: BTreeMap<String, String>,
    },
}

impl Task {
    pub fn kind(&self) -> &'static str {
        match self {
            Task::PrioritizeDims { .. } => "prioritize_dims",
            Task::InferConditional { .. } => "infer_conditional",
            Task::GeneratePersona { .. } => "generate_persona",
            Task::GenerateBatch { .. } => "generate_batch",
            Task::InferFromText { .. } => "infer_from_text",
            Task::JudgeArchetypes { .. } => "judge_archetypes",
            Task::JudgeIndividual { .. } => "judge_individual",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
    pub task: Task,
}

impl ChatRequest {
    /// Stable identity of the wire-visible part of the request.
    pub fn key(&self) -> String {
        use sha2::{Digest, Sha256};
        let wire = serde_json::json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": self.messages,
        });
        hex::encode(Sha256::digest(wire.to_string().as_bytes()))
    }

    /// Number of repair turns already appended to the conversation.
    pub fn attempt(&self) -> usize {
        self.messages.iter().filter(|m| m.role == "assistant").count()
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("network access is disabled (offline mode)")]
    Offline,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("no recorded response for request {0}")]
    ReplayMiss(String),
    #[error("backend has no more scripted responses")]
    Exhausted,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;

    /// Identifies the model behind this backend, echoed into artifacts.
    fn fingerprint(&self) -> String;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Arc<B> {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }

    fn fingerprint(&self) -> String {
        (**self).fingerprint()
    }
}

/// Serves queued responses in order, recording every request it receives.
#[derive(Default)]
pub struct ScriptedBackend {
    responses: Mutex<VecDeque<String>>,
    seen: Mutex<Vec<ChatRequest>>,
}

impl ScriptedBackend {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            responses: Mutex::new(responses.into_iter().map(Into::into).collect()),
            seen: Mutex::default(),
        }
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.seen.lock().unwrap().clone()
    }

    pub fn calls(&self) -> usize {
        self.seen.lock().unwrap().len()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        self.seen.lock().unwrap().push(request.clone());
        self.responses.lock().unwrap().pop_front().ok_or(BackendError::Exhausted)
    }

    fn fingerprint(&self) -> String {
        "scripted".into()
    }
}

type Responder = dyn Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync;

/// Backend driven by a closure; handy for wrapping another backend with faults.
pub struct FnBackend {
    name: String,
    respond: Box<Responder>,
}

impl FnBackend {
    pub fn new<F>(name: impl Into<String>, respond: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync + 'static,
    {
        Self { name: name.into(), respond: Box::new(respond) }
    }
}

impl ChatBackend for FnBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (self.respond)(request)
    }

    fn fingerprint(&self) -> String {
        self.name.clone()
    }
}

/// Model settings plus the retry policy applied to every structured call.
#[derive(Clone)]
pub struct LlmClient {
    backend: Arc<dyn ChatBackend>,
    pub model: String,
    pub temperature: f64,
    pub retries: u32,
}

impl LlmClient {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        let model = backend.fingerprint();
        Self { backend, model, temperature: 0.0, retries: 3 }
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    pub fn backend(&self) -> &Arc<dyn ChatBackend> {
        &self.backend
    }

    pub fn fingerprint(&self) -> String {
        self.backend.fingerprint()
    }

    /// Sends `prompt`, validates the reply with `check`, and on rejection
    /// re-prompts with the validation error, up to `retries` extra times.
    /// Transport failures are retried with the same conversation.
    pub fn ask<T, F>(&self, task: Task, prompt: String, check: F) -> Result<T, ProviderError>
    where
        F: Fn(&str) -> Result<T, ProviderError>,
    {
        let mut request = ChatRequest {
            model: self.model.clone(),
            temperature: self.temperature,
            messages: vec![ChatMessage::user(prompt)],
            task,
        };
        let mut last_err = None;
        for _ in 0..=self.retries {
            let raw = match self.backend.complete(&request) {
                Ok(raw) => raw,
                Err(BackendError::Offline) => return Err(ProviderError::Offline),
                Err(e) => {
                    last_err = Some(ProviderError::Unreachable(e.to_string()));
                    continue;
                }
            };
            match check(&raw) {
                Ok(value) => return Ok(value),
                Err(e) => {
                    let note = format!(
                        "Your previous answer was rejected: {e}. Please answer again, following the \
                         instructions and the required JSON format exactly."
                    );
                    request.messages.push(ChatMessage::assistant(raw));
                    request.messages.push(ChatMessage::user(note));
                    last_err = Some(e);
                }
            }
        }
        Err(last_err.expect("at least one attempt"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task() -> Task {
        Task::JudgeArchetypes { topic: "t".into(), clusters: 1 }
    }

    #[test]
    fn repair_appends_error_and_succeeds() {
        let backend = Arc::new(ScriptedBackend::new(["bad", "good"]));
        let client = LlmClient::new(backend.clone()).with_retries(2);
        let out = client
            .ask(task(), "prompt".into(), |raw| {
                if raw == "good" {
                    Ok(1)
                } else {
                    Err(ProviderError::MalformedResponse("nope".into()))
                }
            })
            .unwrap();
        assert_eq!(out, 1);
        let reqs = backend.requests();
        assert_eq!(reqs.len(), 2);
        assert_eq!(reqs[1].messages.len(), 3);
        assert!(reqs[1].messages[2].content.contains("nope"));
        assert_eq!(reqs[1].attempt(), 1);
    }

    #[test]
    fn retries_exhausted_returns_last_error() {
        let backend = Arc::new(ScriptedBackend::new(["a", "b", "c", "d", "e"]));
        let client = LlmClient::new(backend.clone()).with_retries(3);
        let err = client
            .ask(task(), "p".into(), |raw| Err::<(), _>(ProviderError::MalformedResponse(raw.into())))
            .unwrap_err();
        assert_eq!(err, ProviderError::MalformedResponse("d".into()));
        assert_eq!(backend.calls(), 4);
    }

    #[test]
    fn transport_failures_become_unreachable() {
        let backend = Arc::new(ScriptedBackend::new(Vec::<String>::new()));
        let client = LlmClient::new(backend).with_retries(1);
        let err = client.ask(task(), "p".into(), |_| Ok(())).unwrap_err();
        assert!(matches!(err, ProviderError::Unreachable(_)));
    }

    #[test]
    fn request_key_ignores_task() {
        let a = ChatRequest { model: "m".into(), temperature: 0.0, messages: vec![ChatMessage::user("x")], task: task() };
        let mut b = a.clone();
        b.task = Task::JudgeArchetypes { topic: "other".into(), clusters: 9 };
        assert_eq!(a.key(), b.key());
        b.messages.push(ChatMessage::user("y"));
        assert_ne!(a.key(), b.key());
    }
}
