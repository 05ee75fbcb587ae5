//! Append-only JSONL transcripts of model calls, and exact replay from them.

use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::chat::{BackendError, ChatBackend, ChatMessage, ChatRequest, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub key: String,
    pub backend: String,
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
    pub task: Task,
    pub response: String,
    pub latency_ms: u64,
}

/// Wraps a backend and appends every successful exchange to a JSONL file.
pub struct RecordingBackend {
    inner: Arc<dyn ChatBackend>,
    out: Mutex<File>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn ChatBackend>, path: &Path) -> std::io::Result<Self> {
        let out = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { inner, out: Mutex::new(out) })
    }
}

impl ChatBackend for RecordingBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let started = Instant::now();
        let response = self.inner.complete(request)?;
        let entry = TranscriptEntry {
            key: request.key(),
            backend: self.inner.fingerprint(),
            model: request.model.clone(),
            temperature: request.temperature,
            messages: request.messages.clone(),
            task: request.task.clone(),
            response: response.clone(),
            latency_ms: started.elapsed().as_millis() as u64,
        };
        let line = serde_json::to_string(&entry).expect("entry serializes");
        let mut out = self.out.lock().unwrap();
        writeln!(out, "{line}").map_err(|e| BackendError::Transport(format!("transcript write failed: {e}")))?;
        Ok(response)
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }
}

/// Serves recorded responses keyed by the wire request. Repeated identical
/// requests are answered in recording order.
pub struct ReplayBackend {
    fingerprint: String,
    responses: Mutex<HashMap<String, VecDeque<String>>>,
}

impl ReplayBackend {
    pub fn from_entries(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        let mut fingerprint = None;
        let mut responses: HashMap<String, VecDeque<String>> = HashMap::new();
        for e in entries {
            fingerprint.get_or_insert_with(|| e.backend.clone());
            responses.entry(e.key).or_default().push_back(e.response);
        }
        Self { fingerprint: fingerprint.unwrap_or_else(|| "replay(empty)".into()), responses: Mutex::new(responses) }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(Self::from_entries(read_transcript(path)?))
    }
}

pub fn read_transcript(path: &Path) -> std::io::Result<Vec<TranscriptEntry>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("transcript line {}: {e}", n + 1))
        })?;
        out.push(entry);
    }
    Ok(out)
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let key = request.key();
        let mut responses = self.responses.lock().unwrap();
        let queue = responses.get_mut(&key).ok_or_else(|| BackendError::ReplayMiss(key.clone()))?;
        // the last recorded answer keeps serving once the queue is drained
        if queue.len() > 1 {
            Ok(queue.pop_front().expect("non-empty"))
        } else {
            queue.front().cloned().ok_or(BackendError::ReplayMiss(key))
        }
    }

    /// Reports the recorded backend so replayed artifacts match the originals.
    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }
}
