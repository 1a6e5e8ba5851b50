use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, BackendReply, CallTag, ChatBackend, ChatRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptFault {
    Transport,
    Status(u16),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScriptedReply {
    #[serde(default)]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<ScriptFault>,
}

impl ScriptedReply {
    pub fn text(text: impl Into<String>) -> Self {
        ScriptedReply { text: text.into(), latency_s: Some(0.0), ..Default::default() }
    }

    pub fn fault(fault: ScriptFault) -> Self {
        ScriptedReply { fault: Some(fault), ..Default::default() }
    }

    pub fn tokens(mut self, prompt: u64, completion: u64) -> Self {
        self.prompt_tokens = Some(prompt);
        self.completion_tokens = Some(completion);
        self
    }

    pub fn latency(mut self, seconds: f64) -> Self {
        self.latency_s = Some(seconds);
        self
    }
}

/// Request fingerprint for keyed scripts: sha256 of tag, newline, last user message.
pub fn fingerprint(tag: CallTag, last_user_text: &str) -> String {
    let mut h = Sha256::new();
    h.update(tag.as_str().as_bytes());
    h.update(b"\n");
    h.update(last_user_text.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ScriptFile {
    Queue(Vec<ScriptedReply>),
    Keyed(BTreeMap<String, ScriptedReply>),
}

#[derive(Debug)]
enum Script {
    Queue(Mutex<VecDeque<ScriptedReply>>),
    Keyed(BTreeMap<String, ScriptedReply>),
}

/// Deterministic backend replaying a fixed script, either in order or by fingerprint.
#[derive(Debug)]
pub struct ScriptedBackend {
    script: Script,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn queue(replies: Vec<ScriptedReply>) -> Self {
        ScriptedBackend { script: Script::Queue(Mutex::new(replies.into())), calls: AtomicUsize::new(0) }
    }

    pub fn keyed(replies: BTreeMap<String, ScriptedReply>) -> Self {
        ScriptedBackend { script: Script::Keyed(replies), calls: AtomicUsize::new(0) }
    }

    /// Loads `{"queue": [...]}` or `{"keyed": {fingerprint: reply}}`.
    pub fn from_json(document: &str) -> Result<Self, serde_json::Error> {
        Ok(match serde_json::from_str::<ScriptFile>(document)? {
            ScriptFile::Queue(q) => ScriptedBackend::queue(q),
            ScriptFile::Keyed(k) => ScriptedBackend::keyed(k),
        })
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        ScriptedBackend::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    /// Number of backend invocations so far, including faulted ones.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn remaining(&self) -> Option<usize> {
        match &self.script {
            Script::Queue(q) => Some(q.lock().unwrap_or_else(|e| e.into_inner()).len()),
            Script::Keyed(_) => None,
        }
    }
}

impl ChatBackend for ScriptedBackend {
    fn call(&self, request: &ChatRequest, _timeout: Duration) -> Result<BackendReply, BackendError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        let reply = match &self.script {
            Script::Queue(q) => q
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .pop_front()
                .ok_or_else(|| BackendError::ScriptMiss(format!("queue exhausted at call {n}")))?,
            Script::Keyed(map) => {
                let key = fingerprint(request.tag, request.last_user_text());
                map.get(&key)
                    .cloned()
                    .ok_or_else(|| BackendError::ScriptMiss(format!("no entry for fingerprint {key}")))?
            }
        };
        match reply.fault {
            Some(ScriptFault::Transport) => Err(BackendError::Transport("scripted transport fault".into())),
            Some(ScriptFault::Status(status)) => Err(BackendError::Status { status, body: String::new() }),
            None => Ok(BackendReply {
                text: reply.text,
                prompt_tokens: reply.prompt_tokens,
                completion_tokens: reply.completion_tokens,
                latency: Some(reply.latency_s.unwrap_or(0.0)),
            }),
        }
    }

    fn name(&self) -> &str {
        "scripted"
    }
}
