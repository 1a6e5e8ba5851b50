//! Single choke point for every model call: request validation, timeout,
//! retry with backoff, in-flight cap and token metering.

mod ledger;
mod remote;
mod scripted;

use std::fmt;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::clock::{Clock, SystemClock};

pub use ledger::{CallRecord, MeterLedger, Totals};
pub use remote::RemoteBackend;
pub use scripted::{fingerprint, ScriptFault, ScriptedBackend, ScriptedReply};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);
pub const DEFAULT_MAX_ATTEMPTS: u32 = 3;
pub const DEFAULT_INFLIGHT_CAP: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallTag {
    Clustering,
    QuestionGen,
    Extraction,
    Baseline,
    Patient,
    KbBuild,
}

impl CallTag {
    pub const ALL: [CallTag; 6] = [
        CallTag::Clustering,
        CallTag::QuestionGen,
        CallTag::Extraction,
        CallTag::Baseline,
        CallTag::Patient,
        CallTag::KbBuild,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CallTag::Clustering => "clustering",
            CallTag::QuestionGen => "question_gen",
            CallTag::Extraction => "extraction",
            CallTag::Baseline => "baseline",
            CallTag::Patient => "patient",
            CallTag::KbBuild => "kb_build",
        }
    }

    pub fn default_temperature(self) -> f64 {
        match self {
            CallTag::Patient => 0.7,
            _ => 0.2,
        }
    }
}

impl fmt::Display for CallTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    Assistant,
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
}

impl ChatMessage {
    pub fn user(text: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, text: text.into() }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, text: text.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_text: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub tag: CallTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
}

impl ChatRequest {
    /// One system prompt plus one user message, with the tag's default temperature.
    pub fn new(tag: CallTag, system_text: impl Into<String>, user_text: impl Into<String>) -> Self {
        ChatRequest {
            system_text: system_text.into(),
            messages: vec![ChatMessage::user(user_text)],
            temperature: tag.default_temperature(),
            max_output_tokens: 1024,
            tag,
            session_id: None,
        }
    }

    pub fn with_session(mut self, session_id: Option<&str>) -> Self {
        self.session_id = session_id.map(str::to_string);
        self
    }

    pub fn last_user_text(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.text.as_str())
            .unwrap_or("")
    }

    pub fn prompt_chars(&self) -> usize {
        self.system_text.chars().count()
            + self.messages.iter().map(|m| m.text.chars().count()).sum::<usize>()
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("messages must not be empty".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest("temperature must be non-negative".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        let rest: Vec<Role> = self
            .messages
            .iter()
            .map(|m| m.role)
            .skip_while(|r| *r == Role::System)
            .collect();
        if rest.contains(&Role::System) {
            return Err(GatewayError::InvalidRequest("system messages only allowed first".into()));
        }
        if rest.windows(2).any(|w| w[0] == w[1]) {
            return Err(GatewayError::InvalidRequest("roles must alternate".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency: f64,
    /// True when the token counts were estimated from character length.
    pub estimated: bool,
}

/// What a backend hands back; missing usage or latency is filled in by the gateway.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BackendReply {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub latency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("no scripted reply: {0}")]
    ScriptMiss(String),
    #[error("unusable provider response: {0}")]
    Malformed(String),
}

impl BackendError {
    fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("{tag} call exceeded the {deadline_s}s deadline")]
    Timeout { tag: CallTag, deadline_s: f64 },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("scripted backend miss: {0}")]
    ScriptMiss(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("provider error: {0}")]
    Provider(String),
}

impl GatewayError {
    pub fn is_timeout(&self) -> bool {
        matches!(self, GatewayError::Timeout { .. })
    }
}

pub trait ChatBackend: Send + Sync {
    fn call(&self, request: &ChatRequest, timeout: Duration) -> Result<BackendReply, BackendError>;

    fn name(&self) -> &str;
}

/// ceil(chars / 4)
pub fn estimate_tokens(chars: usize) -> u64 {
    chars.div_ceil(4) as u64
}

/// Counting semaphore for the in-flight cap.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    cond: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn new(n: usize) -> Self {
        Slots { free: Mutex::new(n.max(1)), cond: Condvar::new() }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cond.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        let mut free = self.0.free.lock().unwrap_or_else(|e| e.into_inner());
        *free += 1;
        self.0.cond.notify_one();
    }
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub timeout: Duration,
    pub max_attempts: u32,
    pub backoff_base: Duration,
    pub inflight_cap: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            timeout: DEFAULT_TIMEOUT,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            backoff_base: Duration::from_millis(250),
            inflight_cap: DEFAULT_INFLIGHT_CAP,
        }
    }
}

pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    config: GatewayConfig,
    clock: Arc<dyn Clock>,
    ledger: MeterLedger,
    slots: Slots,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.name())
            .field("config", &self.config)
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Gateway::with_config(backend, GatewayConfig::default(), Arc::new(SystemClock))
    }

    pub fn with_config(backend: Arc<dyn ChatBackend>, config: GatewayConfig, clock: Arc<dyn Clock>) -> Self {
        let slots = Slots::new(config.inflight_cap);
        Gateway { backend, config, clock, ledger: MeterLedger::default(), slots }
    }

    pub fn ledger(&self) -> &MeterLedger {
        &self.ledger
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    /// Runs one chat completion. A successful response is recorded in the
    /// ledger before it is returned.
    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let _slot = self.slots.acquire();
        let deadline_s = self.config.timeout.as_secs_f64();
        let mut attempt = 0;
        let reply = loop {
            attempt += 1;
            let started = Instant::now();
            match self.backend.call(request, self.config.timeout) {
                Ok(mut reply) => {
                    if reply.latency.is_none() {
                        reply.latency = Some(started.elapsed().as_secs_f64());
                    }
                    break reply;
                }
                Err(BackendError::Timeout) => {
                    return Err(GatewayError::Timeout { tag: request.tag, deadline_s });
                }
                Err(e) if e.is_retryable() && attempt < self.config.max_attempts => {
                    let wait = self.config.backoff_base * 2u32.pow(attempt - 1);
                    log::warn!("{} call attempt {attempt} failed ({e}); retrying in {wait:?}", request.tag);
                    std::thread::sleep(wait);
                }
                Err(e) if e.is_retryable() => {
                    return Err(GatewayError::Transport { attempts: attempt, message: e.to_string() });
                }
                Err(BackendError::ScriptMiss(m)) => return Err(GatewayError::ScriptMiss(m)),
                Err(e) => return Err(GatewayError::Provider(e.to_string())),
            }
        };

        let latency = reply.latency.unwrap_or(0.0).max(0.0);
        if latency > deadline_s {
            return Err(GatewayError::Timeout { tag: request.tag, deadline_s });
        }
        let estimated = reply.prompt_tokens.is_none() || reply.completion_tokens.is_none();
        let response = ChatResponse {
            prompt_tokens: reply.prompt_tokens.unwrap_or_else(|| estimate_tokens(request.prompt_chars())),
            completion_tokens: reply
                .completion_tokens
                .unwrap_or_else(|| estimate_tokens(reply.text.chars().count())),
            text: reply.text,
            latency,
            estimated,
        };
        self.ledger.record(CallRecord {
            tag: request.tag,
            session_id: request.session_id.clone(),
            prompt_tokens: response.prompt_tokens,
            completion_tokens: response.completion_tokens,
            latency_s: response.latency,
            ts: self.clock.now(),
            estimated,
        });
        Ok(response)
    }
}
