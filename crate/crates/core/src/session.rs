//! Event-sourced session state shared by the modular flow and the end-to-end
//! baseline. Every mutation is an event; replaying the events of a session
//! from seq 1 rebuilds its state exactly.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::answer::AnswerValue;
use crate::form::{reachable_set, FormSpec, QuestionGroup};
use crate::gateway::{Gateway, GatewayError, Totals};
use crate::transcript::{AbortReason, Mode, Outcome, Speaker, Transcript, Turn, TurnKind};

pub const DEFAULT_MAX_TURNS: usize = 80;
pub const DEFAULT_MAX_REASKS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caps {
    pub max_turns: usize,
    pub max_reasks: usize,
}

impl Default for Caps {
    fn default() -> Self {
        Caps { max_turns: DEFAULT_MAX_TURNS, max_reasks: DEFAULT_MAX_REASKS }
    }
}

/// Token and call usage attributed to a session.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Usage {
    pub requests: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_s: f64,
}

impl Usage {
    pub fn between(before: &Totals, after: &Totals) -> Usage {
        Usage {
            requests: after.requests - before.requests,
            prompt_tokens: after.prompt_tokens - before.prompt_tokens,
            completion_tokens: after.completion_tokens - before.completion_tokens,
            latency_s: after.total_latency - before.total_latency,
        }
    }

    pub fn add(&mut self, other: &Usage) {
        self.requests += other.requests;
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.latency_s += other.latency_s;
    }

    pub fn tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    pub fn is_zero(&self) -> bool {
        self.requests == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum FlowDecision {
    Reask { ids: Vec<String> },
    Followup { ids: Vec<String> },
    Next { group_id: String },
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Created {
        session_id: String,
        form_id: String,
        mode: Mode,
        plan: Vec<QuestionGroup>,
        caps: Caps,
        patient: String,
    },
    SystemUtterance {
        turn: Turn,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        group: Option<QuestionGroup>,
    },
    PatientUtterance {
        turn: Turn,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        client_msg_id: Option<String>,
    },
    AnswerRecorded {
        question_id: String,
        value: AnswerValue,
    },
    Decision {
        decision: FlowDecision,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        exhausted: Vec<String>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        consumed: Vec<String>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        enqueue: Vec<QuestionGroup>,
    },
    Completed,
    Aborted {
        reason: AbortReason,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Created { .. } => "created",
            EventKind::SystemUtterance { .. } => "system_utterance",
            EventKind::PatientUtterance { .. } => "patient_utterance",
            EventKind::AnswerRecorded { .. } => "answer_recorded",
            EventKind::Decision { .. } => "decision",
            EventKind::Completed => "completed",
            EventKind::Aborted { .. } => "aborted",
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, EventKind::Completed | EventKind::Aborted { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub ts: f64,
    #[serde(flatten)]
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SessionError {
    #[error("event seq {got} does not follow {last}")]
    OutOfOrder { last: u64, got: u64 },
    #[error("first event must be `created`")]
    NotCreated,
    #[error("event `{0}` after the session ended")]
    AfterEnd(&'static str),
    #[error("session is not active")]
    NotActive,
    #[error("no question is awaiting a reply")]
    NotAwaitingReply,
    #[error("follow-up group {0} is not at the front of the queue")]
    QueueMismatch(String),
    #[error("grouping does not belong to form {0}")]
    GroupingMismatch(String),
    #[error("grouping is empty")]
    EmptyGrouping,
    #[error("session still in progress")]
    StillActive,
    #[error("event log: {0}")]
    Sink(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub form_id: String,
    pub mode: Option<Mode>,
    pub patient: String,
    pub plan: Vec<QuestionGroup>,
    pub pending: VecDeque<QuestionGroup>,
    pub current: Option<QuestionGroup>,
    pub answers: BTreeMap<String, AnswerValue>,
    pub ask_counts: BTreeMap<String, usize>,
    pub exhausted: BTreeSet<String>,
    pub consumed: BTreeSet<String>,
    pub followups: usize,
    /// Decision taken but not yet acted on by a system utterance.
    pub pending_decision: Option<FlowDecision>,
    pub turns: Vec<Turn>,
    pub turn_count: usize,
    pub status: Option<Outcome>,
    pub caps: Caps,
    pub usage: Usage,
    pub last_seq: u64,
    pub last_client_msg_id: Option<String>,
}

impl SessionState {
    pub fn is_active(&self) -> bool {
        self.status == Some(Outcome::InProgress)
    }

    pub fn outcome(&self) -> Outcome {
        self.status.unwrap_or(Outcome::InProgress)
    }

    /// Applies one event. Pure state transition; the caller owns persistence.
    pub fn apply(&mut self, event: &SessionEvent) -> Result<(), SessionError> {
        if event.seq != self.last_seq + 1 {
            return Err(SessionError::OutOfOrder { last: self.last_seq, got: event.seq });
        }
        let created = matches!(event.kind, EventKind::Created { .. });
        if (self.last_seq == 0) != created {
            return Err(SessionError::NotCreated);
        }
        if self.last_seq > 0 && !self.is_active() {
            return Err(SessionError::AfterEnd(event.kind.name()));
        }
        match &event.kind {
            EventKind::Created { session_id, form_id, mode, plan, caps, patient } => {
                self.session_id = session_id.clone();
                self.form_id = form_id.clone();
                self.mode = Some(*mode);
                self.plan = plan.clone();
                self.pending = plan.iter().cloned().collect();
                self.caps = *caps;
                self.patient = patient.clone();
                self.status = Some(Outcome::InProgress);
            }
            EventKind::SystemUtterance { turn, group } => {
                if turn.is_question() {
                    self.turn_count += 1;
                }
                if let Some(g) = group {
                    match turn.kind {
                        TurnKind::Question => {
                            if self.pending.front().map(|p| &p.group_id) != Some(&g.group_id) {
                                return Err(SessionError::QueueMismatch(g.group_id.clone()));
                            }
                            self.pending.pop_front();
                            self.current = Some(g.clone());
                            self.ask_counts.insert(g.group_id.clone(), 1);
                        }
                        TurnKind::Reask => {
                            *self.ask_counts.entry(g.group_id.clone()).or_insert(0) += 1;
                        }
                        _ => {}
                    }
                }
                self.pending_decision = None;
                self.turns.push(turn.clone());
            }
            EventKind::PatientUtterance { turn, client_msg_id } => {
                self.turns.push(turn.clone());
                self.last_client_msg_id = client_msg_id.clone();
            }
            EventKind::AnswerRecorded { question_id, value } => {
                self.answers.insert(question_id.clone(), value.clone());
                self.exhausted.remove(question_id);
                if let Some(t) = self.turns.iter_mut().rev().find(|t| t.speaker == Speaker::Patient) {
                    t.recorded.insert(question_id.clone(), value.clone());
                }
            }
            EventKind::Decision { decision, exhausted, consumed, enqueue } => {
                self.pending_decision = Some(decision.clone());
                self.exhausted.extend(exhausted.iter().cloned());
                self.consumed.extend(consumed.iter().cloned());
                for g in enqueue.iter().rev() {
                    self.pending.push_front(g.clone());
                }
                self.followups += enqueue.len();
            }
            EventKind::Completed => self.status = Some(Outcome::Completed),
            EventKind::Aborted { reason } => self.status = Some(Outcome::Aborted { reason: *reason }),
        }
        if let Some(u) = &event.usage {
            self.usage.add(u);
        }
        self.last_seq = event.seq;
        Ok(())
    }

    pub fn replay<'a>(events: impl IntoIterator<Item = &'a SessionEvent>) -> Result<SessionState, SessionError> {
        let mut state = SessionState::default();
        for e in events {
            state.apply(e)?;
        }
        Ok(state)
    }

    /// The system turn the patient is expected to answer, if any.
    pub fn awaiting(&self) -> Option<&Turn> {
        self.turns.last().filter(|t| t.is_question())
    }

    pub fn last_system_turn(&self) -> Option<&Turn> {
        self.turns.iter().rev().find(|t| t.speaker == Speaker::System)
    }

    /// Canonical serialization used for snapshot comparison.
    pub fn snapshot(&self) -> String {
        serde_json::to_string(self).expect("state serializes")
    }

    pub fn transcript(&self) -> Transcript {
        Transcript {
            session_id: self.session_id.clone(),
            form_id: self.form_id.clone(),
            mode: self.mode.unwrap_or(Mode::Modular),
            turns: self.turns.clone(),
            outcome: self.outcome(),
            first_group: self.plan.first().map(|g| g.member_ids.clone()).unwrap_or_default(),
            exhausted: self.exhausted.iter().cloned().collect(),
        }
    }

    /// Answered / reachable counts for progress reporting.
    pub fn progress(&self, form: &FormSpec) -> Progress {
        let reachable = reachable_set(form, &self.known_answers(form)).map(|s| s.len()).unwrap_or(0);
        Progress { answered: self.answers.keys().filter(|k| form.contains(k)).count(), reachable }
    }

    fn known_answers(&self, form: &FormSpec) -> BTreeMap<String, AnswerValue> {
        self.answers.iter().filter(|(k, _)| form.contains(k)).map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    fn record(&self, form: &FormSpec, in_progress: bool) -> CompletionRecord {
        let answers = self.known_answers(form);
        let reachable = reachable_set(form, &answers).unwrap_or_default();
        let unanswered: Vec<String> =
            form.questions.iter().filter(|q| reachable.contains(&q.id) && !answers.contains_key(&q.id)).map(|q| q.id.clone()).collect();
        CompletionRecord {
            session_id: self.session_id.clone(),
            form_id: self.form_id.clone(),
            mode: self.mode.unwrap_or(Mode::Modular),
            status: self.outcome(),
            exhausted: self.exhausted.iter().filter(|id| unanswered.contains(id)).cloned().collect(),
            answers,
            unanswered,
            turns: self.turn_count,
            tokens: self.usage.tokens(),
            in_progress,
        }
    }

    /// Final record; errors while the session is still running.
    pub fn finalize(&self, form: &FormSpec) -> Result<CompletionRecord, SessionError> {
        if self.is_active() {
            return Err(SessionError::StillActive);
        }
        Ok(self.record(form, false))
    }

    /// Record of whatever is known so far, flagged when the session is still running.
    pub fn partial_record(&self, form: &FormSpec) -> CompletionRecord {
        self.record(form, self.is_active())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub answered: usize,
    pub reachable: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub session_id: String,
    pub form_id: String,
    pub mode: Mode,
    pub status: Outcome,
    pub answers: BTreeMap<String, AnswerValue>,
    /// Reachable questions without an answer, in form order.
    pub unanswered: Vec<String>,
    /// Subset of `unanswered` given up on after the re-ask budget.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exhausted: Vec<String>,
    pub turns: usize,
    pub tokens: u64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub in_progress: bool,
}

/// Durable destination for committed events.
pub trait EventSink: Send {
    fn append(&mut self, event: &SessionEvent) -> Result<(), SessionError>;
}

#[derive(Debug, Default, Clone)]
pub struct MemorySink {
    pub events: Vec<SessionEvent>,
}

impl EventSink for MemorySink {
    fn append(&mut self, event: &SessionEvent) -> Result<(), SessionError> {
        self.events.push(event.clone());
        Ok(())
    }
}

/// Append-only JSON-lines log, flushed and synced per event.
#[derive(Debug)]
pub struct JsonlSink {
    path: PathBuf,
    file: File,
}

impl JsonlSink {
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(JsonlSink { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl EventSink for JsonlSink {
    fn append(&mut self, event: &SessionEvent) -> Result<(), SessionError> {
        let mut line = serde_json::to_string(event).map_err(|e| SessionError::Sink(e.to_string()))?;
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(|e| SessionError::Sink(e.to_string()))?;
        self.file.sync_data().map_err(|e| SessionError::Sink(e.to_string()))
    }
}

/// Reads a JSON-lines event log. Returns the intact prefix and, when a line
/// fails to parse or apply, the byte length of that prefix.
pub fn read_log(text: &str) -> (Vec<SessionEvent>, Option<usize>) {
    let mut events = Vec::new();
    let mut state = SessionState::default();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            offset += line.len();
            continue;
        }
        let parsed: Option<SessionEvent> = serde_json::from_str(trimmed).ok();
        match parsed {
            Some(e) if line.ends_with('\n') && state.apply(&e).is_ok() => {
                events.push(e);
                offset += line.len();
            }
            _ => return (events, Some(offset)),
        }
    }
    (events, None)
}

/// Called after every commit with the event and the state it produced.
pub type Observer = Box<dyn Fn(&SessionEvent, &SessionState) + Send + Sync>;

/// A session's state plus where its events go. All mutations pass through
/// [`SessionCore::commit`]: apply to a copy, persist, then swap in.
pub struct SessionCore {
    pub state: SessionState,
    sink: Box<dyn EventSink>,
    observer: Option<Observer>,
}

impl SessionCore {
    pub fn new(sink: Box<dyn EventSink>) -> Self {
        SessionCore { state: SessionState::default(), sink, observer: None }
    }

    pub fn restore(state: SessionState, sink: Box<dyn EventSink>) -> Self {
        SessionCore { state, sink, observer: None }
    }

    pub fn set_observer(&mut self, observer: Observer) {
        self.observer = Some(observer);
    }

    pub fn commit(&mut self, kind: EventKind, ts: f64, usage: Option<Usage>) -> Result<(), SessionError> {
        let event = SessionEvent { seq: self.state.last_seq + 1, ts, kind, usage: usage.filter(|u| !u.is_zero()) };
        let mut next = self.state.clone();
        next.apply(&event)?;
        self.sink.append(&event)?;
        self.state = next;
        if let Some(observer) = &self.observer {
            observer(&event, &self.state);
        }
        Ok(())
    }
}

/// Tracks model usage for one session between two points in time.
pub struct UsageMeter<'a> {
    gateway: &'a Gateway,
    session_id: String,
    mark: Totals,
}

impl<'a> UsageMeter<'a> {
    pub fn start(gateway: &'a Gateway, session_id: &str) -> Self {
        let mark = gateway.ledger().totals_for_session(session_id);
        UsageMeter { gateway, session_id: session_id.to_string(), mark }
    }

    /// Usage since the last call (or since start), then resets the mark.
    pub fn take(&mut self) -> Usage {
        let now = self.gateway.ledger().totals_for_session(&self.session_id);
        let usage = Usage::between(&self.mark, &now);
        self.mark = now;
        usage
    }
}

pub fn abort_reason(err: &GatewayError) -> AbortReason {
    if err.is_timeout() {
        AbortReason::Timeout
    } else {
        AbortReason::Gateway
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn created() -> SessionEvent {
        SessionEvent {
            seq: 1,
            ts: 0.0,
            kind: EventKind::Created {
                session_id: "s".into(),
                form_id: "f".into(),
                mode: Mode::Baseline,
                plan: Vec::new(),
                caps: Caps::default(),
                patient: "live".into(),
            },
            usage: None,
        }
    }

    #[test]
    fn seq_must_be_gapless_from_one() {
        let mut s = SessionState::default();
        let mut e = created();
        e.seq = 2;
        assert!(matches!(s.apply(&e), Err(SessionError::OutOfOrder { .. })));
        s.apply(&created()).unwrap();
        let done = SessionEvent { seq: 2, ts: 1.0, kind: EventKind::Completed, usage: None };
        s.apply(&done).unwrap();
        let late = SessionEvent { seq: 3, ts: 2.0, kind: EventKind::Completed, usage: None };
        assert!(matches!(s.apply(&late), Err(SessionError::AfterEnd(_))));
    }

    #[test]
    fn corrupt_tail_is_cut_at_the_last_intact_line() {
        let a = serde_json::to_string(&created()).unwrap();
        let b = serde_json::to_string(&SessionEvent { seq: 2, ts: 1.0, kind: EventKind::Completed, usage: None }).unwrap();
        let log = format!("{a}\n{}", &b[..b.len() / 2]);
        let (events, cut) = read_log(&log);
        assert_eq!(events.len(), 1);
        assert_eq!(cut, Some(a.len() + 1));
        let (events, cut) = read_log(&format!("{a}\n{b}\n"));
        assert_eq!(events.len(), 2);
        assert_eq!(cut, None);
    }
}
