//! Live session service: form registry, per-session serialization, idempotent
//! message handling and durable event logs with crash recovery. Transport-free;
//! the HTTP layer is a thin adapter over [`SessionManager`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock, TryLockError};

use serde::{Deserialize, Serialize};

use crate::answer::AnswerValue;
use crate::baseline::BaselineEngine;
use crate::clock::Clock;
use crate::clustering::Grouping;
use crate::eval::{run_metrics, EvalConfig, RunMetrics};
use crate::fixtures;
use crate::flow::{FlowConfig, FlowError, ModularEngine};
use crate::form::{validate_form, FormError, FormSpec};
use crate::gateway::Gateway;
use crate::kb::{KbBuildConfig, KnowledgeBase};
use crate::patient::{make_personas, Patient, PatientError, PersonaPatient, ScriptedPatient};
use crate::session::{
    abort_reason, read_log, CompletionRecord, EventKind, EventSink, JsonlSink, MemorySink, Progress, SessionCore,
    SessionError, SessionState,
};
use crate::simulate::prepare;
use crate::transcript::{AbortReason, Mode, Transcript};

/// Suggested client back-off when a session is busy.
pub const RETRY_AFTER_MS: u64 = 250;

/// Who answers the questions of a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PatientKind {
    /// A human typing replies.
    Live,
    /// Simulated persona, 1-based index into the persona roster.
    Persona(usize),
    /// Deterministic replies from the form's ground-truth ledger.
    Scripted,
}

impl fmt::Display for PatientKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PatientKind::Live => f.write_str("live"),
            PatientKind::Persona(k) => write!(f, "persona_{k}"),
            PatientKind::Scripted => f.write_str("scripted"),
        }
    }
}

impl FromStr for PatientKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(PatientKind::Live),
            "scripted" => Ok(PatientKind::Scripted),
            _ => {
                let k = s
                    .strip_prefix("persona_")
                    .and_then(|n| n.parse::<usize>().ok())
                    .filter(|k| (1..=make_personas().len()).contains(k))
                    .ok_or_else(|| format!("unknown patient `{s}`"))?;
                Ok(PatientKind::Persona(k))
            }
        }
    }
}

impl TryFrom<String> for PatientKind {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<PatientKind> for String {
    fn from(p: PatientKind) -> String {
        p.to_string()
    }
}

/// The simulated patient for `kind`; `None` for live patients.
pub fn simulated_patient(
    kind: PatientKind,
    form: &FormSpec,
    ledger: &BTreeMap<String, AnswerValue>,
) -> Option<Box<dyn Patient>> {
    match kind {
        PatientKind::Live => None,
        PatientKind::Scripted => Some(Box::new(ScriptedPatient::new(ledger.clone(), fixtures::phrasing_table(&form.form_id)))),
        PatientKind::Persona(k) => {
            let persona = make_personas().into_iter().nth(k - 1)?;
            Some(Box::new(PersonaPatient::new(persona, form, ledger)))
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown form `{0}`")]
    UnknownForm(String),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("form `{0}` already registered")]
    FormExists(String),
    #[error(transparent)]
    InvalidForm(#[from] FormError),
    #[error("no knowledge base for form `{0}`")]
    KbMissing(String),
    #[error("form `{0}` has no ground-truth ledger for a simulated patient")]
    LedgerMissing(String),
    #[error("session is {0}")]
    Conflict(String),
    #[error("session busy, retry after {retry_after_ms} ms")]
    Busy { retry_after_ms: u64 },
    #[error("a live patient must supply text")]
    MissingText,
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("flow: {0}")]
    Flow(String),
    #[error("knowledge base: {0}")]
    Preparation(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl From<FlowError> for ServiceError {
    fn from(e: FlowError) -> Self {
        match e {
            FlowError::Session(s) => ServiceError::Session(s),
            other => ServiceError::Flow(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Root for `sessions/{id}.jsonl` and `forms/{id}.json`; in-memory when unset.
    pub data_dir: Option<PathBuf>,
    pub flow: FlowConfig,
    pub kb: KbBuildConfig,
    pub eval: EvalConfig,
    /// Build grouping and knowledge base when a form is registered.
    pub prepare_on_register: bool,
}

/// A registered form with everything sessions on it may need.
#[derive(Debug, Clone)]
pub struct FormEntry {
    pub form: FormSpec,
    pub grouping: Option<Grouping>,
    pub kb: Option<KnowledgeBase>,
    pub ledger: Option<BTreeMap<String, AnswerValue>>,
}

/// What a create or message call returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub form_id: String,
    pub mode: Mode,
    pub patient: PatientKind,
    /// The question awaiting an answer, or the closing line once finished.
    pub reply: Option<String>,
    pub progress: Progress,
    pub status: crate::transcript::Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion: Option<CompletionRecord>,
    /// True when the request repeated an already processed client message id.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub duplicate: bool,
}

struct SessionSlot {
    form_id: String,
    patient: PatientKind,
    core: Mutex<SessionCore>,
    /// Copy of the last committed state, readable while a step runs.
    committed: Arc<RwLock<SessionState>>,
    seen_msg_ids: Mutex<BTreeSet<String>>,
}

pub struct SessionManager {
    gateway: Arc<Gateway>,
    patient_gateway: Arc<Gateway>,
    clock: Arc<dyn Clock>,
    config: ServiceConfig,
    forms: RwLock<BTreeMap<String, Arc<FormEntry>>>,
    sessions: RwLock<BTreeMap<String, Arc<SessionSlot>>>,
    next_id: AtomicU64,
}

fn read_lock<T>(lock: &RwLock<T>) -> std::sync::RwLockReadGuard<'_, T> {
    lock.read().unwrap_or_else(|e| e.into_inner())
}

fn write_lock<T>(lock: &RwLock<T>) -> std::sync::RwLockWriteGuard<'_, T> {
    lock.write().unwrap_or_else(|e| e.into_inner())
}

impl SessionManager {
    pub fn new(gateway: Arc<Gateway>, patient_gateway: Arc<Gateway>, clock: Arc<dyn Clock>, config: ServiceConfig) -> Self {
        SessionManager {
            gateway,
            patient_gateway,
            clock,
            config,
            forms: RwLock::new(BTreeMap::new()),
            sessions: RwLock::new(BTreeMap::new()),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    fn sessions_dir(&self) -> Option<PathBuf> {
        self.config.data_dir.as_ref().map(|d| d.join("sessions"))
    }

    fn forms_dir(&self) -> Option<PathBuf> {
        self.config.data_dir.as_ref().map(|d| d.join("forms"))
    }

    /// Registers the bundled replica forms with their ledgers.
    pub fn register_replicas(&self) -> Result<(), ServiceError> {
        for (form, ledger) in fixtures::replicas() {
            if !self.has_form(&form.form_id) {
                self.register(form, Some(ledger), false)?;
            }
        }
        Ok(())
    }

    pub fn has_form(&self, form_id: &str) -> bool {
        read_lock(&self.forms).contains_key(form_id)
    }

    /// Validates and registers a form; optionally persists it under the data directory.
    pub fn register_form(
        &self,
        form: FormSpec,
        ledger: Option<BTreeMap<String, AnswerValue>>,
    ) -> Result<Arc<FormEntry>, ServiceError> {
        if self.has_form(&form.form_id) {
            return Err(ServiceError::FormExists(form.form_id.clone()));
        }
        self.register(form, ledger, true)
    }

    fn register(
        &self,
        form: FormSpec,
        ledger: Option<BTreeMap<String, AnswerValue>>,
        persist: bool,
    ) -> Result<Arc<FormEntry>, ServiceError> {
        let report = validate_form(&form);
        if !report.is_clean() {
            return Err(FormError::Invalid(report).into());
        }
        if persist {
            if let Some(dir) = self.forms_dir() {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join(format!("{}.json", form.form_id)), form.to_json())?;
            }
        }
        let mut entry = FormEntry { form, grouping: None, kb: None, ledger };
        if self.config.prepare_on_register {
            self.prepare_entry(&mut entry)?;
        }
        let entry = Arc::new(entry);
        write_lock(&self.forms).insert(entry.form.form_id.clone(), entry.clone());
        Ok(entry)
    }

    fn prepare_entry(&self, entry: &mut FormEntry) -> Result<(), ServiceError> {
        let (grouping, kb, _) = prepare(&entry.form, &self.gateway, &self.config.flow, &self.config.kb, self.clock.as_ref())
            .map_err(|e| ServiceError::Preparation(e.to_string()))?;
        entry.grouping = Some(grouping);
        entry.kb = Some(kb);
        Ok(())
    }

    /// Builds grouping and knowledge base for a registered form.
    pub fn prepare_form(&self, form_id: &str) -> Result<(), ServiceError> {
        let mut entry = (*self.form(form_id)?).clone();
        self.prepare_entry(&mut entry)?;
        write_lock(&self.forms).insert(form_id.to_string(), Arc::new(entry));
        Ok(())
    }

    /// Installs an externally built grouping and knowledge base.
    pub fn attach_kb(&self, form_id: &str, grouping: Grouping, kb: KnowledgeBase) -> Result<(), ServiceError> {
        let mut entry = (*self.form(form_id)?).clone();
        if grouping.source_form_id != form_id {
            return Err(SessionError::GroupingMismatch(form_id.to_string()).into());
        }
        entry.grouping = Some(grouping);
        entry.kb = Some(kb);
        write_lock(&self.forms).insert(form_id.to_string(), Arc::new(entry));
        Ok(())
    }

    pub fn form(&self, form_id: &str) -> Result<Arc<FormEntry>, ServiceError> {
        read_lock(&self.forms).get(form_id).cloned().ok_or_else(|| ServiceError::UnknownForm(form_id.to_string()))
    }

    pub fn form_ids(&self) -> Vec<String> {
        read_lock(&self.forms).keys().cloned().collect()
    }

    pub fn session_ids(&self) -> Vec<String> {
        read_lock(&self.sessions).keys().cloned().collect()
    }

    fn slot(&self, session_id: &str) -> Result<Arc<SessionSlot>, ServiceError> {
        read_lock(&self.sessions)
            .get(session_id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(session_id.to_string()))
    }

    fn sink_for(&self, session_id: &str) -> Result<Box<dyn EventSink>, ServiceError> {
        Ok(match self.sessions_dir() {
            Some(dir) => Box::new(JsonlSink::open(dir.join(format!("{session_id}.jsonl")))?),
            None => Box::new(MemorySink::default()),
        })
    }

    fn fresh_session_id(&self) -> String {
        loop {
            let n = self.next_id.fetch_add(1, Ordering::SeqCst);
            let id = format!("s{n:06}");
            let taken = read_lock(&self.sessions).contains_key(&id)
                || self.sessions_dir().is_some_and(|d| d.join(format!("{id}.jsonl")).exists());
            if !taken {
                return id;
            }
        }
    }

    fn observed_core(sink: Box<dyn EventSink>, state: SessionState) -> (SessionCore, Arc<RwLock<SessionState>>) {
        let committed = Arc::new(RwLock::new(state.clone()));
        let mut core = SessionCore::restore(state, sink);
        let shared = committed.clone();
        core.set_observer(Box::new(move |_, state| *write_lock(&shared) = state.clone()));
        (core, committed)
    }

    /// Starts a session and returns its first question. The session is on
    /// disk before this returns.
    pub fn create_session(&self, form_id: &str, mode: Mode, patient: PatientKind) -> Result<SessionView, ServiceError> {
        let entry = self.form(form_id)?;
        if patient != PatientKind::Live && entry.ledger.is_none() {
            return Err(ServiceError::LedgerMissing(form_id.to_string()));
        }
        let modular_inputs = match mode {
            Mode::Modular => match (&entry.grouping, &entry.kb) {
                (Some(g), Some(kb)) => Some((g, kb)),
                _ => return Err(ServiceError::KbMissing(form_id.to_string())),
            },
            Mode::Baseline => None,
        };
        let session_id = self.fresh_session_id();
        let (mut core, committed) = Self::observed_core(self.sink_for(&session_id)?, SessionState::default());
        match modular_inputs {
            Some((grouping, kb)) => {
                self.modular_engine(&entry, kb).start(&mut core, &session_id, grouping, &patient.to_string())?
            }
            None => self.baseline_engine(&entry).start(&mut core, &session_id, &patient.to_string())?,
        }
        let slot = Arc::new(SessionSlot {
            form_id: form_id.to_string(),
            patient,
            core: Mutex::new(core),
            committed,
            seen_msg_ids: Mutex::new(BTreeSet::new()),
        });
        write_lock(&self.sessions).insert(session_id.clone(), slot.clone());
        log::info!("session {session_id} created: {form_id} {} {patient}", mode.as_str());
        Ok(self.view(&slot, &entry.form, false))
    }

    fn modular_engine<'a>(&'a self, entry: &'a FormEntry, kb: &'a KnowledgeBase) -> ModularEngine<'a> {
        ModularEngine {
            form: &entry.form,
            kb,
            gateway: &self.gateway,
            clock: self.clock.as_ref(),
            config: &self.config.flow,
        }
    }

    fn baseline_engine<'a>(&'a self, entry: &'a FormEntry) -> BaselineEngine<'a> {
        BaselineEngine { form: &entry.form, gateway: &self.gateway, clock: self.clock.as_ref(), caps: self.config.flow.caps }
    }

    fn simulated_patient(&self, entry: &FormEntry, kind: PatientKind) -> Option<Box<dyn Patient>> {
        simulated_patient(kind, &entry.form, entry.ledger.as_ref()?)
    }

    /// Runs one flow step. A repeated `client_msg_id` returns the current view
    /// without stepping. Without `text`, a simulated patient answers.
    pub fn post_message(
        &self,
        session_id: &str,
        client_msg_id: Option<&str>,
        text: Option<&str>,
    ) -> Result<SessionView, ServiceError> {
        let slot = self.slot(session_id)?;
        let entry = self.form(&slot.form_id)?;
        let mut core = match slot.core.try_lock() {
            Ok(core) => core,
            Err(TryLockError::WouldBlock) => return Err(ServiceError::Busy { retry_after_ms: RETRY_AFTER_MS }),
            Err(TryLockError::Poisoned(e)) => e.into_inner(),
        };
        if let Some(id) = client_msg_id {
            if slot.seen_msg_ids.lock().unwrap_or_else(|e| e.into_inner()).contains(id) {
                drop(core);
                return Ok(self.view(&slot, &entry.form, true));
            }
        }
        if !core.state.is_active() {
            return Err(ServiceError::Conflict(status_word(&core.state)));
        }
        if core.state.awaiting().is_none() {
            // an interrupted step: finish it and let the client answer the result
            self.resume_core(&entry, &mut core)?;
            drop(core);
            return Ok(self.view(&slot, &entry.form, false));
        }
        let text = match text {
            Some(t) => t.to_string(),
            None => {
                let patient = self.simulated_patient(&entry, slot.patient).ok_or(ServiceError::MissingText)?;
                match patient.reply(&entry.form, &core.state.turns, &self.patient_gateway, None) {
                    Ok(t) => t,
                    Err(e) => {
                        let reason = match &e {
                            PatientError::Gateway(g) => abort_reason(g),
                            _ => AbortReason::Gateway,
                        };
                        log::warn!("session {session_id}: patient failed: {e}");
                        core.commit(EventKind::Aborted { reason }, self.clock.now(), None)?;
                        drop(core);
                        return Ok(self.view(&slot, &entry.form, false));
                    }
                }
            }
        };
        match core.state.mode {
            Some(Mode::Modular) => {
                let kb = entry.kb.as_ref().ok_or_else(|| ServiceError::KbMissing(entry.form.form_id.clone()))?;
                self.modular_engine(&entry, kb).step(&mut core, &text, client_msg_id)?
            }
            _ => self.baseline_engine(&entry).step(&mut core, &text, client_msg_id)?,
        }
        if let Some(id) = client_msg_id {
            slot.seen_msg_ids.lock().unwrap_or_else(|e| e.into_inner()).insert(id.to_string());
        }
        drop(core);
        Ok(self.view(&slot, &entry.form, false))
    }

    fn resume_core(&self, entry: &FormEntry, core: &mut SessionCore) -> Result<(), ServiceError> {
        match core.state.mode {
            Some(Mode::Modular) => {
                let kb = entry.kb.as_ref().ok_or_else(|| ServiceError::KbMissing(entry.form.form_id.clone()))?;
                self.modular_engine(entry, kb).resume(core)?
            }
            _ => self.baseline_engine(entry).resume(core)?,
        }
        Ok(())
    }

    /// Completes steps that a crash interrupted between the patient's
    /// utterance and the next system turn. Returns the sessions touched.
    pub fn resume_interrupted(&self) -> Result<Vec<String>, ServiceError> {
        let mut touched = Vec::new();
        for id in self.session_ids() {
            let slot = self.slot(&id)?;
            let entry = self.form(&slot.form_id)?;
            let mut core = slot.core.lock().unwrap_or_else(|e| e.into_inner());
            if core.state.is_active() && core.state.awaiting().is_none() {
                self.resume_core(&entry, &mut core)?;
                touched.push(id);
            }
        }
        Ok(touched)
    }

    fn view(&self, slot: &SessionSlot, form: &FormSpec, duplicate: bool) -> SessionView {
        let state = read_lock(&slot.committed).clone();
        let reply = state.last_system_turn().map(|t| t.text.clone());
        SessionView {
            session_id: state.session_id.clone(),
            form_id: state.form_id.clone(),
            mode: state.mode.unwrap_or(Mode::Modular),
            patient: slot.patient,
            reply,
            progress: state.progress(form),
            status: state.outcome(),
            completion: (!state.is_active()).then(|| state.partial_record(form)),
            duplicate,
        }
    }

    /// Last committed state; never waits for a running step.
    pub fn state(&self, session_id: &str) -> Result<SessionState, ServiceError> {
        Ok(read_lock(&self.slot(session_id)?.committed).clone())
    }

    pub fn current(&self, session_id: &str) -> Result<SessionView, ServiceError> {
        let slot = self.slot(session_id)?;
        let entry = self.form(&slot.form_id)?;
        Ok(self.view(&slot, &entry.form, false))
    }

    pub fn result(&self, session_id: &str) -> Result<CompletionRecord, ServiceError> {
        let slot = self.slot(session_id)?;
        let entry = self.form(&slot.form_id)?;
        let record = read_lock(&slot.committed).partial_record(&entry.form);
        Ok(record)
    }

    pub fn transcript(&self, session_id: &str) -> Result<Transcript, ServiceError> {
        Ok(self.state(session_id)?.transcript())
    }

    pub fn metrics(&self, session_id: &str) -> Result<RunMetrics, ServiceError> {
        let slot = self.slot(session_id)?;
        let entry = self.form(&slot.form_id)?;
        let state = read_lock(&slot.committed).clone();
        Ok(run_metrics(&state, &entry.form, entry.ledger.as_ref(), &self.config.eval))
    }

    /// Reloads persisted forms and session logs. Corrupt tails are cut back
    /// to the last intact event. Finished sessions are loaded for reading
    /// only; the ids of sessions restored to an active state are returned.
    pub fn recover(&self) -> Result<Vec<String>, ServiceError> {
        let Some(data_dir) = self.config.data_dir.clone() else { return Ok(Vec::new()) };
        self.recover_forms(&data_dir.join("forms"))?;
        let dir = data_dir.join("sessions");
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        let mut active = Vec::new();
        let mut highest = 0;
        for path in paths {
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()).map(str::to_string) else { continue };
            if let Some(n) = stem.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
                highest = highest.max(n);
            }
            match self.recover_session(&path)? {
                Some(true) => active.push(stem),
                Some(false) => {}
                None => log::warn!("skipping unusable session log {}", path.display()),
            }
        }
        self.next_id.fetch_max(highest + 1, Ordering::SeqCst);
        Ok(active)
    }

    fn recover_forms(&self, dir: &Path) -> Result<(), ServiceError> {
        if !dir.is_dir() {
            return Ok(());
        }
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        for path in paths.iter().filter(|p| p.extension().is_some_and(|x| x == "json")) {
            let form = match crate::form::parse_form(&fs::read_to_string(path)?) {
                Ok(f) => f,
                Err(e) => {
                    log::warn!("skipping form {}: {e}", path.display());
                    continue;
                }
            };
            if !self.has_form(&form.form_id) {
                let ledger = fixtures::by_id(&form.form_id).map(|(_, l)| l);
                self.register(form, ledger, false)?;
            }
        }
        Ok(())
    }

    /// `Some(active)` when the log yielded a session, `None` when unusable.
    fn recover_session(&self, path: &Path) -> Result<Option<bool>, ServiceError> {
        let text = fs::read_to_string(path)?;
        let (events, cut) = read_log(&text);
        if let Some(offset) = cut {
            log::warn!("{}: corrupt tail after byte {offset}, truncating", path.display());
            OpenOptions::new().write(true).open(path)?.set_len(offset as u64)?;
        }
        let state = match SessionState::replay(&events) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("{}: replay failed: {e}", path.display());
                return Ok(None);
            }
        };
        if !self.has_form(&state.form_id) {
            log::warn!("{}: form `{}` not registered", path.display(), state.form_id);
            return Ok(None);
        }
        let patient = state.patient.parse().unwrap_or(PatientKind::Live);
        let seen: BTreeSet<String> = events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::PatientUtterance { client_msg_id: Some(id), .. } => Some(id.clone()),
                _ => None,
            })
            .collect();
        let active = state.is_active();
        let session_id = state.session_id.clone();
        let sink: Box<dyn EventSink> =
            if active { Box::new(JsonlSink::open(path)?) } else { Box::new(MemorySink::default()) };
        let (core, committed) = Self::observed_core(sink, state);
        let slot = SessionSlot {
            form_id: core.state.form_id.clone(),
            patient,
            core: Mutex::new(core),
            committed,
            seen_msg_ids: Mutex::new(seen),
        };
        write_lock(&self.sessions).insert(session_id, Arc::new(slot));
        Ok(Some(active))
    }
}

fn status_word(state: &SessionState) -> String {
    match state.outcome() {
        crate::transcript::Outcome::InProgress => "in progress".into(),
        crate::transcript::Outcome::Completed => "completed".into(),
        crate::transcript::Outcome::Aborted { reason } => format!("aborted ({reason:?})"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patient_kind_round_trips() {
        for kind in [PatientKind::Live, PatientKind::Scripted, PatientKind::Persona(1), PatientKind::Persona(3)] {
            assert_eq!(kind.to_string().parse::<PatientKind>().unwrap(), kind);
        }
        assert!("persona_0".parse::<PatientKind>().is_err());
        assert!("persona_9".parse::<PatientKind>().is_err());
        assert!("robot".parse::<PatientKind>().is_err());
    }
}
