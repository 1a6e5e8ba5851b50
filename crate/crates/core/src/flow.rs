//! Modular dialogue flow: ask a group, extract, then re-ask, follow a fired
//! branch, or move to the next planned group, in that order of precedence.

use crate::answer::AnswerValue;
use crate::clock::Clock;
use crate::clustering::{cluster_with_vote, ClusterConfig, Grouping, QuestionGroup};
use crate::extract::{extract, validate_answer};
use crate::form::{FormSpec, QuestionSpec};
use crate::gateway::Gateway;
use crate::kb::{KnowledgeBase, DEFAULT_K};
use crate::prompts::DEFAULT_LOCALE;
use crate::question_gen::{compose_question, compose_reask, ComposedQuestion, GenError};
use crate::session::{abort_reason, Caps, EventKind, FlowDecision, SessionCore, SessionError, SessionState, UsageMeter};
use crate::transcript::{AbortReason, Mode, Turn, TurnKind};

pub const CLOSING_UTTERANCE: &str = "Thank you, that is all my questions for today. Take care.";

#[derive(Debug, Clone)]
pub struct FlowConfig {
    pub caps: Caps,
    pub cluster: ClusterConfig,
    pub k: usize,
    pub locale: String,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig { caps: Caps::default(), cluster: ClusterConfig::default(), k: DEFAULT_K, locale: DEFAULT_LOCALE.into() }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FlowError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("question generation: {0}")]
    Generation(String),
}

/// Groups the top-level questions of a form; conditional questions are
/// grouped later, when their trigger fires.
pub fn plan_session(form: &FormSpec, gateway: &Gateway, config: &ClusterConfig) -> Grouping {
    let top: Vec<&QuestionSpec> = form.top_level().collect();
    cluster_with_vote(&form.form_id, &top, gateway, config, "g", None)
}

/// Trigger keys (`qid#index`) newly satisfied by recorded answers, and the
/// children they make due that are not yet answered, given up on, asked or queued.
pub fn fired_triggers(form: &FormSpec, state: &SessionState) -> (Vec<String>, Vec<String>) {
    let mut keys = Vec::new();
    let mut children: Vec<String> = Vec::new();
    let asked = |id: &str| state.turns.iter().any(|t| t.covered_ids.iter().any(|c| c == id));
    let queued = |id: &str| state.pending.iter().any(|g| g.member_ids.iter().any(|m| m == id));
    for q in &form.questions {
        let Some(answer) = state.answers.get(&q.id) else { continue };
        for (i, t) in q.triggers.iter().enumerate() {
            let key = format!("{}#{i}", q.id);
            if state.consumed.contains(&key) || !t.when.is_satisfied(answer) {
                continue;
            }
            keys.push(key);
            for c in &t.then {
                let due = !state.answers.contains_key(c)
                    && !state.exhausted.contains(c)
                    && !asked(c)
                    && !queued(c)
                    && !children.contains(c);
                if due {
                    children.push(c.clone());
                }
            }
        }
    }
    children.sort_by_key(|id| form.ordinal(id).unwrap_or(usize::MAX));
    (keys, children)
}

/// The rule-1 part of the decision: items of the last ask that failed, and
/// whether the group still has re-ask budget.
pub fn needs_reask(state: &SessionState, failed: &[String]) -> bool {
    let Some(group) = &state.current else { return false };
    let asks = state.ask_counts.get(&group.group_id).copied().unwrap_or(0);
    !failed.is_empty() && asks <= state.caps.max_reasks
}

pub struct ModularEngine<'a> {
    pub form: &'a FormSpec,
    pub kb: &'a KnowledgeBase,
    pub gateway: &'a Gateway,
    pub clock: &'a dyn Clock,
    pub config: &'a FlowConfig,
}

impl<'a> ModularEngine<'a> {
    fn check_grouping(&self, grouping: &Grouping) -> Result<(), FlowError> {
        if grouping.groups.is_empty() {
            return Err(SessionError::EmptyGrouping.into());
        }
        let foreign = grouping.source_form_id != self.form.form_id
            || grouping.groups.iter().flat_map(|g| &g.member_ids).any(|id| !self.form.contains(id));
        if foreign {
            return Err(SessionError::GroupingMismatch(self.form.form_id.clone()).into());
        }
        Ok(())
    }

    /// Records the session and asks the first planned group.
    pub fn start(
        &self,
        core: &mut SessionCore,
        session_id: &str,
        grouping: &Grouping,
        patient: &str,
    ) -> Result<(), FlowError> {
        self.check_grouping(grouping)?;
        core.commit(
            EventKind::Created {
                session_id: session_id.to_string(),
                form_id: self.form.form_id.clone(),
                mode: Mode::Modular,
                plan: grouping.groups.clone(),
                caps: self.config.caps,
                patient: patient.to_string(),
            },
            self.clock.now(),
            None,
        )?;
        self.advance(core)
    }

    fn abort(&self, core: &mut SessionCore, reason: AbortReason, meter: &mut UsageMeter) -> Result<(), FlowError> {
        core.commit(EventKind::Aborted { reason }, self.clock.now(), Some(meter.take()))?;
        Ok(())
    }

    fn gen_failed(&self, core: &mut SessionCore, err: GenError, meter: &mut UsageMeter) -> Result<(), FlowError> {
        match err {
            GenError::Gateway(e) => self.abort(core, abort_reason(&e), meter),
            GenError::Empty(_) => self.abort(core, AbortReason::Gateway, meter),
            other => Err(FlowError::Generation(other.to_string())),
        }
    }

    fn emit(
        &self,
        core: &mut SessionCore,
        kind: TurnKind,
        composed: ComposedQuestion,
        group: QuestionGroup,
        meter: &mut UsageMeter,
    ) -> Result<(), FlowError> {
        let usage = meter.take();
        let mut turn = Turn::system(kind, composed.utterance, self.clock.now());
        turn.covered_ids = composed.covered_ids;
        turn.group_id = Some(group.group_id.clone());
        turn.latency_s = usage.latency_s;
        core.commit(EventKind::SystemUtterance { turn, group: Some(group) }, self.clock.now(), Some(usage))?;
        Ok(())
    }

    /// Asks the front pending group, or closes the session when none is left.
    fn advance(&self, core: &mut SessionCore) -> Result<(), FlowError> {
        let sid = core.state.session_id.clone();
        let mut meter = UsageMeter::start(self.gateway, &sid);
        let Some(group) = core.state.pending.front().cloned() else {
            let turn = Turn::system(TurnKind::Closing, CLOSING_UTTERANCE, self.clock.now());
            core.commit(EventKind::SystemUtterance { turn, group: None }, self.clock.now(), None)?;
            core.commit(EventKind::Completed, self.clock.now(), None)?;
            return Ok(());
        };
        if core.state.turn_count >= core.state.caps.max_turns {
            return self.abort(core, AbortReason::TurnCap, &mut meter);
        }
        match compose_question(&group, self.form, self.gateway, &self.config.locale, Some(&sid)) {
            Ok(composed) => self.emit(core, TurnKind::Question, composed, group, &mut meter),
            Err(e) => self.gen_failed(core, e, &mut meter),
        }
    }

    /// One flow step for a patient reply to the current question.
    pub fn step(&self, core: &mut SessionCore, text: &str, client_msg_id: Option<&str>) -> Result<(), FlowError> {
        if !core.state.is_active() {
            return Err(SessionError::NotActive.into());
        }
        let asked = core.state.awaiting().cloned().ok_or(SessionError::NotAwaitingReply)?;
        let sid = core.state.session_id.clone();
        let mut meter = UsageMeter::start(self.gateway, &sid);
        core.commit(
            EventKind::PatientUtterance {
                turn: Turn::patient(text, self.clock.now()),
                client_msg_id: client_msg_id.map(str::to_string),
            },
            self.clock.now(),
            None,
        )?;
        self.process_reply(core, &asked, text, &mut meter)
    }

    /// Finishes a step interrupted by a crash, from whatever the log holds.
    pub fn resume(&self, core: &mut SessionCore) -> Result<(), FlowError> {
        if !core.state.is_active() || core.state.awaiting().is_some() {
            return Ok(());
        }
        let sid = core.state.session_id.clone();
        let mut meter = UsageMeter::start(self.gateway, &sid);
        if core.state.pending_decision.is_some() {
            return self.realize(core, &mut meter);
        }
        match core.state.turns.last() {
            None => self.advance(core),
            Some(t) if t.kind == TurnKind::Closing => {
                core.commit(EventKind::Completed, self.clock.now(), None)?;
                Ok(())
            }
            Some(t) => {
                let text = t.text.clone();
                let asked = core.state.last_system_turn().cloned().ok_or(SessionError::NotAwaitingReply)?;
                self.process_reply(core, &asked, &text, &mut meter)
            }
        }
    }

    /// Extraction and decision for a committed patient utterance. Answers
    /// already recorded for that utterance are not recorded again.
    fn process_reply(
        &self,
        core: &mut SessionCore,
        asked: &Turn,
        text: &str,
        meter: &mut UsageMeter,
    ) -> Result<(), FlowError> {
        let sid = core.state.session_id.clone();
        let members: Vec<&QuestionSpec> = asked.covered_ids.iter().filter_map(|id| self.form.question(id)).collect();
        let dialogue = format!("{} {text}", asked.text);
        let examples = self.kb.retrieve_similar(&dialogue, self.config.k);
        let extracted = match extract(&members, &asked.text, text, &examples, self.gateway, Some(&sid)) {
            Ok(v) => v,
            Err(e) => return self.abort(core, abort_reason(&e), meter),
        };
        let mut failed = Vec::new();
        for q in &members {
            let value = extracted.get(&q.id).map(|v| validate_answer(q, v)).unwrap_or(AnswerValue::NoIntent);
            let already = core.state.turns.last().is_some_and(|t| t.recorded.get(&q.id) == Some(&value));
            if already {
                continue;
            }
            if value.is_answer() {
                let usage = meter.take();
                core.commit(
                    EventKind::AnswerRecorded { question_id: q.id.clone(), value },
                    self.clock.now(),
                    Some(usage),
                )?;
            } else {
                failed.push(q.id.clone());
            }
        }
        self.decide(core, failed, meter)
    }

    fn decide(&self, core: &mut SessionCore, failed: Vec<String>, meter: &mut UsageMeter) -> Result<(), FlowError> {
        let now = self.clock.now();
        if needs_reask(&core.state, &failed) {
            let usage = meter.take();
            core.commit(
                EventKind::Decision {
                    decision: FlowDecision::Reask { ids: failed },
                    exhausted: Vec::new(),
                    consumed: Vec::new(),
                    enqueue: Vec::new(),
                },
                now,
                Some(usage),
            )?;
            return self.realize(core, meter);
        }

        let mut probe = core.state.clone();
        probe.exhausted.extend(failed.iter().cloned());
        let (consumed, children) = fired_triggers(self.form, &probe);
        let mut enqueue = Vec::new();
        if !children.is_empty() {
            let refs: Vec<&QuestionSpec> = children.iter().filter_map(|id| self.form.question(id)).collect();
            let sid = core.state.session_id.clone();
            let grouping =
                cluster_with_vote(&self.form.form_id, &refs, self.gateway, &self.config.cluster, "f", Some(&sid));
            let base = core.state.followups;
            enqueue = grouping
                .groups
                .into_iter()
                .enumerate()
                .map(|(i, g)| QuestionGroup { group_id: format!("f{}", base + i + 1), ..g })
                .collect();
        }
        let decision = if !enqueue.is_empty() {
            FlowDecision::Followup { ids: children }
        } else if let Some(front) = core.state.pending.front() {
            FlowDecision::Next { group_id: front.group_id.clone() }
        } else {
            FlowDecision::Done
        };
        let usage = meter.take();
        core.commit(EventKind::Decision { decision, exhausted: failed, consumed, enqueue }, now, Some(usage))?;
        self.realize(core, meter)
    }

    /// Acts on the committed decision: a re-ask of the failed items, or the
    /// next pending group.
    fn realize(&self, core: &mut SessionCore, meter: &mut UsageMeter) -> Result<(), FlowError> {
        let Some(FlowDecision::Reask { ids }) = core.state.pending_decision.clone() else {
            return self.advance(core);
        };
        if core.state.turn_count >= core.state.caps.max_turns {
            return self.abort(core, AbortReason::TurnCap, meter);
        }
        let current = core.state.current.clone().ok_or(SessionError::NotAwaitingReply)?;
        let subgroup = QuestionGroup { group_id: current.group_id.clone(), member_ids: ids, qtype: current.qtype };
        let previous = core.state.last_system_turn().map(|t| t.text.clone()).unwrap_or_default();
        let reply = core.state.turns.last().map(|t| t.text.clone()).unwrap_or_default();
        let sid = core.state.session_id.clone();
        match compose_reask(&subgroup, self.form, &previous, &reply, self.gateway, &self.config.locale, Some(&sid)) {
            Ok(composed) => self.emit(core, TurnKind::Reask, composed, subgroup, meter),
            Err(e) => self.gen_failed(core, e, meter),
        }
    }
}

