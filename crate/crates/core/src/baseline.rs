//! End-to-end control condition: one prompt per turn carrying the whole form,
//! the dialogue history and fixed instructions; the model asks, extracts and
//! decides when it is done without any help from the modular pipeline.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::clock::Clock;
use crate::form::FormSpec;
use crate::gateway::Gateway;
use crate::prompts::{build_baseline_prompt, HistoryLine, BASELINE_INSTRUCTIONS};
use crate::session::{abort_reason, Caps, EventKind, SessionCore, SessionError, UsageMeter};
use crate::transcript::{AbortReason, Mode, Turn, TurnKind};
use crate::wire::{parse_json_object, parse_model_answer};

pub const FALLBACK_CLOSING: &str = "Thank you for your time.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineTurnOutput {
    pub next_question: String,
    pub extracted: BTreeMap<String, Value>,
    pub done: bool,
    pub raw_text: String,
    pub malformed: bool,
}

/// Best-effort parse of the structured block (bare, fenced or inside prose).
/// Never fails: unusable output is returned flagged as malformed.
pub fn parse_baseline_output(raw: &str) -> BaselineTurnOutput {
    let malformed = BaselineTurnOutput {
        next_question: String::new(),
        extracted: BTreeMap::new(),
        done: false,
        raw_text: raw.to_string(),
        malformed: true,
    };
    let Some(obj) = parse_json_object(raw) else { return malformed };
    let (Some(next), Some(done)) = (obj.get("next_question").and_then(Value::as_str), obj.get("done").and_then(Value::as_bool))
    else {
        return malformed;
    };
    let extracted = match obj.get("extracted") {
        Some(Value::Object(m)) => m.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        None | Some(Value::Null) => BTreeMap::new(),
        Some(_) => return malformed,
    };
    BaselineTurnOutput { next_question: next.to_string(), extracted, done, raw_text: raw.to_string(), malformed: false }
}

pub struct BaselineEngine<'a> {
    pub form: &'a FormSpec,
    pub gateway: &'a Gateway,
    pub clock: &'a dyn Clock,
    pub caps: Caps,
}

impl<'a> BaselineEngine<'a> {
    pub fn start(&self, core: &mut SessionCore, session_id: &str, patient: &str) -> Result<(), SessionError> {
        core.commit(
            EventKind::Created {
                session_id: session_id.to_string(),
                form_id: self.form.form_id.clone(),
                mode: Mode::Baseline,
                plan: Vec::new(),
                caps: self.caps,
                patient: patient.to_string(),
            },
            self.clock.now(),
            None,
        )?;
        self.turn(core)
    }

    pub fn step(&self, core: &mut SessionCore, text: &str, client_msg_id: Option<&str>) -> Result<(), SessionError> {
        if !core.state.is_active() {
            return Err(SessionError::NotActive);
        }
        core.state.awaiting().ok_or(SessionError::NotAwaitingReply)?;
        core.commit(
            EventKind::PatientUtterance {
                turn: Turn::patient(text, self.clock.now()),
                client_msg_id: client_msg_id.map(str::to_string),
            },
            self.clock.now(),
            None,
        )?;
        self.turn(core)
    }

    /// Finishes a turn interrupted by a crash.
    pub fn resume(&self, core: &mut SessionCore) -> Result<(), SessionError> {
        if !core.state.is_active() || core.state.awaiting().is_some() {
            return Ok(());
        }
        if core.state.turns.last().is_some_and(|t| t.kind == TurnKind::Closing) {
            return core.commit(EventKind::Completed, self.clock.now(), None);
        }
        self.turn(core)
    }

    fn turn(&self, core: &mut SessionCore) -> Result<(), SessionError> {
        let sid = core.state.session_id.clone();
        let mut meter = UsageMeter::start(self.gateway, &sid);
        if core.state.turn_count >= core.state.caps.max_turns {
            return core.commit(EventKind::Aborted { reason: AbortReason::TurnCap }, self.clock.now(), None);
        }
        let history: Vec<HistoryLine> =
            core.state.turns.iter().map(|t| HistoryLine { speaker: t.speaker, text: t.text.clone() }).collect();
        let request = build_baseline_prompt(self.form, &history, BASELINE_INSTRUCTIONS).with_session(Some(&sid));
        let raw = match self.gateway.complete(&request) {
            Ok(r) => r.text,
            Err(e) => {
                let usage = meter.take();
                return core.commit(EventKind::Aborted { reason: abort_reason(&e) }, self.clock.now(), Some(usage));
            }
        };
        let out = parse_baseline_output(&raw);
        for (qid, value) in &out.extracted {
            let Some(q) = self.form.question(qid) else { continue };
            let v = parse_model_answer(q, value);
            if v.is_answer() && core.state.answers.get(qid) != Some(&v) {
                core.commit(EventKind::AnswerRecorded { question_id: qid.clone(), value: v }, self.clock.now(), None)?;
            }
        }
        let usage = meter.take();
        let ts = self.clock.now();
        if out.done {
            let text = if out.next_question.trim().is_empty() { FALLBACK_CLOSING } else { out.next_question.trim() };
            let mut turn = Turn::system(TurnKind::Closing, text, ts);
            turn.latency_s = usage.latency_s;
            core.commit(EventKind::SystemUtterance { turn, group: None }, ts, Some(usage))?;
            return core.commit(EventKind::Completed, self.clock.now(), None);
        }
        let text = if out.malformed { raw.trim() } else { out.next_question.trim() };
        let mut turn = Turn::system(TurnKind::Question, text, ts);
        turn.malformed = out.malformed;
        turn.latency_s = usage.latency_s;
        core.commit(EventKind::SystemUtterance { turn, group: None }, ts, Some(usage))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_bare_fenced_and_prose() {
        let bare = r#"{"next_question":"How old are you?","extracted":{"age":{"age":"64 years"}},"done":false}"#;
        let out = parse_baseline_output(bare);
        assert!(!out.malformed);
        assert_eq!(out.next_question, "How old are you?");
        assert_eq!(out.extracted.len(), 1);
        let fenced = format!("```json\n{bare}\n```");
        assert!(!parse_baseline_output(&fenced).malformed);
        let prose = format!("Sure! Here it is: {bare} Hope that helps.");
        assert!(!parse_baseline_output(&prose).malformed);
    }

    #[test]
    fn prose_without_structure_is_malformed_not_an_error() {
        let out = parse_baseline_output("How are you feeling today?");
        assert!(out.malformed);
        assert_eq!(out.raw_text, "How are you feeling today?");
        let missing_done = parse_baseline_output(r#"{"next_question":"x"}"#);
        assert!(missing_done.malformed);
    }

    #[test]
    fn early_done_still_parses() {
        let out = parse_baseline_output(r#"{"next_question":"Bye","extracted":{},"done":true}"#);
        assert!(out.done && !out.malformed);
    }
}
