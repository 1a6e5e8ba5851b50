use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::answer::AnswerValue;
pub use crate::prompts::Speaker;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Modular,
    Baseline,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Modular => "modular",
            Mode::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnKind {
    Question,
    Reask,
    /// Fixed goodbye after the last answer; not a question turn.
    Closing,
    Reply,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub kind: TurnKind,
    pub text: String,
    pub ts: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub covered_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_id: Option<String>,
    /// Model time spent producing this turn (system turns only).
    #[serde(default)]
    pub latency_s: f64,
    /// Answers recorded as a result of this patient reply.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub recorded: BTreeMap<String, AnswerValue>,
    /// Baseline only: the model output could not be parsed.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub malformed: bool,
}

impl Turn {
    pub fn system(kind: TurnKind, text: impl Into<String>, ts: f64) -> Self {
        Turn {
            speaker: Speaker::System,
            kind,
            text: text.into(),
            ts,
            covered_ids: Vec::new(),
            group_id: None,
            latency_s: 0.0,
            recorded: BTreeMap::new(),
            malformed: false,
        }
    }

    pub fn patient(text: impl Into<String>, ts: f64) -> Self {
        Turn { speaker: Speaker::Patient, ..Turn::system(TurnKind::Reply, text, ts) }
    }

    /// True for system turns that pose a question (closing excluded).
    pub fn is_question(&self) -> bool {
        self.speaker == Speaker::System && matches!(self.kind, TurnKind::Question | TurnKind::Reask)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortReason {
    TurnCap,
    Gateway,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    InProgress,
    Completed,
    Aborted { reason: AbortReason },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub session_id: String,
    pub form_id: String,
    pub mode: Mode,
    pub turns: Vec<Turn>,
    pub outcome: Outcome,
    /// Members of the first planned group (modular only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub first_group: Vec<String>,
    /// Items given up on after the re-ask budget ran out.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exhausted: Vec<String>,
}

impl Transcript {
    pub fn system_turns(&self) -> usize {
        self.turns.iter().filter(|t| t.is_question()).count()
    }

    pub fn is_done(&self) -> bool {
        self.outcome == Outcome::Completed
    }

    /// Final answers: replaying every recorded value, latest wins.
    pub fn final_answers(&self) -> BTreeMap<String, AnswerValue> {
        let mut out = BTreeMap::new();
        for t in &self.turns {
            for (k, v) in &t.recorded {
                out.insert(k.clone(), v.clone());
            }
        }
        out
    }
}
