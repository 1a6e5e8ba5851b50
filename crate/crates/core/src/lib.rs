//! Form-driven medical follow-up dialogue engine.
//!
//! A follow-up form is clustered into groups of related questions, each group
//! is asked as one conversational utterance, the patient's reply is turned into
//! structured answers with retrieval-grounded extraction, and a rule-based flow
//! controller decides whether to re-ask, follow a triggered branch, or move on.
//! An end-to-end single-prompt baseline and an evaluation harness sit next to it.

pub mod answer;
pub mod baseline;
pub mod clock;
pub mod clustering;
pub mod eval;
pub mod extract;
pub mod fixtures;
pub mod flow;
pub mod form;
pub mod gateway;
pub mod kb;
pub mod patient;
pub mod prompts;
pub mod question_gen;
pub mod service;
pub mod session;
pub mod sim;
pub mod simulate;
pub mod text;
pub mod transcript;
pub mod wire;

pub use answer::{AnswerValue, BlankValue};
pub use clock::{Clock, LogicalClock, SystemClock};
pub use form::{
    form_stats, parse_form, reachable_set, serialize_form, validate_form, FormError, FormSpec, FormStats,
    QuestionSpec, QuestionType, ValidationReport,
};
pub use gateway::{CallTag, ChatRequest, ChatResponse, Gateway, GatewayConfig, GatewayError, MeterLedger};
