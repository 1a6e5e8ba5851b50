//! Simulated patients: a deterministic scripted patient that answers from a
//! ground-truth ledger, and persona patients that talk through the gateway.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::answer::AnswerValue;
use crate::eval::map_utterance_to_items;
use crate::form::{FormSpec, QuestionSpec, QuestionType, ValueKind};
use crate::gateway::{CallTag, ChatMessage, ChatRequest, Gateway, GatewayError};
use crate::prompts::{self, Fact, PatientStyle, PersonaContext};
use crate::question_gen::spoken_list;
use crate::transcript::{Speaker, Turn, TurnKind};

pub const MEMORY_TURNS: usize = 6;
pub const DIGRESSION: &str = "My grandson visited yesterday, and we spent the afternoon talking about his garden.";
pub const REPEAT_REQUEST: &str = "Could you repeat the question?";
const DIGRESS_EVERY: usize = 5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PatientError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("no ground-truth answer for question `{0}`")]
    UncoveredId(String),
    #[error("no question to answer")]
    EmptyQuestion,
}

/// Question text without its closing punctuation, as used in "Regarding ...:" phrases.
pub fn lead(question_text: &str) -> &str {
    question_text.trim().trim_end_matches(['?', '.']).trim_end()
}

/// Plain answer phrase for a ground-truth value.
pub fn phrase_answer(q: &QuestionSpec, value: &AnswerValue) -> String {
    let label = |id: &str| q.option(id).map(|o| o.label.clone()).unwrap_or_else(|| id.to_string());
    match value {
        AnswerValue::Chosen(id) => label(id),
        AnswerValue::ChosenMany(ids) => {
            let labels: Vec<String> =
                q.options.iter().filter(|o| ids.contains(&o.id)).map(|o| o.label.clone()).collect();
            let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
            spoken_list(&refs, "and")
        }
        AnswerValue::Blanks(values) => q
            .blanks
            .iter()
            .filter_map(|b| values.get(&b.id).map(|v| v.to_string()))
            .collect::<Vec<_>>()
            .join(", "),
        AnswerValue::Refused => "I'd prefer not to say".to_string(),
        AnswerValue::NoIntent => "I'm not sure".to_string(),
    }
}

/// Default spoken segment for one item.
pub fn default_segment(q: &QuestionSpec, value: &AnswerValue) -> String {
    format!("Regarding {}: {}.", lead(&q.text), phrase_answer(q, value))
}

/// Per-form sentence overrides keyed by `qid=option_id` or `qid`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhrasingTable(pub BTreeMap<String, String>);

impl PhrasingTable {
    pub fn lookup(&self, q: &QuestionSpec, value: &AnswerValue) -> Option<&str> {
        if let AnswerValue::Chosen(id) = value {
            if let Some(s) = self.0.get(&format!("{}={id}", q.id)) {
                return Some(s);
            }
        }
        self.0.get(&q.id).map(String::as_str)
    }
}

/// Reply naming every covered item's ground-truth answer.
pub fn scripted_respond(
    form: &FormSpec,
    ledger: &BTreeMap<String, AnswerValue>,
    covered_ids: &[String],
    table: &PhrasingTable,
) -> Result<String, PatientError> {
    let mut parts = Vec::new();
    for id in covered_ids {
        let q = form.question(id).ok_or_else(|| PatientError::UncoveredId(id.clone()))?;
        let value = ledger.get(id).ok_or_else(|| PatientError::UncoveredId(id.clone()))?;
        parts.push(table.lookup(q, value).map(str::to_string).unwrap_or_else(|| default_segment(q, value)));
    }
    Ok(parts.join(" "))
}

/// Items a system turn asks about: its declared coverage, or text mapping when
/// the producer declared none (end-to-end baseline).
pub fn covered_by(turn: &Turn, form: &FormSpec) -> Vec<String> {
    if turn.covered_ids.is_empty() {
        map_utterance_to_items(&turn.text, form)
    } else {
        turn.covered_ids.clone()
    }
}

/// Anything that can answer the last system turn of a transcript.
pub trait Patient: Send + Sync {
    fn reply(
        &self,
        form: &FormSpec,
        turns: &[Turn],
        gateway: &Gateway,
        session_id: Option<&str>,
    ) -> Result<String, PatientError>;
}

/// Deterministic patient answering from a ledger; optionally digresses.
#[derive(Debug, Clone)]
pub struct ScriptedPatient {
    pub ledger: BTreeMap<String, AnswerValue>,
    pub table: PhrasingTable,
    pub digress: bool,
}

impl ScriptedPatient {
    pub fn new(ledger: BTreeMap<String, AnswerValue>, table: PhrasingTable) -> Self {
        ScriptedPatient { ledger, table, digress: false }
    }

    pub fn digressing(mut self) -> Self {
        self.digress = true;
        self
    }

    /// Digresses on a first ask when the running count of distinct asked items
    /// crosses a multiple of five, never twice in a row, never on free text.
    fn should_digress(&self, form: &FormSpec, turns: &[Turn], current: &Turn, covered: &[String]) -> bool {
        if !self.digress || current.kind != TurnKind::Question {
            return false;
        }
        let free_text = covered.iter().filter_map(|id| form.question(id)).any(|q| {
            q.qtype == QuestionType::FillBlank && q.blanks.iter().any(|b| b.value_kind == ValueKind::FreeText)
        });
        if free_text {
            return false;
        }
        let earlier = &turns[..turns.len() - 1];
        if earlier.iter().rev().find(|t| t.speaker == Speaker::Patient).is_some_and(|t| t.text == DIGRESSION) {
            return false;
        }
        let before: BTreeSet<String> =
            earlier.iter().filter(|t| t.is_question()).flat_map(|t| covered_by(t, form)).collect();
        let mut after = before.clone();
        after.extend(covered.iter().cloned());
        after.len() / DIGRESS_EVERY > before.len() / DIGRESS_EVERY
    }
}

impl Patient for ScriptedPatient {
    fn reply(&self, form: &FormSpec, turns: &[Turn], _: &Gateway, _: Option<&str>) -> Result<String, PatientError> {
        let current = turns.last().filter(|t| t.speaker == Speaker::System).ok_or(PatientError::EmptyQuestion)?;
        let covered: Vec<String> =
            covered_by(current, form).into_iter().filter(|id| self.ledger.contains_key(id)).collect();
        if covered.is_empty() {
            return Ok(REPEAT_REQUEST.to_string());
        }
        if self.should_digress(form, turns, current, &covered) {
            return Ok(DIGRESSION.to_string());
        }
        scripted_respond(form, &self.ledger, &covered, &self.table)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaSpec {
    pub name: String,
    pub age: u32,
    pub occupation: String,
    pub residence: String,
    pub trait_profile: String,
    pub style: PatientStyle,
    pub few_shots: Vec<(String, String)>,
}

impl PersonaSpec {
    pub fn background(&self) -> String {
        format!("{}, {} years old, {}, lives {}.", self.name, self.age, self.occupation, self.residence)
    }

    pub fn system_prompt(&self, facts: &[Fact]) -> String {
        let context = PersonaContext { style: self.style, facts: facts.to_vec() };
        prompts::persona_system(
            &self.background(),
            &self.trait_profile,
            &self.few_shots,
            &serde_json::to_string(&context).expect("context serializes"),
        )
    }
}

fn shots(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
    pairs.iter().map(|(q, a)| (q.to_string(), a.to_string())).collect()
}

/// The three standard personas: brief, talkative and easily side-tracked.
pub fn make_personas() -> Vec<PersonaSpec> {
    vec![
        PersonaSpec {
            name: "Margaret Hill".into(),
            age: 68,
            occupation: "retired accountant".into(),
            residence: "alone in a flat near the hospital".into(),
            trait_profile: "Brief and to the point; answers exactly what is asked in a few words.".into(),
            style: PatientStyle::Concise,
            few_shots: shots(&[
                ("How is your appetite?", "Normal."),
                ("Do you smoke?", "No."),
                ("How many hours do you sleep?", "About seven hours."),
            ]),
        },
        PersonaSpec {
            name: "Robert Chen".into(),
            age: 59,
            occupation: "bus driver on sick leave".into(),
            residence: "with his wife in a suburban house".into(),
            trait_profile: "Talkative; thinks aloud and adds context before getting to the answer.".into(),
            style: PatientStyle::Verbose,
            few_shots: shots(&[
                ("How is your appetite?", "Well, let me think. Since the operation I eat about the same as before, so normal I'd say."),
                ("Do you smoke?", "I used to, years ago, but no, I don't smoke now."),
                ("How many hours do you sleep?", "It varies, but most nights I get around seven hours."),
            ]),
        },
        PersonaSpec {
            name: "Dorothy Evans".into(),
            age: 81,
            occupation: "retired seamstress".into(),
            residence: "with her daughter's family".into(),
            trait_profile: "Friendly but easily side-tracked; drifts into family stories before answering.".into(),
            style: PatientStyle::Vague,
            few_shots: shots(&[
                ("How is your appetite?", "Oh, my daughter cooks so well. Anyway, it's normal."),
                ("Do you smoke?", "My late husband did. I never have, no."),
                ("How many hours do you sleep?", "The birds wake me early, but I'd say seven hours."),
            ]),
        },
    ]
}

/// Facts a persona knows: one per ledger entry, phrased plainly.
pub fn ledger_facts(form: &FormSpec, ledger: &BTreeMap<String, AnswerValue>) -> Vec<Fact> {
    form.questions
        .iter()
        .filter_map(|q| ledger.get(&q.id).map(|v| Fact { question: q.text.clone(), answer: phrase_answer(q, v) }))
        .collect()
}

/// Gateway-backed patient with a short memory of the conversation.
#[derive(Debug, Clone)]
pub struct PersonaPatient {
    pub persona: PersonaSpec,
    pub facts: Vec<Fact>,
}

impl PersonaPatient {
    pub fn new(persona: PersonaSpec, form: &FormSpec, ledger: &BTreeMap<String, AnswerValue>) -> Self {
        PersonaPatient { facts: ledger_facts(form, ledger), persona }
    }

    /// Request for answering `turns.last()`, carrying at most the last
    /// [`MEMORY_TURNS`] earlier turns as alternating messages.
    pub fn request(&self, turns: &[Turn], session_id: Option<&str>) -> Result<ChatRequest, PatientError> {
        let (current, earlier) = turns.split_last().ok_or(PatientError::EmptyQuestion)?;
        if current.speaker != Speaker::System || current.text.trim().is_empty() {
            return Err(PatientError::EmptyQuestion);
        }
        let window = &earlier[earlier.len().saturating_sub(MEMORY_TURNS)..];
        let mut messages: Vec<ChatMessage> = Vec::new();
        for t in window {
            let msg = match t.speaker {
                Speaker::System => ChatMessage::user(&t.text),
                Speaker::Patient => ChatMessage::assistant(&t.text),
            };
            match messages.last() {
                None if msg.role != crate::gateway::Role::User => {}
                Some(prev) if prev.role == msg.role => {}
                _ => messages.push(msg),
            }
        }
        if messages.last().is_some_and(|m| m.role == crate::gateway::Role::User) {
            messages.pop();
        }
        messages.push(ChatMessage::user(&current.text));
        let mut request = ChatRequest::new(CallTag::Patient, self.persona.system_prompt(&self.facts), "");
        request.messages = messages;
        Ok(request.with_session(session_id))
    }
}

impl Patient for PersonaPatient {
    fn reply(
        &self,
        _: &FormSpec,
        turns: &[Turn],
        gateway: &Gateway,
        session_id: Option<&str>,
    ) -> Result<String, PatientError> {
        let request = self.request(turns, session_id)?;
        Ok(gateway.complete(&request)?.text.trim().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn ask(ids: &[&str], kind: TurnKind) -> Turn {
        let mut t = Turn::system(kind, "question", 0.0);
        t.covered_ids = ids.iter().map(|s| s.to_string()).collect();
        t
    }

    #[test]
    fn phrases_every_answer_kind() {
        let form = fixtures::form3();
        let ledger = fixtures::form3_ledger();
        let weight = form.question("weight").unwrap();
        assert_eq!(default_segment(weight, &ledger["weight"]), "Regarding What is your body weight today: 70.5 kg.");
        let method = form.question("quit_method").unwrap();
        assert!(phrase_answer(method, &ledger["quit_method"]).contains(" and "));
        assert_eq!(phrase_answer(weight, &AnswerValue::Refused), "I'd prefer not to say");
    }

    #[test]
    fn phrasing_table_overrides_default() {
        let form = fixtures::form3();
        let ledger = fixtures::form3_ledger();
        let table = fixtures::phrasing_table(&form.form_id);
        let reply = scripted_respond(&form, &ledger, &["smoke".into()], &table).unwrap();
        assert_eq!(reply, "I quit smoking.");
    }

    #[test]
    fn uncovered_id_is_an_error() {
        let form = fixtures::form3();
        let ledger = BTreeMap::new();
        let err = scripted_respond(&form, &ledger, &["smoke".into()], &PhrasingTable::default()).unwrap_err();
        assert_eq!(err, PatientError::UncoveredId("smoke".into()));
    }

    #[test]
    fn digression_every_fifth_item_never_twice() {
        let form = fixtures::form2();
        let ledger = fixtures::form2_ledger();
        let gw = Gateway::new(std::sync::Arc::new(crate::gateway::ScriptedBackend::queue(vec![])));
        let p = ScriptedPatient::new(ledger, PhrasingTable::default()).digressing();
        let mut turns = vec![ask(&["qol_01", "qol_02", "qol_03"], TurnKind::Question)];
        assert_ne!(p.reply(&form, &turns, &gw, None).unwrap(), DIGRESSION);
        turns.push(Turn::patient("ok", 0.0));
        turns.push(ask(&["qol_04", "qol_05"], TurnKind::Question));
        assert_eq!(p.reply(&form, &turns, &gw, None).unwrap(), DIGRESSION);
        turns.push(Turn::patient(DIGRESSION, 0.0));
        turns.push(ask(&["qol_04", "qol_05"], TurnKind::Reask));
        assert_ne!(p.reply(&form, &turns, &gw, None).unwrap(), DIGRESSION);
    }

    #[test]
    fn persona_memory_is_bounded_and_alternating() {
        let form = fixtures::form3();
        let p = PersonaPatient::new(make_personas().remove(0), &form, &fixtures::form3_ledger());
        let mut turns = Vec::new();
        for i in 0..10 {
            turns.push(Turn::system(TurnKind::Question, format!("q{i}"), 0.0));
            turns.push(Turn::patient(format!("a{i}"), 0.0));
        }
        turns.push(Turn::system(TurnKind::Question, "last", 0.0));
        let req = p.request(&turns, None).unwrap();
        assert!(req.validate().is_ok());
        assert!(req.messages.len() <= MEMORY_TURNS + 1);
        assert_eq!(req.last_user_text(), "last");
        assert_eq!(req.tag, CallTag::Patient);
        assert!(p.request(&[Turn::system(TurnKind::Question, " ", 0.0)], None).is_err());
    }

    #[test]
    fn three_personas_with_shots() {
        let ps = make_personas();
        assert_eq!(ps.len(), 3);
        assert!(ps.iter().all(|p| p.few_shots.len() == 3));
        assert!(ps[0].trait_profile.contains("Brief"));
        assert!(ps[1].trait_profile.contains("Talkative"));
        assert!(ps[2].trait_profile.contains("side-tracked"));
    }
}
