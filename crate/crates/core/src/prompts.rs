//! Versioned prompt templates. Every user message starts with a `TASK:` line
//! followed by an `INPUT:` line holding the structured payload as compact JSON,
//! so the same request is readable by a hosted model and by the offline
//! rule-based model.

use serde::{Deserialize, Serialize};

use crate::form::{FormSpec, QuestionSpec, QuestionType, TriggerCondition};
use crate::gateway::{CallTag, ChatRequest};
pub use crate::wire::answer_to_model_json;

pub const PROMPT_VERSION: &str = "followup-prompts/1";
pub const DEFAULT_LOCALE: &str = "en";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Abstract,
    Propose,
    Compose,
    Reask,
    Extract,
    Verbalize,
}

impl Task {
    fn as_str(self) -> &'static str {
        match self {
            Task::Abstract => "abstract",
            Task::Propose => "propose",
            Task::Compose => "compose",
            Task::Reask => "reask",
            Task::Extract => "extract",
            Task::Verbalize => "verbalize",
        }
    }

    fn parse(s: &str) -> Option<Task> {
        Some(match s {
            "abstract" => Task::Abstract,
            "propose" => Task::Propose,
            "compose" => Task::Compose,
            "reask" => Task::Reask,
            "extract" => Task::Extract,
            "verbalize" => Task::Verbalize,
            _ => return None,
        })
    }
}

/// Question as shown to the model: the form entry without its skip logic.
pub fn prompt_item(q: &QuestionSpec) -> QuestionSpec {
    let mut item = q.clone();
    item.triggers.clear();
    item
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbstractInput {
    pub items: Vec<QuestionSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProposeInput {
    pub summary: String,
    pub cap: usize,
    pub items: Vec<QuestionSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComposeInput {
    pub locale: String,
    pub qtype: QuestionType,
    pub items: Vec<QuestionSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReaskInput {
    pub locale: String,
    pub previous: String,
    pub reply: String,
    pub items: Vec<QuestionSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShotView {
    pub question: String,
    pub response: String,
    pub result: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractInput {
    pub qtype: QuestionType,
    pub items: Vec<QuestionSpec>,
    pub examples: Vec<ShotView>,
    pub question: String,
    pub response: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatientStyle {
    Concise,
    Verbose,
    Vague,
}

/// One thing the simulated patient intends to say: the question and the answer phrase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fact {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerbalizeInput {
    pub style: PatientStyle,
    pub facts: Vec<Fact>,
}

/// Embedded in a persona system prompt: how to speak and what to say.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PersonaContext {
    pub style: PatientStyle,
    pub facts: Vec<Fact>,
}

const ABSTRACT_SYSTEM: &str = "You help prepare a medical follow-up questionnaire for a conversational interview. \
Read the questions in INPUT and describe in one or two sentences what they have in common. \
Reply with the description only.";

const PROPOSE_SYSTEM: &str = "You group questionnaire items so related items can be asked together in one turn. \
Use the summary and the items in INPUT. Every item id must appear in exactly one group, no group may exceed \
the given cap, and groups must keep related topics together. \
Reply with only a bracketed list of lists of item ids, for example [[q1,q2],[q3]].";

const COMPOSE_SYSTEM: &str = "You are a friendly nurse conducting a follow-up call. Turn the questionnaire items in \
INPUT into one natural spoken question. For choice items read every option label out verbatim. \
For fill-in items ask for the value and mention the unit phrase. Never mention item or option ids. \
Reply with the question only, in the language given by the locale.";

const REASK_SYSTEM: &str = "You are a friendly nurse conducting a follow-up call. The patient's last reply did not \
answer the items in INPUT. Briefly acknowledge the reply and ask again about those items only, in different \
words from the previous question. Read choice options verbatim and never mention ids. Reply with the question only.";

const EXTRACT_SYSTEM_CHOICE: &str = "Extract the patient's answers from the response in INPUT. For each item reply \
with the id of the chosen option (single choice) or an array of option ids (multiple choice). Use \"no_intent\" \
when the response does not answer the item and \"refused\" when the patient declines to answer. \
Follow the worked examples. Reply with one JSON object keyed by item id and nothing else.";

const EXTRACT_SYSTEM_BLANK: &str = "Extract the values the patient gave for the fill-in items in INPUT. For each item \
reply with an object mapping blank id to the value as spoken, keeping numbers and units, without copying the \
whole sentence. Use \"no_intent\" when the response does not answer the item and \"refused\" when the patient \
declines. Follow the worked examples. Reply with one JSON object keyed by item id and nothing else.";

pub fn persona_system(background: &str, traits: &str, shots: &[(String, String)], input: &str) -> String {
    let mut s = format!(
        "You are a patient taking part in a follow-up call.\nBackground: {background}\nSpeaking style: {traits}\nExamples of how you talk:\n"
    );
    for (q, a) in shots {
        s.push_str(&format!("Nurse: {q}\nYou: {a}\n"));
    }
    s.push_str("Answer only with what the facts below say; stay in character.\n");
    s.push_str(&format!("INPUT: {input}"));
    s
}

fn user_message<T: Serialize>(task: Task, input: &T) -> String {
    format!(
        "TASK: {}\nINPUT: {}",
        task.as_str(),
        serde_json::to_string(input).expect("prompt input serializes")
    )
}

/// Splits a user message into its task and raw INPUT JSON.
pub fn parse_task(text: &str) -> Option<(Task, &str)> {
    let mut task = None;
    let mut input = None;
    for line in text.lines() {
        if let Some(t) = line.strip_prefix("TASK: ") {
            task = Task::parse(t.trim());
        } else if let Some(i) = line.strip_prefix("INPUT: ") {
            input = Some(i);
        }
    }
    Some((task?, input?))
}

/// Extracts the INPUT payload embedded in a system prompt.
pub fn system_input(text: &str) -> Option<&str> {
    text.lines().find_map(|l| l.strip_prefix("INPUT: "))
}

pub fn abstract_request(items: &[QuestionSpec]) -> ChatRequest {
    let input = AbstractInput { items: items.iter().map(prompt_item).collect() };
    ChatRequest::new(CallTag::Clustering, ABSTRACT_SYSTEM, user_message(Task::Abstract, &input))
}

pub fn propose_request(summary: &str, items: &[QuestionSpec], cap: usize) -> ChatRequest {
    let input = ProposeInput { summary: summary.to_string(), cap, items: items.iter().map(prompt_item).collect() };
    ChatRequest::new(CallTag::Clustering, PROPOSE_SYSTEM, user_message(Task::Propose, &input))
}

pub fn compose_request(qtype: QuestionType, items: &[QuestionSpec], locale: &str) -> ChatRequest {
    let input = ComposeInput { locale: locale.to_string(), qtype, items: items.iter().map(prompt_item).collect() };
    ChatRequest::new(CallTag::QuestionGen, COMPOSE_SYSTEM, user_message(Task::Compose, &input))
}

pub fn reask_request(items: &[QuestionSpec], previous: &str, reply: &str, locale: &str) -> ChatRequest {
    let input = ReaskInput {
        locale: locale.to_string(),
        previous: previous.to_string(),
        reply: reply.to_string(),
        items: items.iter().map(prompt_item).collect(),
    };
    ChatRequest::new(CallTag::QuestionGen, REASK_SYSTEM, user_message(Task::Reask, &input))
}

pub fn extract_request(
    qtype: QuestionType,
    items: &[QuestionSpec],
    examples: Vec<ShotView>,
    question: &str,
    response: &str,
) -> ChatRequest {
    let system = match qtype {
        QuestionType::FillBlank => EXTRACT_SYSTEM_BLANK,
        _ => EXTRACT_SYSTEM_CHOICE,
    };
    let input = ExtractInput {
        qtype,
        items: items.iter().map(prompt_item).collect(),
        examples,
        question: question.to_string(),
        response: response.to_string(),
    };
    ChatRequest::new(CallTag::Extraction, system, user_message(Task::Extract, &input))
}

pub fn verbalize_request(persona_system_text: String, input: &VerbalizeInput) -> ChatRequest {
    ChatRequest::new(CallTag::KbBuild, persona_system_text, user_message(Task::Verbalize, input))
}

// ---------------------------------------------------------------------------
// End-to-end baseline prompt

pub const BASELINE_INSTRUCTIONS: &str = "You are conducting a medical follow-up interview with a patient on behalf \
of the care team. The follow-up form is given below as a JSON document together with its branching rules.\n\
Instructions:\n\
1. Read the whole form, including every question's options and its skip and nested logic.\n\
2. Track the dialogue history and work out which questions are already answered.\n\
3. Ask exactly one next question per turn, in form order, using the question wording and reading the options.\n\
4. Extract the patient's answers: option ids for choice questions, values with units for fill-in questions.\n\
5. Only ask conditional questions when their branching rule is satisfied.\n\
6. When every applicable question is answered, set done to true and thank the patient.\n\
Every turn, reply with only this JSON object:\n\
{\"next_question\": \"<what you say to the patient>\", \"extracted\": {\"<question id>\": <answer>}, \"done\": <true|false>}\n\
where <answer> is an option id string, an array of option ids, or an object mapping blank id to value. \
Report all answers extracted so far in \"extracted\".";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    System,
    Patient,
}

/// One rendered history line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryLine {
    pub speaker: Speaker,
    pub text: String,
}

pub const FORM_HEADER: &str = "FORM JSON:";
pub const RULES_HEADER: &str = "Branching rules:";
pub const HISTORY_HEADER: &str = "DIALOGUE HISTORY:";
pub const SKIP_PREFIX: &str = "Skip logic:";

fn condition_text(parent: &str, when: &TriggerCondition) -> String {
    match when {
        TriggerCondition::Equals { option_id } => format!("{parent} is answered \"{option_id}\""),
        TriggerCondition::Contains { option_id } => format!("{parent} includes \"{option_id}\""),
        TriggerCondition::Answered => format!("{parent} is answered"),
        TriggerCondition::MatchesText { pattern } => format!("{parent} mentions \"{pattern}\""),
    }
}

/// The form in the unified textual structure: compact JSON plus one line per trigger.
pub fn render_form_text(form: &FormSpec) -> String {
    let mut s = format!(
        "{FORM_HEADER}\n{}\n{RULES_HEADER}\n",
        serde_json::to_string(form).expect("form serializes")
    );
    for q in &form.questions {
        for t in &q.triggers {
            s.push_str(&format!(
                "- {SKIP_PREFIX} if {} then ask {}; otherwise skip them.\n",
                condition_text(&q.id, &t.when),
                t.then.join(", ")
            ));
        }
    }
    s
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn render_history(history: &[HistoryLine]) -> String {
    let mut s = format!("{HISTORY_HEADER}\n");
    if history.is_empty() {
        s.push_str("(no turns yet)\n");
    }
    for line in history {
        let who = match line.speaker {
            Speaker::System => "Assistant",
            Speaker::Patient => "Patient",
        };
        s.push_str(&format!("{who}: {}\n", one_line(&line.text)));
    }
    s
}

/// Instruction block as the system text, then the form, then the history.
pub fn build_baseline_prompt(form: &FormSpec, history: &[HistoryLine], instructions: &str) -> ChatRequest {
    let user = format!("{}\n{}", render_form_text(form), render_history(history));
    let mut req = ChatRequest::new(CallTag::Baseline, instructions, user);
    req.max_output_tokens = 1024;
    req
}

/// Recovers form and history from a baseline prompt built by [`build_baseline_prompt`].
pub fn parse_baseline_prompt(user_text: &str) -> Option<(FormSpec, Vec<HistoryLine>)> {
    let mut lines = user_text.lines();
    lines.by_ref().find(|l| *l == FORM_HEADER)?;
    let form = FormSpec::from_json_unvalidated(lines.next()?).ok()?;
    lines.by_ref().find(|l| *l == HISTORY_HEADER)?;
    let history = lines
        .filter_map(|l| {
            if let Some(t) = l.strip_prefix("Assistant: ") {
                Some(HistoryLine { speaker: Speaker::System, text: t.to_string() })
            } else {
                l.strip_prefix("Patient: ")
                    .map(|t| HistoryLine { speaker: Speaker::Patient, text: t.to_string() })
            }
        })
        .collect();
    Some((form, history))
}
