//! Offline rule-based model. It reads the structured INPUT embedded in every
//! prompt (and the form and history of the end-to-end prompt) and answers the
//! way a well-behaved model would, so whole sessions run without a network.
//! Few-shot examples are ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;
use std::time::Duration;

use serde_json::{json, Map, Value};

use crate::answer::{AnswerValue, BlankValue};
use crate::extract::{first_numeral, validate_answer};
use crate::form::{reachable_in_order, FormSpec, QuestionSpec, QuestionType, ValueKind};
use crate::gateway::{BackendError, BackendReply, CallTag, ChatBackend, ChatRequest};
use crate::patient::lead;
use crate::prompts::{
    self, AbstractInput, ComposeInput, ExtractInput, Fact, PatientStyle, PersonaContext, ProposeInput, ReaskInput,
    Speaker, Task, VerbalizeInput,
};
use crate::question_gen::template_utterance;
use crate::text;

pub const REASK_PREFIX: &str = "Sorry, I didn't quite catch that. ";
pub const CLOSING: &str = "Thank you, that is everything I needed. Take care.";
pub const VERBOSE_PREFIX: &str = "Let me think about that for a moment. ";
pub const VAGUE_PREFIX: &str =
    "My grandson visited yesterday, and we spent the afternoon talking about his garden. Anyway, ";
pub const UNCLEAR_REPLY: &str = "Sorry, could you repeat the question?";
/// Coverage of a fact's question words needed for a persona to volunteer it.
pub const FACT_RELEVANCE: f64 = 0.35;
/// Asks per item before the end-to-end simulation gives up on it.
pub const BASELINE_MAX_ASKS: usize = 3;
const REFUSAL: &str = "prefer not to say";

#[derive(Debug, Clone, Copy, Default)]
pub struct SimModel;

impl ChatBackend for SimModel {
    fn call(&self, request: &ChatRequest, _: Duration) -> Result<BackendReply, BackendError> {
        let text = respond(request).ok_or_else(|| BackendError::Malformed("sim model cannot read prompt".into()))?;
        Ok(BackendReply { text, prompt_tokens: None, completion_tokens: None, latency: Some(0.0) })
    }

    fn name(&self) -> &str {
        "sim"
    }
}

fn respond(request: &ChatRequest) -> Option<String> {
    let user = request.last_user_text();
    match request.tag {
        CallTag::Baseline => baseline_turn(user),
        CallTag::Patient => {
            let context: PersonaContext = serde_json::from_str(prompts::system_input(&request.system_text)?).ok()?;
            Some(persona_reply(&context, user))
        }
        _ => {
            let (task, input) = prompts::parse_task(user)?;
            match task {
                Task::Abstract => {
                    let i: AbstractInput = serde_json::from_str(input).ok()?;
                    Some(summarize(&i.items))
                }
                Task::Propose => {
                    let i: ProposeInput = serde_json::from_str(input).ok()?;
                    Some(propose(&i.items, i.cap))
                }
                Task::Compose => {
                    let i: ComposeInput = serde_json::from_str(input).ok()?;
                    Some(template_utterance(&i.items.iter().collect::<Vec<_>>()))
                }
                Task::Reask => {
                    let i: ReaskInput = serde_json::from_str(input).ok()?;
                    Some(format!("{REASK_PREFIX}{}", template_utterance(&i.items.iter().collect::<Vec<_>>())))
                }
                Task::Extract => {
                    let i: ExtractInput = serde_json::from_str(input).ok()?;
                    let refs: Vec<&QuestionSpec> = i.items.iter().collect();
                    let out: Map<String, Value> = rule_extract(&refs, &i.response)
                        .iter()
                        .map(|(k, v)| (k.clone(), prompts::answer_to_model_json(v)))
                        .collect();
                    Some(Value::Object(out).to_string())
                }
                Task::Verbalize => {
                    let i: VerbalizeInput = serde_json::from_str(input).ok()?;
                    Some(verbalize(i.style, &i.facts))
                }
            }
        }
    }
}

fn summarize(items: &[QuestionSpec]) -> String {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for q in items {
        for w in text::content_words(&q.text) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let top: Vec<String> = ranked.into_iter().take(5).map(|(w, _)| w).collect();
    format!("These questions cover {}.", top.join(", "))
}

/// Consecutive chunks of near-equal size, as few as the cap allows.
fn propose(items: &[QuestionSpec], cap: usize) -> String {
    let n = items.len();
    let cap = cap.max(1);
    let groups = n.div_ceil(cap).max(1);
    let (base, extra) = (n / groups, n % groups);
    let mut out = Vec::new();
    let mut at = 0;
    for g in 0..groups {
        let size = base + usize::from(g < extra);
        let ids: Vec<&str> = items[at..at + size].iter().map(|q| q.id.as_str()).collect();
        out.push(format!("[{}]", ids.join(",")));
        at += size;
    }
    format!("[{}]", out.join(","))
}

fn segment(lead_text: &str, fact_answer: &str) -> String {
    format!("Regarding {lead_text}: {fact_answer}.")
}

fn verbalize(style: PatientStyle, facts: &[Fact]) -> String {
    let body: Vec<String> = facts.iter().map(|f| segment(lead(&f.question), &f.answer)).collect();
    let body = body.join(" ");
    match style {
        PatientStyle::Concise => body,
        PatientStyle::Verbose => format!("{VERBOSE_PREFIX}{body}"),
        PatientStyle::Vague => format!("{VAGUE_PREFIX}{body}"),
    }
}

fn persona_reply(context: &PersonaContext, question: &str) -> String {
    let asked = text::content_words(question);
    let relevant: Vec<Fact> = context
        .facts
        .iter()
        .filter(|f| text::coverage(&asked, &text::content_words(&f.question)) >= FACT_RELEVANCE)
        .cloned()
        .collect();
    if relevant.is_empty() {
        return UNCLEAR_REPLY.to_string();
    }
    verbalize(context.style, &relevant)
}

// ---------------------------------------------------------------------------
// Rule extraction

fn earliest_end(lower: &str, from: usize) -> usize {
    let next_header = lower[from..].find("regarding ").map(|i| from + i);
    let sentence = lower[from..]
        .char_indices()
        .find(|&(i, c)| c == '.' && lower[from + i + 1..].starts_with(char::is_whitespace))
        .map(|(i, _)| from + i);
    [next_header, sentence].into_iter().flatten().min().unwrap_or(lower.len())
}

fn clean(s: &str) -> &str {
    s.trim().trim_end_matches('.').trim()
}

/// Answer text for each item: after its "Regarding <question>:" header, or the
/// unclaimed remainder when exactly one item has no header.
fn segments(items: &[&QuestionSpec], response: &str) -> BTreeMap<String, String> {
    let lower = response.to_ascii_lowercase();
    let mut out = BTreeMap::new();
    let mut claimed: Vec<Range<usize>> = Vec::new();
    let mut missing = Vec::new();
    for q in items {
        let header = format!("regarding {}:", lead(&q.text).to_ascii_lowercase());
        match lower.find(&header) {
            Some(at) => {
                let start = at + header.len();
                let end = earliest_end(&lower, start);
                claimed.push(at..end);
                out.insert(q.id.clone(), clean(&response[start..end]).to_string());
            }
            None => missing.push(q.id.clone()),
        }
    }
    if let [only] = missing.as_slice() {
        if claimed.is_empty() {
            out.insert(only.clone(), clean(response).to_string());
        } else {
            claimed.sort_by_key(|r| r.start);
            let mut rest = String::new();
            let mut at = 0;
            for r in &claimed {
                if r.start > at {
                    rest.push_str(&response[at..r.start]);
                }
                at = at.max(r.end);
            }
            rest.push_str(&response[at.min(response.len())..]);
            let rest = clean(&rest).trim_start_matches('.').trim();
            if !rest.is_empty() {
                out.insert(only.clone(), rest.to_string());
            }
        }
    }
    out
}

fn word_bounded(hay: &str, at: usize, len: usize) -> bool {
    let before = hay[..at].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
    let after = hay[at + len..].chars().next().is_none_or(|c| !c.is_alphanumeric());
    before && after
}

/// Option ids whose labels occur as whole phrases, longest labels first,
/// without overlapping an earlier match.
fn matched_options(q: &QuestionSpec, seg: &str) -> BTreeSet<String> {
    let hay = seg.to_lowercase();
    let mut labels: Vec<(String, &str)> = q.options.iter().map(|o| (o.label.to_lowercase(), o.id.as_str())).collect();
    labels.sort_by(|a, b| b.0.len().cmp(&a.0.len()));
    let mut taken: Vec<Range<usize>> = Vec::new();
    let mut out = BTreeSet::new();
    for (label, id) in labels {
        if label.is_empty() {
            continue;
        }
        let mut from = 0;
        while let Some(i) = hay[from..].find(&label) {
            let at = from + i;
            let span = at..at + label.len();
            if word_bounded(&hay, at, label.len()) && !taken.iter().any(|t| t.start < span.end && span.start < t.end) {
                taken.push(span);
                out.insert(id.to_string());
            }
            from = at + label.len().max(1);
        }
    }
    out
}

fn number_text(seg: &str) -> Option<String> {
    let (value, range) = first_numeral(seg)?;
    let unit = seg[range.end..].split_whitespace().next().map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()));
    let number = crate::answer::format_number(value);
    Some(match unit {
        Some(u) if !u.is_empty() && !u.chars().next().is_some_and(|c| c.is_ascii_digit()) => format!("{number} {u}"),
        _ => number,
    })
}

fn extract_one(q: &QuestionSpec, seg: &str) -> AnswerValue {
    if seg.to_lowercase().contains(REFUSAL) {
        return AnswerValue::Refused;
    }
    match q.qtype {
        QuestionType::SingleChoice => {
            let found = matched_options(q, seg);
            match found.len() {
                1 => AnswerValue::Chosen(found.into_iter().next().unwrap()),
                _ => AnswerValue::NoIntent,
            }
        }
        QuestionType::MultiChoice => {
            let found = matched_options(q, seg);
            if found.is_empty() {
                AnswerValue::NoIntent
            } else {
                AnswerValue::ChosenMany(found)
            }
        }
        QuestionType::FillBlank => {
            let parts: Vec<&str> = if q.blanks.len() == 1 { vec![seg] } else { seg.split(',').collect() };
            if parts.len() != q.blanks.len() {
                return AnswerValue::NoIntent;
            }
            let mut values = BTreeMap::new();
            for (b, part) in q.blanks.iter().zip(parts) {
                let part = part.trim();
                let v = match b.value_kind {
                    ValueKind::FreeText if !part.is_empty() => BlankValue::Text(part.to_string()),
                    ValueKind::Number => match number_text(part) {
                        Some(t) => BlankValue::Text(t),
                        None => return AnswerValue::NoIntent,
                    },
                    _ => return AnswerValue::NoIntent,
                };
                values.insert(b.id.clone(), v);
            }
            AnswerValue::Blanks(values)
        }
    }
}

/// Unvalidated answers for every item; items without an answer segment are `NoIntent`.
pub fn rule_extract(items: &[&QuestionSpec], response: &str) -> BTreeMap<String, AnswerValue> {
    let segs = segments(items, response);
    items
        .iter()
        .map(|q| {
            let v = segs.get(&q.id).map(|s| extract_one(q, s)).unwrap_or(AnswerValue::NoIntent);
            (q.id.clone(), v)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// End-to-end baseline

/// The item an assistant line asks about: the longest question text it quotes.
fn asked_item<'a>(form: &'a FormSpec, line: &str) -> Option<&'a QuestionSpec> {
    form.questions
        .iter()
        .filter(|q| !q.text.trim().is_empty() && line.contains(q.text.trim()))
        .max_by_key(|q| q.text.trim().len())
}

fn baseline_turn(user: &str) -> Option<String> {
    let (form, history) = prompts::parse_baseline_prompt(user)?;
    let mut answers: BTreeMap<String, AnswerValue> = BTreeMap::new();
    let mut fails: BTreeMap<String, usize> = BTreeMap::new();
    let mut asked: Option<&QuestionSpec> = None;
    for line in &history {
        match line.speaker {
            Speaker::System => asked = asked_item(&form, &line.text),
            Speaker::Patient => {
                if let Some(q) = asked.take() {
                    let raw = rule_extract(&[q], &line.text).remove(&q.id).unwrap_or(AnswerValue::NoIntent);
                    let v = validate_answer(q, &raw);
                    if v.is_answer() {
                        answers.insert(q.id.clone(), v);
                    } else {
                        *fails.entry(q.id.clone()).or_insert(0) += 1;
                    }
                }
            }
        }
    }
    let extracted: Map<String, Value> =
        answers.iter().map(|(k, v)| (k.clone(), prompts::answer_to_model_json(v))).collect();
    let next = reachable_in_order(&form, &answers)
        .ok()?
        .into_iter()
        .find(|id| !answers.contains_key(id) && fails.get(id).copied().unwrap_or(0) < BASELINE_MAX_ASKS);
    let reply = match next.and_then(|id| form.question(&id)) {
        Some(q) => {
            let question = template_utterance(&[q]);
            let question =
                if fails.contains_key(&q.id) { format!("{REASK_PREFIX}{question}") } else { question };
            json!({ "next_question": question, "extracted": extracted, "done": false })
        }
        None => json!({ "next_question": CLOSING, "extracted": extracted, "done": true }),
    };
    Some(reply.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::patient::{default_segment, phrase_answer};

    #[test]
    fn extracts_headed_segments_and_residue() {
        let form = fixtures::form3();
        let ledger = fixtures::form3_ledger();
        let ids = ["weight", "smoke", "quit_method"];
        let items: Vec<&QuestionSpec> = ids.iter().map(|id| form.question(id).unwrap()).collect();
        let reply = format!(
            "{} I quit smoking. {}",
            default_segment(items[0], &ledger["weight"]),
            default_segment(items[2], &ledger["quit_method"])
        );
        let out = rule_extract(&items, &reply);
        assert_eq!(validate_answer(items[0], &out["weight"]), ledger["weight"]);
        assert_eq!(out["smoke"], AnswerValue::chosen("quit"));
        assert_eq!(validate_answer(items[2], &out["quit_method"]), ledger["quit_method"]);
    }

    #[test]
    fn single_choice_with_two_labels_is_no_intent() {
        let form = fixtures::form3();
        let smoke = form.question("smoke").unwrap();
        let out = rule_extract(&[smoke], "Yes. Well, no.");
        assert_eq!(out["smoke"], AnswerValue::NoIntent);
        let out = rule_extract(&[smoke], "Regarding Do you smoke: I'd prefer not to say.");
        assert_eq!(out["smoke"], AnswerValue::Refused);
    }

    #[test]
    fn every_ledger_answer_round_trips_through_rule_extraction() {
        for (form, ledger) in fixtures::replicas() {
            for q in &form.questions {
                let Some(v) = ledger.get(&q.id) else { continue };
                let out = rule_extract(&[q], &default_segment(q, v));
                assert_eq!(&validate_answer(q, &out[&q.id]), v, "{} / {}", q.id, phrase_answer(q, v));
            }
        }
    }

    #[test]
    fn propose_balances_chunks() {
        let form = fixtures::form2();
        let out = propose(&form.questions, 4);
        let groups: Vec<Vec<String>> = crate::clustering::parse_candidate(&out).unwrap();
        assert_eq!(groups.len(), 12);
        assert!(groups.iter().all(|g| (3..=4).contains(&g.len())));
    }

    #[test]
    fn baseline_asks_in_order_and_finishes() {
        let form = fixtures::form1();
        let req = prompts::build_baseline_prompt(&form, &[], prompts::BASELINE_INSTRUCTIONS);
        let reply: Value = serde_json::from_str(&baseline_turn(req.last_user_text()).unwrap()).unwrap();
        assert_eq!(reply["done"], false);
        assert!(reply["next_question"].as_str().unwrap().contains(form.questions[0].text.trim()));
    }
}
