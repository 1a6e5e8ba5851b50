//! Structured answer extraction: parsing model output, normalizing values
//! against the form, and the retrieval-grounded extraction call.

use std::collections::BTreeMap;

use regex::Regex;
use serde_json::Value;

use crate::answer::{AnswerValue, BlankValue};
use crate::form::{BlankSpec, QuestionSpec, QuestionType, ValueKind};
use crate::gateway::{Gateway, GatewayError};
use crate::kb::ExtractionExample;
use crate::prompts::{self, ShotView};
pub use crate::wire::{parse_json_object, parse_model_answer};
use crate::wire::answer_to_model_json;
use crate::text;

pub const HEDGE_WORDS: &[&str] = &["about", "around", "approximately", "approx", "roughly", "nearly", "almost"];

const UNIT_SYNONYMS: &[(&str, &[&str])] = &[
    ("kg", &["kg", "kgs", "kilo", "kilos", "kilogram", "kilograms"]),
    ("cm", &["cm", "cms", "centimeter", "centimeters", "centimetre", "centimetres"]),
    ("years", &["year", "years", "yr", "yrs"]),
    ("hours", &["hour", "hours", "hr", "hrs", "h"]),
    ("cigarettes", &["cigarette", "cigarettes", "cigs"]),
    ("drinks", &["drink", "drinks"]),
    ("celsius", &["celsius", "c", "degree", "degrees", "centigrade"]),
    ("times", &["time", "times"]),
    ("glasses", &["glass", "glasses"]),
    ("mmhg", &["mmhg", "mm", "hg"]),
    ("bpm", &["bpm", "beats", "beat", "per", "minute"]),
];

/// Canonical unit for a unit word, if it is in the synonyms table.
pub fn canonical_unit(word: &str) -> Option<&'static str> {
    let w = word.to_lowercase();
    UNIT_SYNONYMS
        .iter()
        .find(|(canon, syns)| *canon == w || syns.contains(&w.as_str()))
        .map(|(canon, _)| *canon)
}

fn numeral_regex() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?\d+(?:[.,]\d+)?").expect("valid regex"))
}

/// First decimal numeral in `text`, accepting a comma as decimal separator.
pub fn first_numeral(text: &str) -> Option<(f64, std::ops::Range<usize>)> {
    let m = numeral_regex().find(text)?;
    let value = m.as_str().replace(',', ".").parse().ok()?;
    Some((value, m.range()))
}

/// Parses a number blank from spoken text. Besides the numeral only hedge
/// words, stopwords, synonyms of the declared unit and words of the blank's
/// suffix may remain; anything else (a copied sentence) is rejected.
pub fn parse_number_blank(text: &str, blank: &BlankSpec) -> Option<BlankValue> {
    let (value, range) = first_numeral(text)?;
    let residue = format!("{} {}", &text[..range.start], &text[range.end..]);
    let declared = blank.unit.as_deref().map(|u| canonical_unit(u).unwrap_or(u));
    let suffix_words = text::words(&blank.suffix);
    for w in text::words(&residue) {
        let ok = HEDGE_WORDS.contains(&w.as_str())
            || text::is_stopword(&w)
            || suffix_words.contains(&w)
            || (declared.is_some() && canonical_unit(&w) == declared);
        if !ok {
            return None;
        }
    }
    if first_numeral(&text[range.end..]).is_some() {
        return None;
    }
    Some(BlankValue::Number { value, unit: blank.unit.clone() })
}

fn find_option<'a>(q: &'a QuestionSpec, raw: &str) -> Option<&'a str> {
    let key = raw.trim().to_lowercase();
    q.options
        .iter()
        .find(|o| o.id.to_lowercase() == key)
        .or_else(|| q.options.iter().find(|o| o.label.trim().to_lowercase() == key))
        .map(|o| o.id.as_str())
}

fn validate_blank(blank: &BlankSpec, value: &BlankValue) -> Option<BlankValue> {
    match (blank.value_kind, value) {
        (ValueKind::FreeText, BlankValue::Text(t)) => {
            let t = t.trim();
            (!t.is_empty()).then(|| BlankValue::Text(t.to_string()))
        }
        (ValueKind::FreeText, n @ BlankValue::Number { .. }) => Some(BlankValue::Text(n.to_string())),
        (ValueKind::Number, BlankValue::Text(t)) => parse_number_blank(t, blank),
        (ValueKind::Number, BlankValue::Number { value, unit }) => {
            if !value.is_finite() {
                return None;
            }
            match (unit.as_deref(), blank.unit.as_deref()) {
                (None, declared) => Some(BlankValue::Number { value: *value, unit: declared.map(str::to_string) }),
                (Some(u), Some(declared)) if canonical_unit(u).is_some() && canonical_unit(u) == canonical_unit(declared) => {
                    Some(BlankValue::Number { value: *value, unit: Some(declared.to_string()) })
                }
                (Some(u), Some(declared)) if u.eq_ignore_ascii_case(declared) => {
                    Some(BlankValue::Number { value: *value, unit: Some(declared.to_string()) })
                }
                _ => None,
            }
        }
    }
}

/// Returns `raw` normalized against the question, or `NoIntent` if it cannot
/// be made to satisfy the question's answer invariants.
pub fn validate_answer(question: &QuestionSpec, raw: &AnswerValue) -> AnswerValue {
    let normalized = match (question.qtype, raw) {
        (_, AnswerValue::NoIntent) => return AnswerValue::NoIntent,
        (_, AnswerValue::Refused) => return AnswerValue::Refused,
        (QuestionType::SingleChoice, AnswerValue::Chosen(id)) => find_option(question, id).map(AnswerValue::chosen),
        (QuestionType::SingleChoice, AnswerValue::ChosenMany(ids)) if ids.len() == 1 => {
            ids.iter().next().and_then(|id| find_option(question, id)).map(AnswerValue::chosen)
        }
        (QuestionType::MultiChoice, AnswerValue::Chosen(id)) => {
            find_option(question, id).map(|id| AnswerValue::chosen_many([id]))
        }
        (QuestionType::MultiChoice, AnswerValue::ChosenMany(ids)) if !ids.is_empty() => ids
            .iter()
            .map(|id| find_option(question, id).map(str::to_string))
            .collect::<Option<std::collections::BTreeSet<_>>>()
            .map(AnswerValue::ChosenMany),
        (QuestionType::FillBlank, AnswerValue::Blanks(values)) if !values.is_empty() => values
            .iter()
            .map(|(k, v)| {
                let blank = question.blanks.iter().find(|b| b.id.eq_ignore_ascii_case(k.trim()))?;
                Some((blank.id.clone(), validate_blank(blank, v)?))
            })
            .collect::<Option<BTreeMap<_, _>>>()
            .map(AnswerValue::Blanks),
        _ => None,
    };
    normalized.unwrap_or(AnswerValue::NoIntent)
}

pub fn shot_view(example: &ExtractionExample) -> ShotView {
    ShotView {
        question: example.question_utterance.clone(),
        response: example.patient_response.clone(),
        result: Value::Object(
            example
                .result
                .iter()
                .map(|(k, v)| (k.clone(), answer_to_model_json(v)))
                .collect(),
        ),
    }
}

/// One extraction call for a group. Every member gets an entry; anything the
/// model got wrong or left out becomes `NoIntent`.
pub fn extract(
    members: &[&QuestionSpec],
    question_utterance: &str,
    response: &str,
    examples: &[&ExtractionExample],
    gateway: &Gateway,
    session_id: Option<&str>,
) -> Result<BTreeMap<String, AnswerValue>, GatewayError> {
    let qtype = members.first().map(|q| q.qtype).unwrap_or(QuestionType::SingleChoice);
    let items: Vec<QuestionSpec> = members.iter().map(|q| (*q).clone()).collect();
    let shots = examples.iter().map(|e| shot_view(e)).collect();
    let request = prompts::extract_request(qtype, &items, shots, question_utterance, response).with_session(session_id);
    let output = gateway.complete(&request)?;
    let parsed = parse_json_object(&output.text);
    if parsed.is_none() {
        log::warn!("extraction output is not a JSON object; treating every item as unanswered");
    }
    Ok(members
        .iter()
        .map(|q| {
            let raw = parsed
                .as_ref()
                .and_then(|o| o.get(&q.id))
                .map(|v| parse_model_answer(q, v))
                .unwrap_or(AnswerValue::NoIntent);
            (q.id.clone(), validate_answer(q, &raw))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn blanks(id: &str, v: BlankValue) -> AnswerValue {
        AnswerValue::Blanks(BTreeMap::from([(id.to_string(), v)]))
    }

    #[test]
    fn choice_normalization() {
        let form = fixtures::form3();
        let smoke = form.question("smoke").unwrap();
        assert_eq!(validate_answer(smoke, &AnswerValue::chosen("YES")), AnswerValue::chosen("yes"));
        assert_eq!(validate_answer(smoke, &AnswerValue::chosen(" quit smoking ")), AnswerValue::chosen("quit"));
        assert_eq!(validate_answer(smoke, &AnswerValue::chosen("maybe")), AnswerValue::NoIntent);
        let symptoms = form.question("symptoms").unwrap();
        let empty = AnswerValue::ChosenMany(Default::default());
        assert_eq!(validate_answer(symptoms, &empty), AnswerValue::NoIntent);
        assert_eq!(
            validate_answer(symptoms, &AnswerValue::chosen_many(["Cough", "fatigue"])),
            AnswerValue::chosen_many(["cough", "fatigue"])
        );
    }

    #[test]
    fn number_blanks() {
        let form = fixtures::form3();
        let weight = form.question("weight").unwrap();
        let got = validate_answer(weight, &blanks("weight", BlankValue::Text("about 70 kilos".into())));
        assert_eq!(got, blanks("weight", BlankValue::Number { value: 70.0, unit: Some("kg".into()) }));
        let comma = validate_answer(weight, &blanks("weight", BlankValue::Text("70,5 kg".into())));
        assert_eq!(comma, blanks("weight", BlankValue::Number { value: 70.5, unit: Some("kg".into()) }));
        let sentence = BlankValue::Text("Well I think I weigh about 70 kilos these days".into());
        assert_eq!(validate_answer(weight, &blanks("weight", sentence)), AnswerValue::NoIntent);
        let wrong_unit = BlankValue::Number { value: 150.0, unit: Some("lb".into()) };
        assert_eq!(validate_answer(weight, &blanks("weight", wrong_unit)), AnswerValue::NoIntent);
        let age = form.question("age").unwrap();
        let got = validate_answer(age, &blanks("age", BlankValue::Text("64 years old".into())));
        assert_eq!(got, blanks("age", BlankValue::Number { value: 64.0, unit: Some("years".into()) }));
        assert_eq!(validate_answer(age, &blanks("height", BlankValue::Text("64".into()))), AnswerValue::NoIntent);
    }

    #[test]
    fn model_wire_format() {
        let form = fixtures::form3();
        let smoke = form.question("smoke").unwrap();
        assert_eq!(parse_model_answer(smoke, &Value::Null), AnswerValue::NoIntent);
        assert_eq!(parse_model_answer(smoke, &Value::String("refused".into())), AnswerValue::Refused);
        let bp = form.question("blood_pressure").unwrap();
        let v: Value = serde_json::json!({"systolic": "130", "diastolic": 85});
        let got = validate_answer(bp, &parse_model_answer(bp, &v));
        let AnswerValue::Blanks(map) = got else { panic!("expected blanks") };
        assert_eq!(map["systolic"], BlankValue::Number { value: 130.0, unit: Some("mmhg".into()) });
        assert_eq!(map["diastolic"], BlankValue::Number { value: 85.0, unit: Some("mmhg".into()) });
        assert!(parse_json_object("Sure!\n```json\n{\"a\": 1}\n```").is_some());
        assert!(parse_json_object("no structure here").is_none());
    }
}
