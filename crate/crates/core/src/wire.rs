//! Wire format for answers exchanged with a model: an option id string, an
//! array of option ids, an object of blank values, or a marker string.

use std::collections::BTreeMap;

use serde_json::Value;

use crate::answer::{AnswerValue, BlankValue};
use crate::form::{QuestionSpec, QuestionType};

/// Model output format for one answer: option id, id array, blank object or marker.
pub fn answer_to_model_json(value: &AnswerValue) -> serde_json::Value {
    match value {
        AnswerValue::Chosen(id) => Value::String(id.clone()),
        AnswerValue::ChosenMany(ids) => Value::Array(ids.iter().cloned().map(Value::String).collect()),
        AnswerValue::Blanks(map) => Value::Object(
            map.iter()
                .map(|(k, v)| (k.clone(), Value::String(v.to_string())))
                .collect(),
        ),
        AnswerValue::NoIntent => Value::String("no_intent".into()),
        AnswerValue::Refused => Value::String("refused".into()),
    }
}

fn marker(s: &str) -> Option<AnswerValue> {
    match s.trim().to_lowercase().as_str() {
        "no_intent" | "unknown" | "" => Some(AnswerValue::NoIntent),
        "refused" => Some(AnswerValue::Refused),
        _ => None,
    }
}

fn blank_value(v: &Value) -> Option<BlankValue> {
    match v {
        Value::String(s) => Some(BlankValue::Text(s.clone())),
        Value::Number(n) => n.as_f64().map(|value| BlankValue::Number { value, unit: None }),
        Value::Object(o) => {
            let value = o.get("value")?.as_f64()?;
            let unit = o.get("unit").and_then(Value::as_str).map(str::to_string);
            Some(BlankValue::Number { value, unit })
        }
        _ => None,
    }
}

/// Interprets one model-reported value in the wire format (option id string,
/// id array, blank object, or a marker). Not validated.
pub fn parse_model_answer(question: &QuestionSpec, value: &Value) -> AnswerValue {
    match value {
        Value::Null => AnswerValue::NoIntent,
        Value::String(s) => {
            if let Some(m) = marker(s) {
                return m;
            }
            match question.qtype {
                QuestionType::FillBlank if question.blanks.len() == 1 => {
                    AnswerValue::Blanks(BTreeMap::from([(question.blanks[0].id.clone(), BlankValue::Text(s.clone()))]))
                }
                QuestionType::FillBlank => AnswerValue::NoIntent,
                _ => AnswerValue::Chosen(s.clone()),
            }
        }
        Value::Number(n) if question.qtype == QuestionType::FillBlank && question.blanks.len() == 1 => {
            match n.as_f64() {
                Some(value) => AnswerValue::Blanks(BTreeMap::from([(
                    question.blanks[0].id.clone(),
                    BlankValue::Number { value, unit: None },
                )])),
                None => AnswerValue::NoIntent,
            }
        }
        Value::Array(items) => items
            .iter()
            .map(|v| v.as_str().map(str::to_string))
            .collect::<Option<std::collections::BTreeSet<_>>>()
            .map(AnswerValue::ChosenMany)
            .unwrap_or(AnswerValue::NoIntent),
        Value::Object(o) => {
            let entries: Option<BTreeMap<String, BlankValue>> =
                o.iter().map(|(k, v)| blank_value(v).map(|b| (k.clone(), b))).collect();
            entries.map(AnswerValue::Blanks).unwrap_or(AnswerValue::NoIntent)
        }
        _ => AnswerValue::NoIntent,
    }
}

/// Finds a JSON object in model output: bare, fenced, or embedded in prose.
pub fn parse_json_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    let t = text.trim();
    if let Ok(Value::Object(o)) = serde_json::from_str(t) {
        return Some(o);
    }
    let start = t.find('{')?;
    let end = t.rfind('}')?;
    if end <= start {
        return None;
    }
    match serde_json::from_str(&t[start..=end]) {
        Ok(Value::Object(o)) => Some(o),
        _ => None,
    }
}

