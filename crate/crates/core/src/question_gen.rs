//! Turns a question group into one patient-facing utterance, with keyword and
//! identifier audits on every emission.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::clustering::QuestionGroup;
use crate::form::{FormSpec, QuestionSpec, QuestionType};
use crate::gateway::{Gateway, GatewayError};
use crate::prompts;
use crate::text;

pub const REPEAT_PREFIX: &str = "Let me ask that again: ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComposedQuestion {
    pub group_id: String,
    pub utterance: String,
    pub covered_ids: Vec<String>,
    /// Set when the keyword audit still failed after regeneration.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub audit_warning: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GenError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("model returned an empty question twice for group {0}")]
    Empty(String),
    #[error("group {0} refers to unknown question `{1}`")]
    UnknownQuestion(String, String),
}

fn members<'a>(group: &QuestionGroup, form: &'a FormSpec) -> Result<Vec<&'a QuestionSpec>, GenError> {
    group
        .member_ids
        .iter()
        .map(|id| form.question(id).ok_or_else(|| GenError::UnknownQuestion(group.group_id.clone(), id.clone())))
        .collect()
}

/// "A, B or C" style list.
pub fn spoken_list(items: &[&str], conjunction: &str) -> String {
    match items {
        [] => String::new(),
        [one] => one.to_string(),
        [init @ .., last] => format!("{} {conjunction} {last}", init.join(", ")),
    }
}

fn option_clause(q: &QuestionSpec) -> String {
    let labels: Vec<&str> = q.options.iter().map(|o| o.label.as_str()).collect();
    match q.qtype {
        QuestionType::SingleChoice => format!(" Would you say {}?", spoken_list(&labels, "or")),
        QuestionType::MultiChoice => format!(" You can pick any of: {}.", spoken_list(&labels, "and")),
        QuestionType::FillBlank => {
            let suffixes: Vec<&str> = q.blanks.iter().map(|b| b.suffix.trim()).filter(|s| !s.is_empty()).collect();
            if suffixes.is_empty() {
                String::new()
            } else {
                format!(" Please give the answer in {}.", spoken_list(&suffixes, "and"))
            }
        }
    }
}

/// Deterministic rendering used when generation cannot pass the audits.
pub fn template_utterance(items: &[&QuestionSpec]) -> String {
    let parts: Vec<String> = items.iter().map(|q| format!("{}{}", q.text.trim(), option_clause(q))).collect();
    if parts.len() == 1 {
        parts.into_iter().next().unwrap()
    } else {
        format!("I have a few questions. {}", parts.join(" "))
    }
}

/// Members with no stemmed content word present in the utterance.
pub fn keyword_audit(utterance: &str, items: &[&QuestionSpec]) -> Vec<String> {
    let said = text::content_words(utterance);
    items
        .iter()
        .filter(|q| text::content_words(&q.text).is_disjoint(&said))
        .map(|q| q.id.clone())
        .collect()
}

/// Internal identifiers that appear as whole words in the utterance without
/// also being ordinary words of the visible question text, labels or suffixes.
pub fn leaked_ids(utterance: &str, items: &[&QuestionSpec]) -> Vec<String> {
    let mut visible = BTreeSet::new();
    let mut ids = BTreeSet::new();
    for q in items {
        visible.extend(text::words(&q.text));
        ids.insert(q.id.clone());
        for o in &q.options {
            visible.extend(text::words(&o.label));
            ids.insert(o.id.clone());
        }
        for b in &q.blanks {
            visible.extend(text::words(&b.suffix));
            ids.insert(b.id.clone());
        }
    }
    ids.into_iter()
        .filter(|id| !visible.contains(&id.to_lowercase()))
        .filter(|id| mentions_id(utterance, id))
        .collect()
}

/// Case-insensitive occurrence of `id` not embedded in a longer identifier.
fn mentions_id(utterance: &str, id: &str) -> bool {
    let hay = utterance.to_ascii_lowercase();
    let needle = id.to_ascii_lowercase();
    let ident = |c: char| c.is_alphanumeric() || c == '_' || c == '-';
    hay.match_indices(&needle).any(|(at, m)| {
        let before = hay[..at].chars().next_back().is_none_or(|c| !ident(c));
        let after = hay[at + m.len()..].chars().next().is_none_or(|c| !ident(c));
        before && after
    })
}

/// Appends the option list for any choice member whose labels are not all read out.
pub fn ensure_options(utterance: &str, items: &[&QuestionSpec]) -> String {
    let lowered = utterance.to_lowercase();
    let mut out = utterance.trim().to_string();
    for q in items.iter().filter(|q| q.qtype.is_choice()) {
        let missing = q.options.iter().any(|o| !lowered.contains(&o.label.to_lowercase()));
        if missing {
            let labels: Vec<&str> = q.options.iter().map(|o| o.label.as_str()).collect();
            out.push_str(&format!(" (You can answer: {}.)", spoken_list(&labels, "or")));
        }
    }
    out
}

fn generate(
    group: &QuestionGroup,
    items: &[&QuestionSpec],
    request: &crate::gateway::ChatRequest,
    gateway: &Gateway,
) -> Result<ComposedQuestion, GenError> {
    let mut empty_retry_used = false;
    let mut regenerated = false;
    loop {
        let text = gateway.complete(request)?.text.trim().to_string();
        if text.is_empty() {
            if empty_retry_used {
                return Err(GenError::Empty(group.group_id.clone()));
            }
            empty_retry_used = true;
            continue;
        }
        let missing = keyword_audit(&text, items);
        let leaks = leaked_ids(&text, items);
        if (missing.is_empty() && leaks.is_empty()) || regenerated {
            let (utterance, audit_warning) = if !leaks.is_empty() {
                log::warn!("group {} utterance leaked ids {leaks:?}; using template", group.group_id);
                (template_utterance(items), false)
            } else {
                if !missing.is_empty() {
                    log::warn!("group {} utterance lacks keywords for {missing:?}; accepted", group.group_id);
                }
                (ensure_options(&text, items), !missing.is_empty())
            };
            return Ok(ComposedQuestion {
                group_id: group.group_id.clone(),
                utterance,
                covered_ids: group.member_ids.clone(),
                audit_warning,
            });
        }
        regenerated = true;
    }
}

pub fn compose_question(
    group: &QuestionGroup,
    form: &FormSpec,
    gateway: &Gateway,
    locale: &str,
    session_id: Option<&str>,
) -> Result<ComposedQuestion, GenError> {
    let items = members(group, form)?;
    let owned: Vec<QuestionSpec> = items.iter().map(|q| (*q).clone()).collect();
    let request = prompts::compose_request(group.qtype, &owned, locale).with_session(session_id);
    generate(group, &items, &request, gateway)
}

/// Re-poses only the unanswered members, never byte-identical to the previous ask.
pub fn compose_reask(
    unanswered: &QuestionGroup,
    form: &FormSpec,
    previous_utterance: &str,
    patient_reply: &str,
    gateway: &Gateway,
    locale: &str,
    session_id: Option<&str>,
) -> Result<ComposedQuestion, GenError> {
    let items = members(unanswered, form)?;
    let owned: Vec<QuestionSpec> = items.iter().map(|q| (*q).clone()).collect();
    let request =
        prompts::reask_request(&owned, previous_utterance, patient_reply, locale).with_session(session_id);
    let mut composed = generate(unanswered, &items, &request, gateway)?;
    if composed.utterance == previous_utterance.trim() {
        composed.utterance = format!("{REPEAT_PREFIX}{}", composed.utterance);
    }
    Ok(composed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::gateway::{ScriptedBackend, ScriptedReply};
    use std::sync::Arc;

    fn group(ids: &[&str], qtype: QuestionType) -> QuestionGroup {
        QuestionGroup { group_id: "g1".into(), member_ids: ids.iter().map(|s| s.to_string()).collect(), qtype }
    }

    fn scripted(replies: &[&str]) -> Gateway {
        Gateway::new(Arc::new(ScriptedBackend::queue(replies.iter().map(|r| ScriptedReply::text(*r)).collect())))
    }

    #[test]
    fn template_reads_every_option() {
        let form = fixtures::form3();
        let smoke = form.question("smoke").unwrap();
        let u = template_utterance(&[smoke]);
        assert_eq!(u, "Do you smoke? Would you say Yes, No or Quit smoking?");
        let weight = form.question("weight").unwrap();
        assert_eq!(template_utterance(&[weight]), "What is your body weight today? Please give the answer in kg.");
    }

    #[test]
    fn scripted_phrasing_is_kept_with_options_appended() {
        let form = fixtures::form3();
        let gw = scripted(&["Tell me, do you smoke at the moment?"]);
        let q = compose_question(&group(&["smoke"], QuestionType::SingleChoice), &form, &gw, "en", None).unwrap();
        assert_eq!(q.covered_ids, vec!["smoke"]);
        assert_eq!(q.utterance, "Tell me, do you smoke at the moment? (You can answer: Yes, No or Quit smoking.)");
    }

    #[test]
    fn verbatim_options_need_no_appendix() {
        let form = fixtures::form3();
        let gw = scripted(&["Do you smoke: yes, no, or have you quit smoking?"]);
        let q = compose_question(&group(&["smoke"], QuestionType::SingleChoice), &form, &gw, "en", None).unwrap();
        assert_eq!(q.utterance, "Do you smoke: yes, no, or have you quit smoking?");
    }

    #[test]
    fn keyword_audit_regenerates_once_then_flags() {
        let form = fixtures::form3();
        let g = group(&["smoke", "alcohol"], QuestionType::SingleChoice);
        let gw = scripted(&["Do you smoke?", "Do you smoke? Yes or no or quit smoking?"]);
        let q = compose_question(&g, &form, &gw, "en", None).unwrap();
        assert!(q.audit_warning);
        assert_eq!(gw.ledger().total().requests, 2);
        assert_eq!(q.covered_ids, vec!["smoke", "alcohol"]);
    }

    #[test]
    fn leaks_fall_back_to_template() {
        let form = fixtures::form3();
        let gw = scripted(&["About cig_per_day: how many?", "cig_per_day please"]);
        let q = compose_question(&group(&["cig_per_day"], QuestionType::FillBlank), &form, &gw, "en", None).unwrap();
        assert!(leaked_ids(&q.utterance, &[form.question("cig_per_day").unwrap()]).is_empty());
        assert_eq!(q.utterance, template_utterance(&[form.question("cig_per_day").unwrap()]));
    }

    #[test]
    fn empty_output_retries_once_then_errors() {
        let form = fixtures::form3();
        let g = group(&["smoke"], QuestionType::SingleChoice);
        let gw = scripted(&["", "Do you smoke? Yes, No or Quit smoking?"]);
        assert!(compose_question(&g, &form, &gw, "en", None).is_ok());
        let gw = scripted(&["", "  "]);
        assert!(matches!(compose_question(&g, &form, &gw, "en", None), Err(GenError::Empty(_))));
    }

    #[test]
    fn reask_is_never_identical() {
        let form = fixtures::form3();
        let g = group(&["smoke"], QuestionType::SingleChoice);
        let previous = "Do you smoke? Would you say Yes, No or Quit smoking?";
        let gw = scripted(&[previous]);
        let q = compose_reask(&g, &form, previous, "hmm", &gw, "en", None).unwrap();
        assert_ne!(q.utterance, previous);
        assert!(q.utterance.starts_with(REPEAT_PREFIX));
    }
}
