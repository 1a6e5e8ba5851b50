//! Conditional follow-up forms: the JSON document format, structural
//! validation, and reachability under skip logic.
//!
//! A form is an ordered list of questions. Questions spawned by a trigger are
//! flagged `conditional` and never appear in the default top-level order; they
//! become reachable only when a recorded parent answer satisfies the trigger.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::answer::{AnswerValue, BlankValue};

/// Deepest allowed chain of trigger edges starting from a top-level question.
pub const MAX_TRIGGER_DEPTH: usize = 5;
/// Largest form the complexity tiers admit.
pub const MAX_QUESTIONS: usize = 146;
pub const MAX_ID_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    SingleChoice,
    MultiChoice,
    FillBlank,
}

impl QuestionType {
    pub const ALL: [QuestionType; 3] =
        [QuestionType::SingleChoice, QuestionType::MultiChoice, QuestionType::FillBlank];

    pub fn as_str(self) -> &'static str {
        match self {
            QuestionType::SingleChoice => "single_choice",
            QuestionType::MultiChoice => "multi_choice",
            QuestionType::FillBlank => "fill_blank",
        }
    }

    pub fn is_choice(self) -> bool {
        !matches!(self, QuestionType::FillBlank)
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionSpec {
    pub id: String,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    FreeText,
    Number,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlankSpec {
    pub id: String,
    #[serde(default)]
    pub suffix: String,
    pub value_kind: ValueKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TriggerCondition {
    Equals { option_id: String },
    Contains { option_id: String },
    Answered,
    /// Case-folded substring match against any blank value.
    MatchesText { pattern: String },
}

impl TriggerCondition {
    pub fn is_satisfied(&self, answer: &AnswerValue) -> bool {
        match (self, answer) {
            (_, AnswerValue::NoIntent | AnswerValue::Refused) => false,
            (TriggerCondition::Answered, _) => true,
            (TriggerCondition::Equals { option_id }, AnswerValue::Chosen(o)) => o == option_id,
            (TriggerCondition::Equals { option_id }, AnswerValue::ChosenMany(set)) => {
                set.len() == 1 && set.contains(option_id)
            }
            (TriggerCondition::Contains { option_id }, AnswerValue::Chosen(o)) => o == option_id,
            (TriggerCondition::Contains { option_id }, AnswerValue::ChosenMany(set)) => {
                set.contains(option_id)
            }
            (TriggerCondition::MatchesText { pattern }, AnswerValue::Blanks(values)) => {
                let needle = pattern.to_lowercase();
                values.values().any(|v| match v {
                    BlankValue::Text(t) => t.to_lowercase().contains(&needle),
                    other => other.to_string().to_lowercase().contains(&needle),
                })
            }
            _ => false,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            TriggerCondition::Equals { .. } => "equals",
            TriggerCondition::Contains { .. } => "contains",
            TriggerCondition::Answered => "answered",
            TriggerCondition::MatchesText { .. } => "matches_text",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerRule {
    pub when: TriggerCondition,
    pub then: Vec<String>,
}

fn default_true() -> bool {
    true
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn is_true(b: &bool) -> bool {
    *b
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSpec {
    pub id: String,
    /// Position in authored order; assigned at parse time.
    #[serde(skip)]
    pub ordinal: usize,
    pub text: String,
    #[serde(rename = "type")]
    pub qtype: QuestionType,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<OptionSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub blanks: Vec<BlankSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub triggers: Vec<TriggerRule>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub conditional: bool,
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    pub required: bool,
}

impl QuestionSpec {
    pub fn option(&self, option_id: &str) -> Option<&OptionSpec> {
        self.options.iter().find(|o| o.id == option_id)
    }

    pub fn blank(&self, blank_id: &str) -> Option<&BlankSpec> {
        self.blanks.iter().find(|b| b.id == blank_id)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FormSpec {
    pub form_id: String,
    pub title: String,
    pub version: String,
    pub questions: Vec<QuestionSpec>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

impl PartialEq for FormSpec {
    fn eq(&self, other: &Self) -> bool {
        self.form_id == other.form_id
            && self.title == other.title
            && self.version == other.version
            && self.questions == other.questions
    }
}

/// Questions asked together in one composite turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionGroup {
    pub group_id: String,
    pub member_ids: Vec<String>,
    pub qtype: QuestionType,
}

#[derive(Debug, thiserror::Error)]
pub enum FormError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("form failed validation: {0}")]
    Invalid(ValidationReport),
    #[error("unknown question id `{0}`")]
    UnknownQuestion(String),
}

impl FormSpec {
    /// Builds a form, assigning ordinals from authored order. No validation.
    pub fn new(
        form_id: impl Into<String>,
        title: impl Into<String>,
        version: impl Into<String>,
        questions: Vec<QuestionSpec>,
    ) -> Self {
        let mut form = FormSpec {
            form_id: form_id.into(),
            title: title.into(),
            version: version.into(),
            questions,
            index: BTreeMap::new(),
        };
        form.reindex();
        form
    }

    fn reindex(&mut self) {
        self.index.clear();
        for (i, q) in self.questions.iter_mut().enumerate() {
            q.ordinal = i;
            // first occurrence wins; duplicates are reported by validation
            self.index.entry(q.id.clone()).or_insert(i);
        }
    }

    /// Parses the JSON document without running semantic validation.
    pub fn from_json_unvalidated(document: &str) -> Result<FormSpec, FormError> {
        let form: FormSpec = serde_json::from_str(document).map_err(|e| {
            use serde_json::error::Category;
            match e.classify() {
                Category::Syntax | Category::Eof | Category::Io => FormError::Syntax {
                    line: e.line(),
                    column: e.column(),
                    message: e.to_string(),
                },
                Category::Data => FormError::Schema(e.to_string()),
            }
        })?;
        if form.questions.is_empty() {
            return Err(FormError::Schema("form has no questions".into()));
        }
        let mut form = form;
        form.reindex();
        Ok(form)
    }

    pub fn question(&self, id: &str) -> Option<&QuestionSpec> {
        self.index.get(id).map(|&i| &self.questions[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn ordinal(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn top_level(&self) -> impl Iterator<Item = &QuestionSpec> {
        self.questions.iter().filter(|q| !q.conditional)
    }

    pub fn trigger_count(&self) -> usize {
        self.questions.iter().map(|q| q.triggers.len()).sum()
    }

    /// Sorts ids by authored position; unknown ids go last.
    pub fn sort_by_ordinal(&self, ids: &mut [String]) {
        ids.sort_by_key(|id| self.ordinal(id).unwrap_or(usize::MAX));
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("form serialization cannot fail")
    }
}

/// Parses and validates a form document.
pub fn parse_form(document: &str) -> Result<FormSpec, FormError> {
    let form = FormSpec::from_json_unvalidated(document)?;
    let report = validate_form(&form);
    if report.is_clean() {
        Ok(form)
    } else {
        Err(FormError::Invalid(report))
    }
}

pub fn serialize_form(form: &FormSpec) -> String {
    form.to_json()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub question_id: Option<String>,
    pub rule: String,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.question_id {
            Some(q) => write!(f, "[{}] {}: {}", self.rule, q, self.message),
            None => write!(f, "[{}] {}", self.rule, self.message),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has_rule(&self, rule: &str) -> bool {
        self.findings.iter().any(|f| f.rule == rule)
    }

    fn push(&mut self, question_id: Option<&str>, rule: &str, message: impl Into<String>) {
        self.findings.push(Finding {
            question_id: question_id.map(str::to_string),
            rule: rule.to_string(),
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} finding(s)", self.findings.len())?;
        for finding in &self.findings {
            write!(f, "; {finding}")?;
        }
        Ok(())
    }
}

pub fn is_valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= MAX_ID_LEN
        && id
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-' || c == '_')
}

/// Checks every structural invariant of a form; findings are data, never errors.
pub fn validate_form(form: &FormSpec) -> ValidationReport {
    let mut report = ValidationReport::default();

    if form.questions.is_empty() {
        report.push(None, "empty-form", "form has no questions");
    }
    if form.questions.len() > MAX_QUESTIONS {
        report.push(
            None,
            "question-count-out-of-range",
            format!("{} questions exceeds the supported maximum of {MAX_QUESTIONS}", form.questions.len()),
        );
    }
    if !form.questions.is_empty() && form.top_level().next().is_none() {
        report.push(None, "no-top-level-question", "every question is conditional");
    }

    let mut seen = BTreeSet::new();
    for q in &form.questions {
        let qid = Some(q.id.as_str());
        if !seen.insert(q.id.as_str()) {
            report.push(qid, "duplicate-question-id", "question id used more than once");
        }
        if !is_valid_id(&q.id) {
            report.push(qid, "invalid-question-id", "ids are lowercase alphanumeric, dash or underscore, at most 64 chars");
        }
        if q.text.trim().is_empty() {
            report.push(qid, "empty-text", "question text is empty");
        }
        match q.qtype {
            QuestionType::SingleChoice | QuestionType::MultiChoice => {
                if q.options.len() < 2 {
                    report.push(qid, "choice-needs-options", "choice questions need at least two options");
                }
                if !q.blanks.is_empty() {
                    report.push(qid, "choice-has-blanks", "choice questions cannot carry blanks");
                }
            }
            QuestionType::FillBlank => {
                if q.blanks.is_empty() {
                    report.push(qid, "blank-needs-blanks", "fill-in questions need at least one blank");
                }
                if !q.options.is_empty() {
                    report.push(qid, "blank-has-options", "fill-in questions cannot carry options");
                }
            }
        }
        let mut option_ids = BTreeSet::new();
        for o in &q.options {
            if !option_ids.insert(o.id.as_str()) {
                report.push(qid, "duplicate-option-id", format!("option `{}` repeated", o.id));
            }
            if o.id.trim().is_empty() {
                report.push(qid, "empty-option-id", "option id is empty");
            }
            if o.label.trim().is_empty() {
                report.push(qid, "empty-label", format!("option `{}` has an empty label", o.id));
            }
        }
        let mut blank_ids = BTreeSet::new();
        for b in &q.blanks {
            if !blank_ids.insert(b.id.as_str()) {
                report.push(qid, "duplicate-blank-id", format!("blank `{}` repeated", b.id));
            }
            if b.value_kind == ValueKind::FreeText && b.unit.is_some() {
                report.push(qid, "unit-on-free-text", format!("blank `{}` is free text but declares a unit", b.id));
            }
        }
        for t in &q.triggers {
            match &t.when {
                TriggerCondition::Equals { option_id } | TriggerCondition::Contains { option_id } => {
                    if !q.qtype.is_choice() {
                        report.push(qid, "trigger-condition-mismatch", "option conditions need a choice question");
                    } else if q.option(option_id).is_none() {
                        report.push(qid, "trigger-unknown-option", format!("trigger refers to unknown option `{option_id}`"));
                    }
                }
                TriggerCondition::MatchesText { pattern } => {
                    if q.qtype != QuestionType::FillBlank {
                        report.push(qid, "trigger-condition-mismatch", "text conditions need a fill-in question");
                    }
                    if pattern.trim().is_empty() {
                        report.push(qid, "trigger-empty-pattern", "text pattern is empty");
                    }
                }
                TriggerCondition::Answered => {}
            }
            if t.then.is_empty() {
                report.push(qid, "trigger-without-targets", "trigger has no child questions");
            }
            for child in &t.then {
                match form.question(child) {
                    None => report.push(qid, "dangling-trigger-target", format!("trigger targets unknown question `{child}`")),
                    Some(c) if !c.conditional => report.push(
                        Some(child),
                        "trigger-child-not-conditional",
                        format!("question is triggered by `{}` but not flagged conditional", q.id),
                    ),
                    Some(_) => {}
                }
            }
        }
    }

    let targeted: BTreeSet<&str> = form
        .questions
        .iter()
        .flat_map(|q| q.triggers.iter().flat_map(|t| t.then.iter().map(String::as_str)))
        .collect();
    for q in form.questions.iter().filter(|q| q.conditional) {
        if !targeted.contains(q.id.as_str()) {
            report.push(Some(&q.id), "orphan-conditional", "conditional question is not targeted by any trigger");
        }
    }

    let cyclic = cyclic_questions(form);
    for id in &cyclic {
        report.push(Some(id), "trigger-cycle", "question can reach itself through triggers");
    }
    if cyclic.is_empty() {
        let depth = trigger_depth(form);
        if depth > MAX_TRIGGER_DEPTH {
            report.push(None, "trigger-depth-exceeded", format!("trigger depth {depth} exceeds {MAX_TRIGGER_DEPTH}"));
        }
    }
    report
}

fn children<'a>(q: &'a QuestionSpec) -> impl Iterator<Item = &'a str> {
    q.triggers.iter().flat_map(|t| t.then.iter().map(String::as_str))
}

/// Ids of questions that lie on a trigger cycle.
fn cyclic_questions(form: &FormSpec) -> Vec<String> {
    let mut on_cycle = BTreeSet::new();
    for start in &form.questions {
        // start is on a cycle iff it is reachable from one of its own children
        let mut stack: Vec<&str> = children(start).collect();
        let mut seen = BTreeSet::new();
        while let Some(id) = stack.pop() {
            if id == start.id {
                on_cycle.insert(start.id.clone());
                break;
            }
            if !seen.insert(id) {
                continue;
            }
            if let Some(q) = form.question(id) {
                stack.extend(children(q));
            }
        }
    }
    form.questions
        .iter()
        .filter(|q| on_cycle.contains(&q.id))
        .map(|q| q.id.clone())
        .collect()
}

/// Longest chain of trigger edges. Assumes the trigger graph is acyclic.
pub fn trigger_depth(form: &FormSpec) -> usize {
    fn depth_of(form: &FormSpec, id: &str, memo: &mut BTreeMap<String, usize>) -> usize {
        if let Some(&d) = memo.get(id) {
            return d;
        }
        let d = form
            .question(id)
            .map(|q| children(q).map(|c| 1 + depth_of(form, c, memo)).max().unwrap_or(0))
            .unwrap_or(0);
        memo.insert(id.to_string(), d);
        d
    }
    let mut memo = BTreeMap::new();
    form.top_level()
        .map(|q| depth_of(form, &q.id, &mut memo))
        .max()
        .unwrap_or(0)
}

/// Questions a fully informed interviewer would ask given `answers`: every
/// top-level question plus, transitively, the children of satisfied triggers
/// on reachable parents.
pub fn reachable_set(
    form: &FormSpec,
    answers: &BTreeMap<String, AnswerValue>,
) -> Result<BTreeSet<String>, FormError> {
    if let Some(unknown) = answers.keys().find(|id| !form.contains(id)) {
        return Err(FormError::UnknownQuestion(unknown.clone()));
    }
    let mut reachable: BTreeSet<String> = form.top_level().map(|q| q.id.clone()).collect();
    let mut queue: VecDeque<String> = reachable.iter().cloned().collect();
    while let Some(id) = queue.pop_front() {
        let (Some(q), Some(answer)) = (form.question(&id), answers.get(&id)) else {
            continue;
        };
        for t in q.triggers.iter().filter(|t| t.when.is_satisfied(answer)) {
            for child in &t.then {
                if form.contains(child) && reachable.insert(child.clone()) {
                    queue.push_back(child.clone());
                }
            }
        }
    }
    Ok(reachable)
}

/// Reachable ids in authored order.
pub fn reachable_in_order(
    form: &FormSpec,
    answers: &BTreeMap<String, AnswerValue>,
) -> Result<Vec<String>, FormError> {
    let set = reachable_set(form, answers)?;
    Ok(form
        .questions
        .iter()
        .filter(|q| set.contains(&q.id))
        .map(|q| q.id.clone())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormStats {
    pub total: usize,
    pub single: usize,
    pub multi: usize,
    pub fill_blank: usize,
    pub conditional: usize,
    pub triggers: usize,
    pub branching: bool,
    pub depth: usize,
}

pub fn form_stats(form: &FormSpec) -> FormStats {
    let count = |t: QuestionType| form.questions.iter().filter(|q| q.qtype == t).count();
    let triggers = form.trigger_count();
    FormStats {
        total: form.questions.len(),
        single: count(QuestionType::SingleChoice),
        multi: count(QuestionType::MultiChoice),
        fill_blank: count(QuestionType::FillBlank),
        conditional: form.questions.iter().filter(|q| q.conditional).count(),
        triggers,
        branching: triggers > 0,
        depth: if cyclic_questions(form).is_empty() { trigger_depth(form) } else { 0 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(id: &str, qtype: QuestionType) -> QuestionSpec {
        let (options, blanks) = match qtype {
            QuestionType::FillBlank => (
                vec![],
                vec![BlankSpec { id: "v".into(), suffix: String::new(), value_kind: ValueKind::FreeText, unit: None }],
            ),
            _ => (
                vec![
                    OptionSpec { id: "yes".into(), label: "Yes".into() },
                    OptionSpec { id: "no".into(), label: "No".into() },
                ],
                vec![],
            ),
        };
        QuestionSpec {
            id: id.into(),
            ordinal: 0,
            text: format!("Question {id}?"),
            qtype,
            options,
            blanks,
            triggers: vec![],
            conditional: false,
            required: true,
        }
    }

    fn on_yes(then: &[&str]) -> TriggerRule {
        TriggerRule {
            when: TriggerCondition::Equals { option_id: "yes".into() },
            then: then.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn empty_document_is_schema_error() {
        let err = FormSpec::from_json_unvalidated(r#"{"form_id":"f","title":"t","version":"1","questions":[]}"#)
            .unwrap_err();
        assert!(matches!(err, FormError::Schema(_)));
    }

    #[test]
    fn unknown_type_is_schema_error_and_bad_json_is_positioned() {
        let doc = r#"{"form_id":"f","title":"t","version":"1","questions":[{"id":"a","text":"x","type":"checklist"}]}"#;
        assert!(matches!(parse_form(doc), Err(FormError::Schema(_))));
        let err = parse_form("{\n  \"form_id\": ,\n}").unwrap_err();
        match err {
            FormError::Syntax { line, .. } => assert_eq!(line, 2),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn dangling_target_and_two_cycle_are_reported() {
        let mut a = q("a", QuestionType::SingleChoice);
        a.triggers.push(on_yes(&["ghost"]));
        let form = FormSpec::new("f", "t", "1", vec![a]);
        assert!(validate_form(&form).has_rule("dangling-trigger-target"));

        let mut root = q("root", QuestionType::SingleChoice);
        root.triggers.push(on_yes(&["a"]));
        let mut a = q("a", QuestionType::SingleChoice);
        a.conditional = true;
        a.triggers.push(on_yes(&["b"]));
        let mut b = q("b", QuestionType::SingleChoice);
        b.conditional = true;
        b.triggers.push(on_yes(&["a"]));
        let form = FormSpec::new("f", "t", "1", vec![root, a, b]);
        let report = validate_form(&form);
        assert!(report.has_rule("trigger-cycle"));
        let cyclic: Vec<_> = report
            .findings
            .iter()
            .filter(|f| f.rule == "trigger-cycle")
            .filter_map(|f| f.question_id.clone())
            .collect();
        assert_eq!(cyclic, vec!["a", "b"]);
    }

    #[test]
    fn depth_beyond_limit_is_reported() {
        let mut qs = vec![q("q0", QuestionType::SingleChoice)];
        for i in 1..=6 {
            let mut child = q(&format!("q{i}"), QuestionType::SingleChoice);
            child.conditional = true;
            qs.push(child);
            qs[i - 1].triggers.push(on_yes(&[&format!("q{i}")]));
        }
        let form = FormSpec::new("f", "t", "1", qs);
        assert_eq!(trigger_depth(&form), 6);
        assert!(validate_form(&form).has_rule("trigger-depth-exceeded"));
    }

    #[test]
    fn reachability_follows_fired_triggers_only() {
        let mut smoke = q("smoke", QuestionType::SingleChoice);
        smoke.triggers.push(on_yes(&["amount"]));
        let mut amount = q("amount", QuestionType::FillBlank);
        amount.conditional = true;
        let form = FormSpec::new("f", "t", "1", vec![smoke, amount, q("other", QuestionType::SingleChoice)]);
        let none = reachable_set(&form, &BTreeMap::new()).unwrap();
        assert_eq!(none, ["other", "smoke"].iter().map(|s| s.to_string()).collect());

        let mut answers = BTreeMap::new();
        answers.insert("smoke".to_string(), AnswerValue::chosen("yes"));
        assert!(reachable_set(&form, &answers).unwrap().contains("amount"));
        answers.insert("smoke".to_string(), AnswerValue::NoIntent);
        assert!(!reachable_set(&form, &answers).unwrap().contains("amount"));

        answers.insert("ghost".to_string(), AnswerValue::chosen("yes"));
        assert!(matches!(reachable_set(&form, &answers), Err(FormError::UnknownQuestion(_))));
    }

    #[test]
    fn matches_text_is_case_folded_substring() {
        let cond = TriggerCondition::MatchesText { pattern: "Retired".into() };
        let mut blanks = BTreeMap::new();
        blanks.insert("occ".to_string(), BlankValue::Text("a RETIRED teacher".into()));
        assert!(cond.is_satisfied(&AnswerValue::Blanks(blanks)));
        assert!(!cond.is_satisfied(&AnswerValue::chosen("retired")));
    }

    #[test]
    fn id_format() {
        assert!(is_valid_id("q-1_a"));
        assert!(!is_valid_id("Q1"));
        assert!(!is_valid_id("a b"));
        assert!(!is_valid_id(&"x".repeat(65)));
    }
}
