//! Bundled replica forms with ground-truth ledgers, plus seeded random forms
//! for property tests and benchmarks.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::answer::AnswerValue;
use crate::form::{
    parse_form, BlankSpec, FormSpec, OptionSpec, QuestionSpec, QuestionType, TriggerCondition, TriggerRule, ValueKind,
};
use crate::kb::sample_answer;
use crate::patient::PhrasingTable;

pub const FORM1_JSON: &str = include_str!("../fixtures/form1.json");
pub const FORM2_JSON: &str = include_str!("../fixtures/form2.json");
pub const FORM3_JSON: &str = include_str!("../fixtures/form3.json");
const FORM1_LEDGER: &str = include_str!("../fixtures/form1.ledger.json");
const FORM2_LEDGER: &str = include_str!("../fixtures/form2.ledger.json");
const FORM3_LEDGER: &str = include_str!("../fixtures/form3.ledger.json");

pub type Ledger = BTreeMap<String, AnswerValue>;

fn form(json: &str) -> FormSpec {
    parse_form(json).expect("bundled form is valid")
}

fn ledger(json: &str) -> Ledger {
    serde_json::from_str(json).expect("bundled ledger parses")
}

pub fn form1() -> FormSpec {
    form(FORM1_JSON)
}

pub fn form2() -> FormSpec {
    form(FORM2_JSON)
}

pub fn form3() -> FormSpec {
    form(FORM3_JSON)
}

pub fn form1_ledger() -> Ledger {
    ledger(FORM1_LEDGER)
}

pub fn form2_ledger() -> Ledger {
    ledger(FORM2_LEDGER)
}

pub fn form3_ledger() -> Ledger {
    ledger(FORM3_LEDGER)
}

/// The three replica forms with their ledgers, in order.
pub fn replicas() -> Vec<(FormSpec, Ledger)> {
    vec![(form1(), form1_ledger()), (form2(), form2_ledger()), (form3(), form3_ledger())]
}

/// Looks up a bundled form by its form id.
pub fn by_id(form_id: &str) -> Option<(FormSpec, Ledger)> {
    replicas().into_iter().find(|(f, _)| f.form_id == form_id)
}

/// Sentence overrides used by the scripted patient on a bundled form.
pub fn phrasing_table(form_id: &str) -> PhrasingTable {
    let mut table = BTreeMap::new();
    if form_id == "form-3" {
        table.insert("smoke=quit".to_string(), "I quit smoking.".to_string());
    }
    PhrasingTable(table)
}

/// The first `n` questions, with trigger targets outside the prefix dropped and
/// orphaned conditionals promoted to top level.
pub fn truncate_form(form: &FormSpec, n: usize) -> FormSpec {
    let kept: Vec<QuestionSpec> = form.questions.iter().take(n).cloned().collect();
    let ids: Vec<String> = kept.iter().map(|q| q.id.clone()).collect();
    let mut questions: Vec<QuestionSpec> = kept
        .into_iter()
        .map(|mut q| {
            for t in &mut q.triggers {
                t.then.retain(|c| ids.contains(c));
            }
            q.triggers.retain(|t| !t.then.is_empty());
            q
        })
        .collect();
    let targeted: Vec<String> = questions.iter().flat_map(|q| q.triggers.iter().flat_map(|t| t.then.clone())).collect();
    for q in &mut questions {
        if q.conditional && !targeted.contains(&q.id) {
            q.conditional = false;
        }
    }
    FormSpec::new(format!("{}-first{n}", form.form_id), form.title.clone(), form.version.clone(), questions)
}

const TOPICS: &[&str] = &[
    "appetite", "sleep", "breathing", "dizziness", "headaches", "mobility", "hearing", "vision", "digestion",
    "balance", "memory", "energy", "swelling", "itching", "thirst", "posture",
];
const LABELS: &[&str] = &["Never", "Rarely", "Sometimes", "Often", "Always"];
const UNITS: &[&str] = &["kg", "cm", "years", "hours", "times", "glasses"];
pub const RANDOM_MAX_QUESTIONS: usize = 12;
pub const RANDOM_MAX_DEPTH: usize = 2;

fn random_question<R: Rng>(rng: &mut R, i: usize, topic: &str) -> QuestionSpec {
    let qtype = *QuestionType::ALL.choose(rng).unwrap();
    let (text, options, blanks) = match qtype {
        QuestionType::SingleChoice | QuestionType::MultiChoice => {
            let k = rng.random_range(2..=LABELS.len());
            let options = LABELS[..k]
                .iter()
                .enumerate()
                .map(|(j, l)| OptionSpec { id: format!("o{}", j + 1), label: l.to_string() })
                .collect();
            (format!("How often do you notice problems with your {topic}?"), options, Vec::new())
        }
        QuestionType::FillBlank => {
            let k = rng.random_range(1..=2);
            let blanks = (0..k)
                .map(|j| {
                    if rng.random_bool(0.3) {
                        BlankSpec { id: format!("b{}", j + 1), suffix: String::new(), value_kind: ValueKind::FreeText, unit: None }
                    } else {
                        let unit = *UNITS.choose(rng).unwrap();
                        BlankSpec { id: format!("b{}", j + 1), suffix: unit.into(), value_kind: ValueKind::Number, unit: Some(unit.into()) }
                    }
                })
                .collect();
            (format!("Describe the details of your {topic}."), Vec::new(), blanks)
        }
    };
    QuestionSpec {
        id: format!("q{}", i + 1),
        ordinal: i,
        text,
        qtype,
        options,
        blanks,
        triggers: Vec::new(),
        conditional: false,
        required: true,
    }
}

/// A valid random form: up to 12 questions, trigger depth at most 2, every
/// child placed after its parent. Deterministic in `seed`.
pub fn random_form(seed: u64) -> FormSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=RANDOM_MAX_QUESTIONS);
    let mut topics = TOPICS.to_vec();
    topics.shuffle(&mut rng);
    let mut questions: Vec<QuestionSpec> = (0..n).map(|i| random_question(&mut rng, i, topics[i])).collect();
    let mut depth = vec![0usize; n];
    for i in 1..n {
        if !rng.random_bool(0.4) {
            continue;
        }
        let parents: Vec<usize> = (0..i).filter(|&j| depth[j] < RANDOM_MAX_DEPTH).collect();
        let Some(&p) = parents.choose(&mut rng) else { continue };
        let when = match questions[p].qtype {
            QuestionType::SingleChoice => {
                TriggerCondition::Equals { option_id: questions[p].options.choose(&mut rng).unwrap().id.clone() }
            }
            QuestionType::MultiChoice => {
                TriggerCondition::Contains { option_id: questions[p].options.choose(&mut rng).unwrap().id.clone() }
            }
            QuestionType::FillBlank => TriggerCondition::Answered,
        };
        let child = questions[i].id.clone();
        match questions[p].triggers.iter_mut().find(|t| t.when == when) {
            Some(t) => t.then.push(child),
            None => questions[p].triggers.push(TriggerRule { when, then: vec![child] }),
        }
        questions[i].conditional = true;
        depth[i] = depth[p] + 1;
    }
    FormSpec::new(format!("random-{seed}"), "Random form", "1", questions)
}

/// Ground truth with a sampled valid answer for every question.
pub fn random_ledger(form: &FormSpec, seed: u64) -> Ledger {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    form.questions.iter().map(|q| (q.id.clone(), sample_answer(q, &mut rng))).collect()
}
