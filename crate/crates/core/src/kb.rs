//! Knowledge base of (question, patient response, extraction result) triples
//! and similarity retrieval of few-shot examples.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::answer::{AnswerValue, BlankValue};
use crate::clock::Clock;
use crate::clustering::{Grouping, QuestionGroup};
use crate::extract::validate_answer;
use crate::form::{FormSpec, QuestionSpec, QuestionType, ValueKind};
use crate::gateway::Gateway;
use crate::patient::{phrase_answer, PersonaSpec};
use crate::prompts::{self, Fact, VerbalizeInput, PROMPT_VERSION};
use crate::question_gen::{self, GenError};
use crate::text;

pub const DEFAULT_K: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionExample {
    pub question_utterance: String,
    pub patient_response: String,
    pub result: BTreeMap<String, AnswerValue>,
    pub qtype: QuestionType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persona: Option<String>,
}

impl ExtractionExample {
    fn key_text(&self) -> String {
        format!("{} {}", self.question_utterance, self.patient_response)
    }
}

/// Examples plus one term-frequency vector per example.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    examples: Vec<ExtractionExample>,
    index: Vec<BTreeMap<String, u32>>,
}

impl KnowledgeBase {
    pub fn new(examples: Vec<ExtractionExample>) -> Self {
        let index = examples.iter().map(|e| text::term_frequencies(&e.key_text())).collect();
        KnowledgeBase { examples, index }
    }

    pub fn examples(&self) -> &[ExtractionExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn index_len(&self) -> usize {
        self.index.len()
    }

    /// Cosine similarity of `dialogue` to every example, in insertion order.
    pub fn scores(&self, dialogue: &str) -> Vec<f64> {
        let q = text::term_frequencies(dialogue);
        self.index.iter().map(|v| text::cosine(&q, v)).collect()
    }

    /// Top-k examples by similarity, descending; ties keep insertion order.
    pub fn retrieve_similar(&self, dialogue: &str, k: usize) -> Vec<&ExtractionExample> {
        let scores = self.scores(dialogue);
        let mut order: Vec<usize> = (0..self.examples.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        order.into_iter().take(k).map(|i| &self.examples[i]).collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.examples {
            out.push_str(&serde_json::to_string(e).expect("example serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let examples = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(KnowledgeBase::new(examples))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbManifest {
    pub form_id: String,
    pub seed: u64,
    pub personas: Vec<String>,
    pub created_at: f64,
    pub examples: usize,
    pub samples_per_persona: usize,
    pub prompt_version: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

const FREE_TEXT_SAMPLES: &[&str] = &[
    "retired teacher",
    "works in an office",
    "penicillin",
    "knee replacement",
    "nothing else to add",
    "Dr Martin",
    "varenicline",
    "short stay for tests",
];

fn number_range(unit: Option<&str>) -> (i64, i64) {
    match unit {
        Some("kg") => (45, 110),
        Some("cm") => (150, 195),
        Some("years") => (1, 40),
        Some("hours") => (4, 10),
        Some("cigarettes") => (1, 30),
        Some("drinks") => (0, 20),
        Some("celsius") => (37, 40),
        Some("times") => (1, 6),
        Some("glasses") => (1, 10),
        Some("mmhg") => (60, 160),
        Some("bpm") => (50, 100),
        _ => (1, 2020),
    }
}

/// Draws a valid answer uniformly from the question's answer space.
pub fn sample_answer<R: Rng + ?Sized>(q: &QuestionSpec, rng: &mut R) -> AnswerValue {
    match q.qtype {
        QuestionType::SingleChoice => AnswerValue::chosen(q.options.choose(rng).expect("choice has options").id.clone()),
        QuestionType::MultiChoice => {
            let n = rng.random_range(1..=q.options.len().min(3));
            let picked: BTreeSet<String> = q.options.choose_multiple(rng, n).map(|o| o.id.clone()).collect();
            AnswerValue::ChosenMany(picked)
        }
        QuestionType::FillBlank => AnswerValue::Blanks(
            q.blanks
                .iter()
                .map(|b| {
                    let v = match b.value_kind {
                        ValueKind::FreeText => BlankValue::Text(FREE_TEXT_SAMPLES.choose(rng).unwrap().to_string()),
                        ValueKind::Number => {
                            let (lo, hi) = number_range(b.unit.as_deref());
                            BlankValue::Number { value: rng.random_range(lo..=hi) as f64, unit: b.unit.clone() }
                        }
                    };
                    (b.id.clone(), v)
                })
                .collect(),
        ),
    }
}

/// Groups the KB covers: the plan's groups plus one singleton per conditional question.
pub fn kb_groups(form: &FormSpec, grouping: &Grouping) -> Vec<QuestionGroup> {
    let mut groups = grouping.groups.clone();
    for q in form.questions.iter().filter(|q| q.conditional) {
        groups.push(QuestionGroup { group_id: format!("c-{}", q.id), member_ids: vec![q.id.clone()], qtype: q.qtype });
    }
    groups
}

#[derive(Debug, Clone)]
pub struct KbBuildConfig {
    pub seed: u64,
    pub samples_per_persona: usize,
    pub locale: String,
}

impl Default for KbBuildConfig {
    fn default() -> Self {
        KbBuildConfig { seed: 7, samples_per_persona: 1, locale: prompts::DEFAULT_LOCALE.to_string() }
    }
}

/// For each group and persona: sample an intent, have the persona verbalize
/// it, and store the sampled intent as the result. Persona failures are
/// skipped with a warning; a failing compose call aborts the build.
pub fn build_kb(
    form: &FormSpec,
    grouping: &Grouping,
    personas: &[PersonaSpec],
    gateway: &Gateway,
    config: &KbBuildConfig,
    clock: &dyn Clock,
) -> Result<(KnowledgeBase, KbManifest), GenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut examples = Vec::new();
    let mut warnings = Vec::new();
    for group in kb_groups(form, grouping) {
        let members: Vec<&QuestionSpec> = group.member_ids.iter().filter_map(|id| form.question(id)).collect();
        let composed = question_gen::compose_question(&group, form, gateway, &config.locale, None)?;
        for persona in personas {
            for _ in 0..config.samples_per_persona.max(1) {
                let intents: BTreeMap<String, AnswerValue> =
                    members.iter().map(|q| (q.id.clone(), sample_answer(*q, &mut rng))).collect();
                let facts = members
                    .iter()
                    .map(|q| Fact { question: q.text.clone(), answer: phrase_answer(q, &intents[&q.id]) })
                    .collect();
                let input = VerbalizeInput { style: persona.style, facts };
                let request = prompts::verbalize_request(persona.system_prompt(&[]), &input);
                match gateway.complete(&request) {
                    Ok(r) if !r.text.trim().is_empty() => {
                        debug_assert!(members.iter().all(|q| validate_answer(q, &intents[&q.id]) == intents[&q.id]));
                        examples.push(ExtractionExample {
                            question_utterance: composed.utterance.clone(),
                            patient_response: r.text.trim().to_string(),
                            result: intents,
                            qtype: group.qtype,
                            persona: Some(persona.name.clone()),
                        });
                    }
                    Ok(_) => warnings.push(format!("{}: empty verbalization for {}", persona.name, group.group_id)),
                    Err(e) => warnings.push(format!("{}: {e} for {}", persona.name, group.group_id)),
                }
            }
        }
    }
    for w in &warnings {
        log::warn!("kb build: {w}");
    }
    let manifest = KbManifest {
        form_id: form.form_id.clone(),
        seed: config.seed,
        personas: personas.iter().map(|p| p.name.clone()).collect(),
        created_at: clock.now(),
        examples: examples.len(),
        samples_per_persona: config.samples_per_persona.max(1),
        prompt_version: PROMPT_VERSION.to_string(),
        warnings,
    };
    Ok((KnowledgeBase::new(examples), manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(q: &str, r: &str) -> ExtractionExample {
        ExtractionExample {
            question_utterance: q.into(),
            patient_response: r.into(),
            result: BTreeMap::new(),
            qtype: QuestionType::SingleChoice,
            persona: None,
        }
    }

    #[test]
    fn retrieval_ranks_and_clamps() {
        let kb = KnowledgeBase::new(vec![
            ex("alpha beta", "gamma"),
            ex("delta epsilon", "zeta"),
            ex("eta theta", "iota"),
        ]);
        assert_eq!(kb.index_len(), 3);
        let top = kb.retrieve_similar("delta epsilon zeta", 1);
        assert_eq!(top[0].question_utterance, "delta epsilon");
        // disjoint vocabularies: only the shared-word example scores above zero
        let scores = kb.scores("theta");
        assert_eq!(scores[0], 0.0);
        assert_eq!(scores[1], 0.0);
        assert!((scores[2] - 1.0 / 3f64.sqrt()).abs() < 1e-12);
        let all = kb.retrieve_similar("theta", 10);
        assert_eq!(all.len(), 3);
        assert_eq!(all[0].question_utterance, "eta theta");
        // ties keep insertion order
        assert_eq!(all[1].question_utterance, "alpha beta");
    }

    #[test]
    fn jsonl_round_trip() {
        let kb = KnowledgeBase::new(vec![ex("a", "b"), ex("c", "d")]);
        let back = KnowledgeBase::from_jsonl(&kb.to_jsonl()).unwrap();
        assert_eq!(back.examples(), kb.examples());
    }

    #[test]
    fn sampled_answers_validate() {
        let form = crate::fixtures::form3();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            for q in &form.questions {
                let v = sample_answer(q, &mut rng);
                assert_eq!(validate_answer(q, &v), v, "{}", q.id);
            }
        }
    }
}
