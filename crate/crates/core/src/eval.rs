//! Transcript scoring: extraction accuracy, deterministic error detectors and
//! the modular-versus-baseline comparison report.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::answer::AnswerValue;
use crate::extract::validate_answer;
use crate::form::{reachable_set, FormSpec};
use crate::session::SessionState;
use crate::text;
use crate::transcript::{AbortReason, Mode, Outcome, Transcript, Turn};

/// Minimum share of a question's content words an utterance must contain to count as asking it.
pub const MAP_THRESHOLD: f64 = 0.35;
/// Below this similarity a mapped question counts as reworded.
pub const ALTER_UPPER: f64 = 0.7;
pub const SLOW_TURN_S: f64 = 30.0;

/// Reference turn reductions per form, in percent, printed as report footer.
pub const REFERENCE_REDUCTIONS: [(&str, f64); 3] = [("form-1", 64.0), ("form-2", 48.1), ("form-3", 28.1)];
pub const REFERENCE_MEAN_REDUCTION: f64 = 46.73;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub map_threshold: f64,
    pub alter_upper: f64,
    pub slow_turn_s: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { map_threshold: MAP_THRESHOLD, alter_upper: ALTER_UPPER, slow_turn_s: SLOW_TURN_S }
    }
}

/// Share of the question's content words present in the utterance.
pub fn similarity(utterance: &str, question_text: &str) -> f64 {
    text::coverage(&text::content_words(utterance), &text::content_words(question_text))
}

/// Items an utterance asks about, in form order.
pub fn map_utterance_to_items(utterance: &str, form: &FormSpec) -> Vec<String> {
    map_with_threshold(utterance, form, MAP_THRESHOLD)
}

fn map_with_threshold(utterance: &str, form: &FormSpec, threshold: f64) -> Vec<String> {
    let said: BTreeSet<String> = text::content_words(utterance);
    let words: Vec<BTreeSet<String>> = form.questions.iter().map(|q| text::content_words(&q.text)).collect();
    let hits: Vec<usize> =
        (0..form.questions.len()).filter(|&i| text::coverage(&said, &words[i]) >= threshold).collect();
    // A hit that only matches through the answer options read out for another
    // hit is an echo, not a question.
    let labels = |i: usize| -> BTreeSet<String> {
        form.questions[i].options.iter().flat_map(|o| text::content_words(&o.label)).collect()
    };
    hits.iter()
        .filter(|&&i| {
            let mut own = said.clone();
            for &j in hits.iter().filter(|&&j| j != i) {
                for w in labels(j) {
                    own.remove(&w);
                }
            }
            text::coverage(&own, &words[i]) >= threshold
        })
        .map(|&i| form.questions[i].id.clone())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    StartingFromMiddle,
    EndingPrematurely,
    ExcessiveResponseTime,
    AlteringQuestions,
    RepetitiveQuestioning,
    LogicalJumpError,
    SkippingMissing,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 7] = [
        ErrorCategory::StartingFromMiddle,
        ErrorCategory::EndingPrematurely,
        ErrorCategory::ExcessiveResponseTime,
        ErrorCategory::AlteringQuestions,
        ErrorCategory::RepetitiveQuestioning,
        ErrorCategory::LogicalJumpError,
        ErrorCategory::SkippingMissing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::StartingFromMiddle => "starting_from_middle",
            ErrorCategory::EndingPrematurely => "ending_prematurely",
            ErrorCategory::ExcessiveResponseTime => "excessive_response_time",
            ErrorCategory::AlteringQuestions => "altering_questions",
            ErrorCategory::RepetitiveQuestioning => "repetitive_questioning",
            ErrorCategory::LogicalJumpError => "logical_jump_error",
            ErrorCategory::SkippingMissing => "skipping_missing",
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Count per category; altering questions is not scored in modular mode.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub counts: BTreeMap<ErrorCategory, usize>,
    #[serde(default)]
    pub not_scored: Vec<ErrorCategory>,
}

impl ErrorCounts {
    pub fn get(&self, cat: ErrorCategory) -> Option<usize> {
        if self.not_scored.contains(&cat) {
            None
        } else {
            Some(self.counts.get(&cat).copied().unwrap_or(0))
        }
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    /// Categories with a non-zero count.
    pub fn nonzero(&self) -> Vec<(ErrorCategory, usize)> {
        self.counts.iter().filter(|(_, n)| **n > 0).map(|(c, n)| (*c, *n)).collect()
    }
}

fn covered(turn: &Turn, form: &FormSpec, threshold: f64) -> Vec<String> {
    if turn.covered_ids.is_empty() {
        map_with_threshold(&turn.text, form, threshold)
    } else {
        turn.covered_ids.clone()
    }
}

/// Runs every detector over a finished transcript.
pub fn detect_errors(transcript: &Transcript, form: &FormSpec, config: &EvalConfig) -> ErrorCounts {
    let mut counts: BTreeMap<ErrorCategory, usize> = ErrorCategory::ALL.iter().map(|c| (*c, 0)).collect();
    let mut bump = |c: ErrorCategory, n: usize| *counts.get_mut(&c).unwrap() += n;
    let done = transcript.outcome == Outcome::Completed;
    let known = |m: &BTreeMap<String, AnswerValue>| -> BTreeMap<String, AnswerValue> {
        m.iter().filter(|(k, v)| form.contains(k) && v.is_answer()).map(|(k, v)| (k.clone(), v.clone())).collect()
    };

    let mut answers: BTreeMap<String, AnswerValue> = BTreeMap::new();
    let mut ever_covered: BTreeSet<String> = BTreeSet::new();
    let mut furthest: Option<usize> = None;
    let mut first_checked = false;
    for turn in &transcript.turns {
        if !turn.is_question() {
            answers.extend(known(&turn.recorded));
            continue;
        }
        let ids = covered(turn, form, config.map_threshold);
        if !first_checked && !ids.is_empty() {
            first_checked = true;
            let off = match transcript.mode {
                Mode::Modular => !ids.iter().all(|id| transcript.first_group.contains(id)),
                Mode::Baseline => form.top_level().next().map(|q| q.id != ids[0]).unwrap_or(false),
            };
            bump(ErrorCategory::StartingFromMiddle, usize::from(off));
        }
        let reachable = reachable_set(form, &answers).unwrap_or_default();
        for id in &ids {
            if answers.contains_key(id) {
                bump(ErrorCategory::RepetitiveQuestioning, 1);
            }
            if !reachable.contains(id) {
                bump(ErrorCategory::LogicalJumpError, 1);
            }
            if transcript.mode == Mode::Baseline {
                let q = form.question(id).expect("mapped ids exist");
                let s = similarity(&turn.text, &q.text);
                if s < config.alter_upper {
                    bump(ErrorCategory::AlteringQuestions, 1);
                }
            }
            ever_covered.insert(id.clone());
            let pos = form.ordinal(id).unwrap_or(0);
            furthest = Some(furthest.map_or(pos, |f| f.max(pos)));
        }
    }

    let slow = transcript.turns.iter().filter(|t| t.latency_s > config.slow_turn_s).count();
    let timed_out = usize::from(transcript.outcome == (Outcome::Aborted { reason: AbortReason::Timeout }));
    bump(ErrorCategory::ExcessiveResponseTime, slow + timed_out);

    if done {
        let final_answers = known(&transcript.final_answers());
        let reachable = reachable_set(form, &final_answers).unwrap_or_default();
        let exhausted: BTreeSet<&String> = transcript.exhausted.iter().collect();
        let mut jumped: BTreeSet<String> = BTreeSet::new();
        for q in &form.questions {
            let Some(answer) = final_answers.get(&q.id) else { continue };
            for t in q.triggers.iter().filter(|t| t.when.is_satisfied(answer)) {
                if !t.then.is_empty() && t.then.iter().all(|c| !ever_covered.contains(c)) {
                    bump(ErrorCategory::LogicalJumpError, 1);
                    jumped.extend(t.then.iter().cloned());
                }
            }
        }
        let open: Vec<&String> = form
            .questions
            .iter()
            .map(|q| &q.id)
            .filter(|id| reachable.contains(*id) && !final_answers.contains_key(*id) && !exhausted.contains(id))
            .filter(|id| !jumped.contains(*id))
            .collect();
        let premature = open.iter().any(|id| {
            ever_covered.contains(*id) || furthest.is_none_or(|f| form.ordinal(id).unwrap_or(0) > f)
        });
        bump(ErrorCategory::EndingPrematurely, usize::from(premature));
        let missing = open.iter().filter(|id| !ever_covered.contains(**id)).count();
        bump(ErrorCategory::SkippingMissing, missing);
    }

    let not_scored = if transcript.mode == Mode::Modular { vec![ErrorCategory::AlteringQuestions] } else { Vec::new() };
    ErrorCounts { counts, not_scored }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub scored: usize,
}

impl Accuracy {
    pub fn fraction(&self) -> f64 {
        if self.scored == 0 {
            1.0
        } else {
            self.correct as f64 / self.scored as f64
        }
    }
}

/// Scores the final answers against the ledger over the items reachable
/// under either answer set, so a wrong branch costs the items it skipped.
/// Items the ledger does not cover are skipped with a warning.
pub fn score_accuracy(
    answers: &BTreeMap<String, AnswerValue>,
    ledger: &BTreeMap<String, AnswerValue>,
    form: &FormSpec,
) -> Accuracy {
    let known: BTreeMap<String, AnswerValue> =
        answers.iter().filter(|(k, _)| form.contains(k)).map(|(k, v)| (k.clone(), v.clone())).collect();
    let truth: BTreeMap<String, AnswerValue> =
        ledger.iter().filter(|(k, _)| form.contains(k)).map(|(k, v)| (k.clone(), v.clone())).collect();
    let mut reachable = reachable_set(form, &known).unwrap_or_default();
    reachable.extend(reachable_set(form, &truth).unwrap_or_default());
    let mut acc = Accuracy { correct: 0, scored: 0 };
    for q in form.questions.iter().filter(|q| reachable.contains(&q.id)) {
        let Some(truth) = ledger.get(&q.id) else {
            log::warn!("ledger has no entry for {}; not scored", q.id);
            continue;
        };
        acc.scored += 1;
        let got = known.get(&q.id).map(|v| validate_answer(q, v));
        if got.as_ref() == Some(&validate_answer(q, truth)) {
            acc.correct += 1;
        }
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub session_id: String,
    pub form_id: String,
    pub mode: Mode,
    pub system_turns: usize,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub mean_latency_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    pub errors: ErrorCounts,
    pub completed: bool,
    pub outcome: Outcome,
}

pub fn run_metrics(
    state: &SessionState,
    form: &FormSpec,
    ledger: Option<&BTreeMap<String, AnswerValue>>,
    config: &EvalConfig,
) -> RunMetrics {
    let transcript = state.transcript();
    let question_turns: Vec<&Turn> = transcript.turns.iter().filter(|t| t.is_question()).collect();
    let mean_latency_s = if question_turns.is_empty() {
        0.0
    } else {
        question_turns.iter().map(|t| t.latency_s).sum::<f64>() / question_turns.len() as f64
    };
    RunMetrics {
        session_id: state.session_id.clone(),
        form_id: state.form_id.clone(),
        mode: transcript.mode,
        system_turns: state.turn_count,
        prompt_tokens: state.usage.prompt_tokens,
        completion_tokens: state.usage.completion_tokens,
        mean_latency_s,
        accuracy: ledger.map(|l| score_accuracy(&state.answers, l, form).fraction()),
        errors: detect_errors(&transcript, form, config),
        completed: transcript.is_done(),
        outcome: transcript.outcome,
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("run sets cover different forms: modular {modular:?}, baseline {baseline:?}")]
    MismatchedRuns { modular: Vec<String>, baseline: Vec<String> },
    #[error("no runs to compare")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormComparison {
    pub form_id: String,
    pub modular_runs: usize,
    pub baseline_runs: usize,
    pub modular_mean_turns: Option<f64>,
    pub baseline_mean_turns: Option<f64>,
    pub turn_reduction_pct: Option<f64>,
    pub modular_mean_tokens: f64,
    pub baseline_mean_tokens: f64,
    pub token_ratio: Option<f64>,
    pub prompt_token_ratio: Option<f64>,
    pub accuracy_delta: Option<f64>,
    pub modular_excluded: usize,
    pub baseline_excluded: usize,
    pub modular_errors: BTreeMap<ErrorCategory, usize>,
    pub baseline_errors: BTreeMap<ErrorCategory, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub forms: Vec<FormComparison>,
    pub mean_turn_reduction_pct: Option<f64>,
    pub footnotes: Vec<String>,
    pub thresholds: EvalConfig,
    pub reference: Vec<(String, f64)>,
    pub reference_mean: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn sum_errors(runs: &[&RunMetrics]) -> BTreeMap<ErrorCategory, usize> {
    let mut out = BTreeMap::new();
    for r in runs {
        for c in ErrorCategory::ALL {
            if let Some(n) = r.errors.get(c) {
                *out.entry(c).or_insert(0) += n;
            }
        }
    }
    out
}

/// Per-form comparison. Runs that did not complete are left out of turn
/// averages and listed in footnotes.
pub fn compare_runs(modular: &[RunMetrics], baseline: &[RunMetrics], config: &EvalConfig) -> Result<ComparisonReport, EvalError> {
    let forms_of = |runs: &[RunMetrics]| -> Vec<String> {
        let mut ids: Vec<String> = Vec::new();
        for r in runs {
            if !ids.contains(&r.form_id) {
                ids.push(r.form_id.clone());
            }
        }
        ids
    };
    let (mf, bf) = (forms_of(modular), forms_of(baseline));
    if mf.is_empty() {
        return Err(EvalError::Empty);
    }
    let sorted = |v: &[String]| {
        let mut v = v.to_vec();
        v.sort();
        v
    };
    if sorted(&mf) != sorted(&bf) {
        return Err(EvalError::MismatchedRuns { modular: mf, baseline: bf });
    }
    let mut forms = Vec::new();
    let mut footnotes = Vec::new();
    for form_id in &mf {
        let m: Vec<&RunMetrics> = modular.iter().filter(|r| &r.form_id == form_id).collect();
        let b: Vec<&RunMetrics> = baseline.iter().filter(|r| &r.form_id == form_id).collect();
        let done_turns = |runs: &[&RunMetrics]| mean(runs.iter().filter(|r| r.completed).map(|r| r.system_turns as f64));
        let (mt, bt) = (done_turns(&m), done_turns(&b));
        let tokens = |runs: &[&RunMetrics]| mean(runs.iter().map(|r| (r.prompt_tokens + r.completion_tokens) as f64)).unwrap_or(0.0);
        let prompt = |runs: &[&RunMetrics]| mean(runs.iter().map(|r| r.prompt_tokens as f64)).unwrap_or(0.0);
        let (mtok, btok) = (tokens(&m), tokens(&b));
        let ratio = |a: f64, b: f64| (b > 0.0).then(|| a / b);
        let acc = |runs: &[&RunMetrics]| mean(runs.iter().filter_map(|r| r.accuracy));
        let mut excluded = |runs: &[&RunMetrics], mode: &str| {
            let n = runs.iter().filter(|r| !r.completed).count();
            if n > 0 {
                footnotes.push(format!(
                    "{form_id}: {n} {mode} run(s) did not complete ({}) and are excluded from turn averages",
                    runs.iter().filter(|r| !r.completed).map(|r| outcome_label(&r.outcome)).collect::<Vec<_>>().join(", ")
                ));
            }
            n
        };
        let modular_excluded = excluded(&m, "modular");
        let baseline_excluded = excluded(&b, "baseline");
        forms.push(FormComparison {
            form_id: form_id.clone(),
            modular_runs: m.len(),
            baseline_runs: b.len(),
            modular_mean_turns: mt,
            baseline_mean_turns: bt,
            turn_reduction_pct: match (mt, bt) {
                (Some(m), Some(b)) if b > 0.0 => Some((1.0 - m / b) * 100.0),
                _ => None,
            },
            modular_mean_tokens: mtok,
            baseline_mean_tokens: btok,
            token_ratio: ratio(btok, mtok),
            prompt_token_ratio: ratio(prompt(&b), prompt(&m)),
            accuracy_delta: match (acc(&m), acc(&b)) {
                (Some(a), Some(b)) => Some(a - b),
                _ => None,
            },
            modular_excluded,
            baseline_excluded,
            modular_errors: sum_errors(&m),
            baseline_errors: sum_errors(&b),
        });
    }
    let mean_turn_reduction_pct = mean(forms.iter().filter_map(|f| f.turn_reduction_pct));
    Ok(ComparisonReport {
        forms,
        mean_turn_reduction_pct,
        footnotes,
        thresholds: *config,
        reference: REFERENCE_REDUCTIONS.iter().map(|(f, v)| (f.to_string(), *v)).collect(),
        reference_mean: REFERENCE_MEAN_REDUCTION,
    })
}

fn outcome_label(o: &Outcome) -> String {
    match o {
        Outcome::InProgress => "in progress".into(),
        Outcome::Completed => "completed".into(),
        Outcome::Aborted { reason } => format!("aborted: {}", serde_json::to_value(reason).unwrap().as_str().unwrap_or("")),
    }
}

fn opt(v: Option<f64>, suffix: &str) -> String {
    v.map(|x| format!("{x:.1}{suffix}")).unwrap_or_else(|| "n/a".into())
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<12} {:>10} {:>10} {:>10} {:>10} {:>10} {:>8}",
            "form", "mod turns", "base turns", "reduction", "tok ratio", "acc delta", "errors"
        )?;
        for c in &self.forms {
            let errs: usize = c.baseline_errors.values().sum();
            writeln!(
                f,
                "{:<12} {:>10} {:>10} {:>10} {:>10} {:>10} {:>8}",
                c.form_id,
                opt(c.modular_mean_turns, ""),
                opt(c.baseline_mean_turns, ""),
                opt(c.turn_reduction_pct, "%"),
                opt(c.token_ratio, "x"),
                c.accuracy_delta.map(|d| format!("{d:+.2}")).unwrap_or_else(|| "n/a".into()),
                errs
            )?;
        }
        writeln!(f, "mean turn reduction: {}", opt(self.mean_turn_reduction_pct, "%"))?;
        for (i, note) in self.footnotes.iter().enumerate() {
            writeln!(f, "[{}] {note}", i + 1)?;
        }
        writeln!(
            f,
            "thresholds: mapping >= {}, altered below {} (baseline only), slow turn > {} s",
            self.thresholds.map_threshold, self.thresholds.alter_upper, self.thresholds.slow_turn_s
        )?;
        let refs: Vec<String> = self.reference.iter().map(|(k, v)| format!("{k} {v}%")).collect();
        writeln!(f, "reference reductions: {}; mean {}%", refs.join(", "), self.reference_mean)
    }
}
