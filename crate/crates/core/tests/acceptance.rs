//! Acceptance suite. Runs without the libtest harness and prints one
//! PASS/FAIL line per criterion; exits non-zero if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use common::*;
use followup_core::clustering::{signature, vote, Signature};
use followup_core::eval::{compare_runs, detect_errors, run_metrics, ErrorCategory, EvalConfig};
use followup_core::fixtures::{self, Ledger};
use followup_core::flow::{FlowConfig, ModularEngine};
use followup_core::form::{parse_form, reachable_set, trigger_depth, FormSpec, QuestionSpec};
use followup_core::gateway::{Gateway, ScriptedBackend, ScriptedReply};
use followup_core::patient::{default_segment, ScriptedPatient};
use followup_core::service::{ServiceConfig, SessionManager};
use followup_core::session::{EventSink, JsonlSink, SessionCore, SessionError, SessionEvent, SessionState};
use followup_core::transcript::{AbortReason, Outcome, Transcript};
use followup_core::LogicalClock;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::json;

type Verdict = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

const COVERAGE_FORMS: u64 = 200;
const COVERAGE_BUDGET_S: f64 = 10.0;
const MIN_TURN_REDUCTION_PCT: f64 = 40.0;
const MIN_MEAN_GROUP_SIZE: f64 = 2.0;
const GROUP_CAP: usize = 4;
const COMPARISON_TURNS: usize = 20;
const MIN_PROMPT_RATIO: f64 = 3.0;
const VOTE_MULTISETS: usize = 1000;
const CRASH_EVENTS: usize = 15;
const BASELINE_TURN_CAP: usize = 80;

fn coverage_oracle() -> Verdict {
    let started = Instant::now();
    let mut mismatches = Vec::new();
    let mut answered_total = 0;
    for seed in 0..COVERAGE_FORMS {
        let form = fixtures::random_form(seed);
        ensure!(form.questions.len() <= 12, "seed {seed}: {} questions", form.questions.len());
        ensure!(trigger_depth(&form) <= 2, "seed {seed}: trigger depth {}", trigger_depth(&form));
        let ledger = fixtures::random_ledger(&form, seed);
        let gw = sim_gateway();
        let patient = ScriptedPatient::new(ledger, Default::default());
        let state = modular(&form, &patient, &gw, &format!("r{seed}"));
        let covered: BTreeSet<String> = state.answers.keys().chain(state.exhausted.iter()).cloned().collect();
        let reachable = reachable_set(&form, &state.answers).map_err(|e| format!("seed {seed}: {e}"))?;
        answered_total += state.answers.len();
        if state.outcome() != Outcome::Completed || covered != reachable {
            mismatches.push(seed);
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    ensure!(mismatches.is_empty(), "{} mismatching forms, seeds {:?}", mismatches.len(), mismatches);
    ensure!(elapsed < COVERAGE_BUDGET_S, "took {elapsed:.2} s, budget {COVERAGE_BUDGET_S} s");
    Ok(format!("{COVERAGE_FORMS} forms, {answered_total} answers, 0 mismatches, {elapsed:.2} s"))
}

fn zero_pathology() -> Verdict {
    let mut parts = Vec::new();
    for (form, ledger) in fixtures::replicas() {
        let gw = sim_gateway();
        let state = modular(&form, &scripted_patient(&form, &ledger), &gw, "clean");
        let m = run_metrics(&state, &form, Some(&ledger), &EvalConfig::default());
        ensure!(m.completed, "{}: {:?}", form.form_id, m.outcome);
        ensure!(m.errors.total() == 0, "{}: errors {:?}", form.form_id, m.errors.nonzero());
        for cat in ErrorCategory::ALL {
            ensure!(m.errors.counts.get(&cat) == Some(&0), "{}: {cat} missing from counts", form.form_id);
        }
        ensure!(m.accuracy == Some(1.0), "{}: accuracy {:?}", form.form_id, m.accuracy);
        parts.push(format!("{} ({}q, {} turns)", form.form_id, form.questions.len(), m.system_turns));
    }
    Ok(format!("{}: 0 errors in 7 categories, accuracy 1.0", parts.join(", ")))
}

#[derive(Deserialize)]
struct FaultFixture {
    fault: ErrorCategory,
    form_id: String,
    expected: BTreeMap<ErrorCategory, usize>,
    transcript: Transcript,
}

fn fault_injection() -> Verdict {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/faults");
    let mut seen = BTreeSet::new();
    for cat in ErrorCategory::ALL {
        let path = dir.join(format!("{cat}.json"));
        let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let fixture: FaultFixture = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        ensure!(fixture.fault == cat, "{}: labelled {}", path.display(), fixture.fault);
        let (form, _) = fixtures::by_id(&fixture.form_id).ok_or_else(|| format!("unknown form {}", fixture.form_id))?;
        let counts = detect_errors(&fixture.transcript, &form, &EvalConfig::default());
        for other in ErrorCategory::ALL {
            let want = fixture.expected.get(&other).copied().unwrap_or(0);
            let got = counts.counts.get(&other).copied().unwrap_or(0);
            ensure!(got == want, "{cat} fixture: {other} = {got}, expected {want}");
        }
        ensure!(counts.get(cat).unwrap_or(0) > 0, "{cat} fixture: fault not detected");
        seen.insert(cat);
    }
    Ok(format!("{} fixtures, exact counts, 0 cross-category hits", seen.len()))
}

fn turn_efficiency() -> Verdict {
    let (form, ledger) = fixtures::by_id("form-2").unwrap();
    let config = FlowConfig::default();
    ensure!(config.cluster.cap == GROUP_CAP, "group cap is {}", config.cluster.cap);
    let gw = sim_gateway();
    let (grouping, kb) = prepared(&form, &gw);
    let mean_size = grouping.mean_group_size();
    ensure!(mean_size >= MIN_MEAN_GROUP_SIZE, "mean group size {mean_size:.2}");
    let patient = scripted_patient(&form, &ledger);
    let m = modular_with(&form, &grouping, &kb, &patient, &gw, "m", &config);
    let b = baseline(&form, &patient, &sim_gateway(), "b");
    let eval = EvalConfig::default();
    let report = compare_runs(
        &[run_metrics(&m, &form, Some(&ledger), &eval)],
        &[run_metrics(&b, &form, Some(&ledger), &eval)],
        &eval,
    )
    .map_err(|e| e.to_string())?;
    let reduction = report.forms[0].turn_reduction_pct.ok_or("no turn reduction")?;
    ensure!(reduction >= MIN_TURN_REDUCTION_PCT, "reduction {reduction:.1}% < {MIN_TURN_REDUCTION_PCT}%");
    Ok(format!(
        "form-2 mean group size {mean_size:.2}, {} vs {} turns, reduction {reduction:.1}%",
        m.turn_count, b.turn_count
    ))
}

fn ledger_matches(gw: &Gateway, state: &SessionState) -> Result<u64, String> {
    let records: Vec<_> = gw.ledger().records().into_iter().filter(|r| r.session_id.as_deref() == Some(state.session_id.as_str())).collect();
    let prompt: u64 = records.iter().map(|r| r.prompt_tokens).sum();
    let completion: u64 = records.iter().map(|r| r.completion_tokens).sum();
    let totals = gw.ledger().totals_for_session(&state.session_id);
    ensure!(totals.requests == records.len() as u64, "{}: {} requests vs {} records", state.session_id, totals.requests, records.len());
    ensure!(totals.prompt_tokens == prompt && totals.completion_tokens == completion, "{}: ledger totals differ from records", state.session_id);
    ensure!(
        state.usage.prompt_tokens == prompt && state.usage.completion_tokens == completion,
        "{}: session usage {:?} differs from records ({prompt}, {completion})",
        state.session_id,
        state.usage
    );
    Ok(prompt)
}

/// Full sessions on the first 20 form-2 questions, which the one-question
/// baseline covers in exactly 20 turns.
fn token_ratio() -> Verdict {
    let (full, full_ledger) = fixtures::by_id("form-2").unwrap();
    let form = fixtures::truncate_form(&full, COMPARISON_TURNS);
    let ledger: Ledger = full_ledger.into_iter().filter(|(k, _)| form.contains(k)).collect();
    let patient = scripted_patient(&form, &ledger);
    let mgw = sim_gateway();
    let m = modular(&form, &patient, &mgw, "m20");
    let bgw = sim_gateway();
    let b = baseline(&form, &patient, &bgw, "b20");
    ensure!(b.turn_count == COMPARISON_TURNS, "baseline ran {} turns", b.turn_count);
    ensure!(m.outcome() == Outcome::Completed && b.outcome() == Outcome::Completed, "runs did not complete");
    let mp = ledger_matches(&mgw, &m)?;
    let bp = ledger_matches(&bgw, &b)?;
    ensure!(mp > 0, "modular used no prompt tokens");
    let ratio = bp as f64 / mp as f64;
    ensure!(ratio >= MIN_PROMPT_RATIO, "ratio {ratio:.2} < {MIN_PROMPT_RATIO}");
    Ok(format!(
        "{} baseline vs {} modular turns, prompt tokens {bp} vs {mp}, ratio {ratio:.2}, ledger sums match records",
        b.turn_count, m.turn_count
    ))
}

fn vote_questions() -> FormSpec {
    let q = |id: &str| json!({"id": id, "text": format!("Question {id}?"), "type": "single_choice",
        "options": [{"id": "a", "label": "A"}, {"id": "b", "label": "B"}]});
    let doc = json!({"form_id": "votes", "title": "votes", "version": "1", "questions": [q("q1"), q("q2"), q("q3"), q("q4")]});
    parse_form(&doc.to_string()).unwrap()
}

fn groups(spec: &[&[&str]]) -> Option<Vec<Vec<String>>> {
    Some(spec.iter().map(|g| g.iter().map(|s| s.to_string()).collect()).collect())
}

fn tie_table() -> Result<usize, String> {
    let form = vote_questions();
    let qs: Vec<&QuestionSpec> = form.questions.iter().collect();
    let a = groups(&[&["q1", "q2"], &["q3", "q4"]]);
    let b = groups(&[&["q1"], &["q2"], &["q3", "q4"]]);
    let c = groups(&[&["q1"], &["q2"], &["q3"], &["q4"]]);
    let d = groups(&[&["q1", "q3"], &["q2", "q4"]]);
    let cases: Vec<(&str, Vec<Option<Vec<Vec<String>>>>, Option<Vec<Vec<String>>>, usize)> = vec![
        ("strict majority", vec![a.clone(), a.clone(), b.clone()], a.clone(), 2),
        ("tie, fewer groups", vec![a.clone(), b.clone()], a.clone(), 1),
        ("tie, fewer groups, reversed", vec![b.clone(), a.clone()], a.clone(), 1),
        ("tie, same size, lexicographic", vec![d.clone(), a.clone()], a.clone(), 1),
        ("two-way tie among three", vec![b.clone(), c.clone(), b.clone(), c.clone(), d.clone()], b.clone(), 2),
        ("majority beats fewer groups", vec![c.clone(), c.clone(), a.clone()], c.clone(), 2),
        ("malformed trials ignored", vec![None, None, b.clone()], b.clone(), 1),
        ("all malformed", vec![None, None, None, None, None], c.clone(), 0),
    ];
    for (name, trials, want, count) in &cases {
        let (got, n) = vote(trials, &qs, "g");
        let got_sig = signature(&got.iter().map(|g| g.member_ids.clone()).collect::<Vec<_>>());
        ensure!(got_sig == signature(want.as_ref().unwrap()), "tie case `{name}`: got {got_sig:?}");
        ensure!(n == *count, "tie case `{name}`: count {n}, expected {count}");
    }
    Ok(cases.len())
}

/// Random partition of `qs` into same-type groups of at most the cap.
fn random_partition(rng: &mut ChaCha8Rng, qs: &[&QuestionSpec]) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut by_type: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for q in qs {
        by_type.entry(q.qtype.as_str()).or_default().push(q.id.clone());
    }
    for (_, mut ids) in by_type {
        ids.shuffle(rng);
        while !ids.is_empty() {
            let take = rng.random_range(1..=ids.len().min(GROUP_CAP));
            out.push(ids.drain(..take).collect());
        }
    }
    out
}

/// Winner by direct counting over the multiset.
fn oracle_winner(trials: &[Option<Vec<Vec<String>>>]) -> Option<(Signature, usize)> {
    let sigs: Vec<Signature> = trials.iter().flatten().map(|t| signature(t)).collect();
    let mut best: Option<(Signature, usize)> = None;
    for s in &sigs {
        let n = sigs.iter().filter(|o| *o == s).count();
        let better = match &best {
            None => true,
            Some((b, bn)) => n > *bn || (n == *bn && (s.len() < b.len() || (s.len() == b.len() && s < b))),
        };
        if better {
            best = Some((s.clone(), n));
        }
    }
    best
}

fn vote_determinism() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..VOTE_MULTISETS {
        let form = fixtures::random_form(case as u64);
        let qs: Vec<&QuestionSpec> = form.questions.iter().collect();
        let pool: Vec<Option<Vec<Vec<String>>>> = (0..rng.random_range(1..=3))
            .map(|_| if rng.random_bool(0.15) { None } else { Some(random_partition(&mut rng, &qs)) })
            .collect();
        let trials: Vec<Option<Vec<Vec<String>>>> = (0..rng.random_range(1..=7)).map(|_| pool.choose(&mut rng).unwrap().clone()).collect();
        let (winner, count) = vote(&trials, &qs, "g");
        for _ in 0..3 {
            let mut shuffled = trials.clone();
            shuffled.shuffle(&mut rng);
            ensure!(vote(&shuffled, &qs, "g") == (winner.clone(), count), "case {case}: permutation changed the vote");
        }
        let members: Vec<&String> = winner.iter().flat_map(|g| &g.member_ids).collect();
        let distinct: BTreeSet<&String> = members.iter().copied().collect();
        ensure!(members.len() == qs.len() && distinct.len() == qs.len(), "case {case}: not a partition");
        ensure!(qs.iter().all(|q| distinct.contains(&q.id)), "case {case}: missing members");
        for g in &winner {
            ensure!(!g.member_ids.is_empty() && g.member_ids.len() <= GROUP_CAP, "case {case}: group size {}", g.member_ids.len());
            ensure!(
                g.member_ids.iter().all(|id| form.question(id).unwrap().qtype == g.qtype),
                "case {case}: mixed types in {}",
                g.group_id
            );
        }
        let got = signature(&winner.iter().map(|g| g.member_ids.clone()).collect::<Vec<_>>());
        match oracle_winner(&trials) {
            Some((sig, n)) => ensure!(got == sig && count == n, "case {case}: winner differs from counting oracle"),
            None => ensure!(count == 0 && winner.len() == qs.len(), "case {case}: fallback is not singletons"),
        }
    }
    let cases = tie_table()?;
    Ok(format!("{VOTE_MULTISETS} multisets permutation-invariant partitions, {cases} tie-table cases"))
}

/// Appends to the log, then fails every later write as if the process died.
struct KillSink {
    inner: JsonlSink,
    left: usize,
}

impl EventSink for KillSink {
    fn append(&mut self, event: &SessionEvent) -> Result<(), SessionError> {
        if self.left == 0 {
            return Err(SessionError::Sink("killed".into()));
        }
        self.left -= 1;
        self.inner.append(event)
    }
}

struct CrashRun {
    snapshots: Vec<String>,
    state: SessionState,
}

/// Runs the session until `kill_after` events are durable (or to the end).
fn crash_run(form: &FormSpec, ledger: &Ledger, kill_after: usize, data_dir: &Path) -> CrashRun {
    let gw = sim_gateway();
    let (grouping, kb) = prepared(form, &gw);
    let clock = LogicalClock::default();
    let config = FlowConfig::default();
    let engine = ModularEngine { form, kb: &kb, gateway: &gw, clock: &clock, config: &config };
    let sink = KillSink { inner: JsonlSink::open(data_dir.join("sessions/s000001.jsonl")).unwrap(), left: kill_after };
    let mut core = SessionCore::new(Box::new(sink));
    let snapshots = Arc::new(Mutex::new(Vec::new()));
    let seen = snapshots.clone();
    core.set_observer(Box::new(move |_, state: &SessionState| seen.lock().unwrap().push(state.snapshot())));
    let mut outcome = engine.start(&mut core, "s000001", &grouping, "live");
    while outcome.is_ok() && core.state.is_active() {
        let asked = core.state.awaiting().unwrap().covered_ids.clone();
        let text = asked.iter().map(|id| default_segment(form.question(id).unwrap(), &ledger[id])).collect::<Vec<_>>().join(" ");
        outcome = engine.step(&mut core, &text, None);
    }
    let snapshots = snapshots.lock().unwrap().clone();
    CrashRun { snapshots, state: core.state }
}

fn crash_recovery() -> Verdict {
    let (full, full_ledger) = fixtures::by_id("form-1").unwrap();
    let form = fixtures::truncate_form(&full, 6);
    let ledger: Ledger = full_ledger.into_iter().filter(|(k, _)| form.contains(k)).collect();
    let reference = {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        crash_run(&form, &ledger, usize::MAX, dir.path())
    };
    ensure!(reference.snapshots.len() == CRASH_EVENTS, "session has {} events", reference.snapshots.len());
    ensure!(reference.state.outcome() == Outcome::Completed, "reference run {:?}", reference.state.outcome());
    for k in 1..=CRASH_EVENTS {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        std::fs::create_dir_all(dir.path().join("forms")).map_err(|e| e.to_string())?;
        std::fs::write(dir.path().join(format!("forms/{}.json", form.form_id)), form.to_json()).map_err(|e| e.to_string())?;
        let live = crash_run(&form, &ledger, k, dir.path());
        ensure!(live.snapshots.len() == k, "trial {k}: {} events before the kill", live.snapshots.len());
        ensure!(live.snapshots[k - 1] == reference.snapshots[k - 1], "trial {k}: live run diverged from the reference");

        let config = ServiceConfig { data_dir: Some(dir.path().to_path_buf()), ..ServiceConfig::default() };
        let manager = SessionManager::new(Arc::new(sim_gateway()), Arc::new(sim_gateway()), Arc::new(LogicalClock::default()), config);
        manager.recover().map_err(|e| format!("trial {k}: {e}"))?;
        let replayed = manager.state("s000001").map_err(|e| format!("trial {k}: {e}"))?;
        ensure!(replayed.snapshot() == live.snapshots[k - 1], "trial {k}: replayed state differs from the live snapshot");
    }
    Ok(format!("{CRASH_EVENTS} kill points, replayed snapshot byte-identical each time"))
}

fn baseline_cap() -> Verdict {
    let (form, ledger) = fixtures::by_id("form-2").unwrap();
    let q = &form.questions[0].text;
    let never_done: Vec<ScriptedReply> = (0..200)
        .map(|_| ScriptedReply::text(json!({"next_question": q, "extracted": {}, "done": false}).to_string()))
        .collect();
    let gw = gateway(Arc::new(ScriptedBackend::queue(never_done)));
    let patient = scripted_patient(&form, &ledger);
    let stuck = baseline(&form, &patient, &gw, "stuck");
    ensure!(
        stuck.outcome() == Outcome::Aborted { reason: AbortReason::TurnCap },
        "never-done baseline ended {:?}",
        stuck.outcome()
    );
    ensure!(stuck.turn_count == BASELINE_TURN_CAP, "aborted after {} turns", stuck.turn_count);

    let eval = EvalConfig::default();
    let finished = baseline(&form, &patient, &sim_gateway(), "ok");
    let m = modular(&form, &patient, &sim_gateway(), "m");
    let runs = [run_metrics(&stuck, &form, Some(&ledger), &eval), run_metrics(&finished, &form, Some(&ledger), &eval)];
    let report = compare_runs(&[run_metrics(&m, &form, Some(&ledger), &eval)], &runs, &eval).map_err(|e| e.to_string())?;
    let row = &report.forms[0];
    ensure!(row.baseline_excluded == 1, "{} baseline runs excluded", row.baseline_excluded);
    ensure!(row.baseline_mean_turns == Some(finished.turn_count as f64), "baseline mean {:?}", row.baseline_mean_turns);
    ensure!(report.footnotes.len() == 1 && report.footnotes[0].contains("excluded"), "footnotes {:?}", report.footnotes);
    ensure!(report.to_string().contains("[1] "), "footnote missing from the printed report");
    Ok(format!("aborted at {BASELINE_TURN_CAP} turns, excluded from the mean with footnote"))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("coverage oracle", coverage_oracle),
        ("zero pathology", zero_pathology),
        ("fault injection", fault_injection),
        ("turn efficiency", turn_efficiency),
        ("token ratio", token_ratio),
        ("vote determinism", vote_determinism),
        ("crash recovery", crash_recovery),
        ("baseline cap", baseline_cap),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL {name}: panicked");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
