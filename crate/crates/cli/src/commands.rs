//! Batch commands: validate, cluster, kb-build, simulate, compare.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use followup_core::clustering::{ClusterConfig, Grouping, DEFAULT_TRIALS};
use followup_core::eval::{compare_runs, run_metrics, ErrorCategory, EvalConfig, RunMetrics};
use followup_core::flow::plan_session;
use followup_core::form::{form_stats, validate_form, FormSpec};
use followup_core::gateway::{CallRecord, ChatBackend, DEFAULT_INFLIGHT_CAP};
use followup_core::kb::KnowledgeBase;
use followup_core::service::{simulated_patient, PatientKind};
use followup_core::session::{CompletionRecord, SessionState};
use followup_core::simulate::{prepare, run_baseline, run_modular, SimContext};
use followup_core::transcript::Mode;
use serde::Serialize;

use crate::settings::{form_error, load_form, BackendChoice, CliError, LoadedForm, RunConfig};

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable output") + "\n";
    write_text(path, &text)
}

fn calls_jsonl(records: &[CallRecord]) -> String {
    records.iter().map(|r| serde_json::to_string(r).expect("serializable record") + "\n").collect()
}

/// Exit status 0 iff the form is clean; findings go to stderr.
pub fn validate(form_arg: &str) -> Result<(), CliError> {
    let form = match followup_core::fixtures::by_id(form_arg) {
        Some((form, _)) => form,
        None => {
            let path = Path::new(form_arg);
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            FormSpec::from_json_unvalidated(&text).map_err(|e| form_error(form_arg, e))?
        }
    };
    let report = validate_form(&form);
    if !report.is_clean() {
        for finding in &report.findings {
            eprintln!("{finding}");
        }
        return Err(CliError::Finding(format!("{}: {} finding(s)", form.form_id, report.findings.len())));
    }
    let s = form_stats(&form);
    println!(
        "{}: ok, {} questions ({} single, {} multi, {} fill-in), {} conditional, {} triggers, depth {}",
        form.form_id, s.total, s.single, s.multi, s.fill_blank, s.conditional, s.triggers, s.depth
    );
    Ok(())
}

pub fn cluster(cfg: &RunConfig) -> Result<(), CliError> {
    let loaded = load_form(cfg.one_form()?, cfg.ledger.as_deref())?;
    let trials = cfg.runs(DEFAULT_TRIALS)?;
    let gw = cfg.backend.gateway(cfg.backend.backend()?);
    let grouping = plan_session(&loaded.form, &gw, &ClusterConfig { trials, ..cfg.flow.cluster });
    for (k, g) in grouping.groups.iter().enumerate() {
        println!("group {}: [{}] ({})", k + 1, g.member_ids.join(", "), g.qtype.as_str());
    }
    let how = if grouping.fallback { " (fallback to singletons)" } else { "" };
    println!("vote {}/{}{how}, mean group size {:.2}", grouping.vote_count, grouping.trials, grouping.mean_group_size());
    if let Some(out) = &cfg.out {
        write_json(&out.join(format!("{}.grouping.json", loaded.form.form_id)), &grouping)?;
    }
    Ok(())
}

struct Prepared {
    grouping: Grouping,
    kb: KnowledgeBase,
}

fn prepare_form(cfg: &RunConfig, form: &FormSpec, backend: Arc<dyn ChatBackend>) -> Result<(Prepared, Vec<CallRecord>, String), CliError> {
    let gw = cfg.backend.gateway(backend);
    let (grouping, kb, manifest) = prepare(form, &gw, &cfg.flow, &cfg.kb_config(), gw.clock().as_ref())
        .map_err(|e| CliError::Finding(format!("{}: knowledge base build failed: {e}", form.form_id)))?;
    let manifest = serde_json::to_string_pretty(&manifest).expect("serializable manifest") + "\n";
    Ok((Prepared { grouping, kb }, gw.ledger().records(), manifest))
}

pub fn kb_build(cfg: &RunConfig) -> Result<(), CliError> {
    let loaded = load_form(cfg.one_form()?, cfg.ledger.as_deref())?;
    let (prepared, calls, manifest) = prepare_form(cfg, &loaded.form, cfg.backend.backend()?)?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("kb"));
    let id = &loaded.form.form_id;
    write_text(&out.join(format!("{id}.kb.jsonl")), &prepared.kb.to_jsonl())?;
    write_text(&out.join(format!("{id}.manifest.json")), &manifest)?;
    write_json(&out.join(format!("{id}.grouping.json")), &prepared.grouping)?;
    write_text(&out.join(format!("{id}.calls.jsonl")), &calls_jsonl(&calls))?;
    println!(
        "{id}: {} examples over {} groups, seed {}, {} model calls; wrote {}",
        prepared.kb.len(),
        prepared.grouping.groups.len(),
        cfg.seed,
        calls.len(),
        out.display()
    );
    Ok(())
}

struct Job<'a> {
    loaded: &'a LoadedForm,
    prepared: Option<&'a Prepared>,
    mode: Mode,
    patient: PatientKind,
    index: usize,
}

impl Job<'_> {
    fn session_id(&self) -> String {
        format!("{}-{}-{}-{:03}", self.loaded.form.form_id, self.mode.as_str(), self.patient, self.index + 1)
    }
}

struct RunOutput {
    state: SessionState,
    metrics: RunMetrics,
    record: CompletionRecord,
    calls: Vec<CallRecord>,
}

fn run_job(cfg: &RunConfig, job: &Job, backend: Arc<dyn ChatBackend>, patient_backend: Arc<dyn ChatBackend>) -> Result<RunOutput, CliError> {
    let form = &job.loaded.form;
    let ledger = job.loaded.ledger.as_ref().ok_or_else(|| {
        CliError::Usage(format!("{}: simulated patients need a ground-truth ledger (--ledger)", form.form_id))
    })?;
    let patient = simulated_patient(job.patient, form, ledger).ok_or_else(|| CliError::Usage(format!("unknown patient {}", job.patient)))?;
    let gw = cfg.backend.gateway(backend);
    let pgw = cfg.backend.gateway(patient_backend);
    let clock = cfg.backend.clock();
    let ctx = SimContext { form, gateway: &gw, patient_gateway: &pgw, patient: patient.as_ref(), clock: clock.as_ref(), config: &cfg.flow };
    let sid = job.session_id();
    let label = job.patient.to_string();
    let state = match (job.mode, job.prepared) {
        (Mode::Modular, Some(p)) => run_modular(&ctx, &p.grouping, &p.kb, &sid, &label),
        (Mode::Modular, None) => unreachable!("modular jobs are prepared"),
        (Mode::Baseline, _) => run_baseline(&ctx, &sid, &label),
    }
    .map_err(|e| CliError::Finding(format!("{sid}: {e}")))?;
    let metrics = run_metrics(&state, form, Some(ledger), &EvalConfig::default());
    let record = state.finalize(form).unwrap_or_else(|_| state.partial_record(form));
    Ok(RunOutput { state, metrics, record, calls: gw.ledger().records() })
}

/// Runs jobs on up to the gateway in-flight cap of worker threads. Script
/// files are consumed in order, so they run one job at a time.
fn run_all(cfg: &RunConfig, jobs: &[Job]) -> Result<Vec<RunOutput>, CliError> {
    let backend = cfg.backend.backend()?;
    let patient_backend = cfg.backend.patient_backend()?;
    let workers = if matches!(cfg.backend, BackendChoice::Scripted(_)) { 1 } else { DEFAULT_INFLIGHT_CAP.min(jobs.len()) };
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunOutput, CliError>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let out = run_job(cfg, job, backend.clone(), patient_backend.clone());
                results.lock().unwrap()[i] = Some(out);
            });
        }
    });
    results.into_inner().unwrap().into_iter().map(|r| r.expect("every job ran")).collect()
}

fn write_run(dir: &Path, run: &RunOutput) -> Result<(), CliError> {
    let dir = dir.join(&run.state.session_id);
    write_json(&dir.join("transcript.json"), &run.state.transcript())?;
    write_json(&dir.join("record.json"), &run.record)?;
    write_json(&dir.join("metrics.json"), &run.metrics)?;
    write_text(&dir.join("calls.jsonl"), &calls_jsonl(&run.calls))
}

#[derive(Debug, Serialize)]
struct Summary {
    form_id: String,
    mode: Mode,
    patient: String,
    runs: usize,
    completed: usize,
    mean_turns: f64,
    mean_prompt_tokens: f64,
    mean_completion_tokens: f64,
    mean_accuracy: Option<f64>,
    errors: BTreeMap<ErrorCategory, usize>,
}

fn summarize(form_id: &str, mode: Mode, patient: PatientKind, runs: &[RunOutput]) -> Summary {
    let n = runs.len() as f64;
    let mean = |f: &dyn Fn(&RunMetrics) -> f64| runs.iter().map(|r| f(&r.metrics)).sum::<f64>() / n;
    let acc: Vec<f64> = runs.iter().filter_map(|r| r.metrics.accuracy).collect();
    let mut errors = BTreeMap::new();
    for r in runs {
        for c in ErrorCategory::ALL {
            if let Some(k) = r.metrics.errors.get(c) {
                *errors.entry(c).or_insert(0) += k;
            }
        }
    }
    Summary {
        form_id: form_id.to_string(),
        mode,
        patient: patient.to_string(),
        runs: runs.len(),
        completed: runs.iter().filter(|r| r.metrics.completed).count(),
        mean_turns: mean(&|m| m.system_turns as f64),
        mean_prompt_tokens: mean(&|m| m.prompt_tokens as f64),
        mean_completion_tokens: mean(&|m| m.completion_tokens as f64),
        mean_accuracy: (!acc.is_empty()).then(|| acc.iter().sum::<f64>() / acc.len() as f64),
        errors,
    }
}

pub fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let runs = cfg.runs(1)?;
    let loaded = load_form(cfg.one_form()?, cfg.ledger.as_deref())?;
    let patient = match cfg.patients.as_slice() {
        [one] => *one,
        _ => return Err(CliError::Usage("simulate takes exactly one --patient".into())),
    };
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("runs/simulate"));
    let prepared = match cfg.mode {
        Mode::Modular => {
            let (p, calls, manifest) = prepare_form(cfg, &loaded.form, cfg.backend.backend()?)?;
            write_text(&out.join("preprocess.calls.jsonl"), &calls_jsonl(&calls))?;
            write_text(&out.join("kb.manifest.json"), &manifest)?;
            Some(p)
        }
        Mode::Baseline => None,
    };
    let jobs: Vec<Job> = (0..runs)
        .map(|index| Job { loaded: &loaded, prepared: prepared.as_ref(), mode: cfg.mode, patient, index })
        .collect();
    let outputs = run_all(cfg, &jobs)?;
    for run in &outputs {
        write_run(&out, run)?;
    }
    let summary = summarize(&loaded.form.form_id, cfg.mode, patient, &outputs);
    write_json(&out.join("summary.json"), &summary)?;
    let errors: usize = summary.errors.values().sum();
    println!(
        "{} {} {}: {} runs, {} completed, mean turns {:.1}, mean prompt tokens {:.0}, accuracy {}, errors {errors}",
        summary.form_id,
        cfg.mode.as_str(),
        summary.patient,
        summary.runs,
        summary.completed,
        summary.mean_turns,
        summary.mean_prompt_tokens,
        summary.mean_accuracy.map(|a| format!("{a:.3}")).unwrap_or_else(|| "n/a".into()),
    );
    println!("wrote {}", out.display());
    Ok(())
}

pub fn compare(cfg: &RunConfig) -> Result<(), CliError> {
    let runs = cfg.runs(1)?;
    let form_args: Vec<String> = if cfg.forms.is_empty() {
        followup_core::fixtures::replicas().into_iter().map(|(f, _)| f.form_id).collect()
    } else {
        cfg.forms.clone()
    };
    let forms: Vec<LoadedForm> = form_args.iter().map(|f| load_form(f, cfg.ledger.as_deref())).collect::<Result<_, _>>()?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("runs/compare"));
    let mut prepared = Vec::new();
    for loaded in &forms {
        let (p, calls, _) = prepare_form(cfg, &loaded.form, cfg.backend.backend()?)?;
        write_text(&out.join(format!("{}.preprocess.calls.jsonl", loaded.form.form_id)), &calls_jsonl(&calls))?;
        prepared.push(p);
    }
    let mut jobs = Vec::new();
    for (loaded, p) in forms.iter().zip(&prepared) {
        for &patient in &cfg.patients {
            for index in 0..runs {
                for mode in [Mode::Modular, Mode::Baseline] {
                    jobs.push(Job { loaded, prepared: Some(p), mode, patient, index });
                }
            }
        }
    }
    let outputs = run_all(cfg, &jobs)?;
    for run in &outputs {
        write_run(&out.join("runs"), run)?;
    }
    let pick = |mode: Mode| outputs.iter().filter(|r| r.metrics.mode == mode).map(|r| r.metrics.clone()).collect::<Vec<_>>();
    let report = compare_runs(&pick(Mode::Modular), &pick(Mode::Baseline), &EvalConfig::default())
        .map_err(|e| CliError::Finding(e.to_string()))?;
    write_json(&out.join("report.json"), &report)?;
    print!("{report}");
    println!("wrote {}", out.display());
    Ok(())
}
