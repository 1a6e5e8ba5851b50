//! Run configuration: command-line flags layered over an optional TOML file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, ValueEnum};
use followup_core::fixtures::{self, Ledger};
use followup_core::flow::FlowConfig;
use followup_core::form::FormSpec;
use followup_core::gateway::{ChatBackend, Gateway, GatewayConfig, RemoteBackend, ScriptedBackend};
use followup_core::kb::KbBuildConfig;
use followup_core::service::PatientKind;
use followup_core::sim::SimModel;
use followup_core::transcript::Mode;
use followup_core::{AnswerValue, Clock, FormError, LogicalClock, SystemClock};
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    /// A problem with the input itself, such as an invalid form.
    #[error("{0}")]
    Finding(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Finding(_) => 1,
            CliError::Usage(_) | CliError::Io(_) => 2,
        }
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    Modular,
    Baseline,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Modular => Mode::Modular,
            ModeArg::Baseline => Mode::Baseline,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendChoice {
    /// Deterministic in-process model.
    Sim,
    /// OpenAI-compatible endpoint configured through LLM_BASE_URL, LLM_API_KEY, LLM_MODEL.
    Remote,
    /// Replies replayed from a script file.
    Scripted(PathBuf),
}

impl std::str::FromStr for BackendChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sim" => Ok(BackendChoice::Sim),
            "remote" => Ok(BackendChoice::Remote),
            _ => match s.strip_prefix("scripted:") {
                Some(path) if !path.is_empty() => Ok(BackendChoice::Scripted(PathBuf::from(path))),
                _ => Err(format!("unknown backend `{s}` (expected sim, remote or scripted:PATH)")),
            },
        }
    }
}

impl BackendChoice {
    pub fn is_deterministic(&self) -> bool {
        !matches!(self, BackendChoice::Remote)
    }

    pub fn backend(&self) -> Result<Arc<dyn ChatBackend>, CliError> {
        Ok(match self {
            BackendChoice::Sim => Arc::new(SimModel),
            BackendChoice::Remote => Arc::new(RemoteBackend::from_env().map_err(CliError::Usage)?),
            BackendChoice::Scripted(path) => Arc::new(ScriptedBackend::from_file(path).map_err(|e| CliError::io(path, e))?),
        })
    }

    /// Simulated patients talk to the remote model when one is configured,
    /// otherwise to the in-process model; scripts only drive the system side.
    pub fn patient_backend(&self) -> Result<Arc<dyn ChatBackend>, CliError> {
        match self {
            BackendChoice::Remote => self.backend(),
            _ => Ok(Arc::new(SimModel)),
        }
    }

    pub fn clock(&self) -> Arc<dyn Clock> {
        if self.is_deterministic() {
            Arc::new(LogicalClock::default())
        } else {
            Arc::new(SystemClock)
        }
    }

    pub fn gateway(&self, backend: Arc<dyn ChatBackend>) -> Gateway {
        Gateway::with_config(backend, GatewayConfig::default(), self.clock())
    }
}

/// Flags shared by the batch commands. Any flag left unset falls back to the
/// config file, then to the built-in default.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Form file, or the id of a bundled replica (form-1, form-2, form-3). Repeatable for compare.
    #[arg(long)]
    pub form: Vec<String>,
    /// Ground-truth ledger; defaults to `<form>.ledger.json` next to the form file.
    #[arg(long)]
    pub ledger: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// scripted or persona_k; repeatable for compare.
    #[arg(long)]
    pub patient: Vec<String>,
    /// Runs per configuration (simulate, compare) or clustering trials (cluster).
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// sim, remote or scripted:PATH.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub max_turns: Option<usize>,
    #[arg(long)]
    pub max_reasks: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub form: Vec<String>,
    pub ledger: Option<PathBuf>,
    pub mode: Option<ModeArg>,
    #[serde(default)]
    pub patient: Vec<String>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub backend: Option<String>,
    pub out: Option<PathBuf>,
    pub max_turns: Option<usize>,
    pub max_reasks: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(FileConfig::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

pub const DEFAULT_SEED: u64 = 7;

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub forms: Vec<String>,
    pub ledger: Option<PathBuf>,
    pub mode: Mode,
    pub patients: Vec<PatientKind>,
    pub trials: Option<usize>,
    pub seed: u64,
    pub backend: BackendChoice,
    pub out: Option<PathBuf>,
    pub flow: FlowConfig,
}

impl RunConfig {
    pub fn resolve(args: RunArgs, file: FileConfig) -> Result<Self, CliError> {
        let pick = |flag: Vec<String>, conf: Vec<String>| if flag.is_empty() { conf } else { flag };
        let patients = pick(args.patient, file.patient)
            .iter()
            .map(|p| p.parse::<PatientKind>().map_err(CliError::Usage))
            .collect::<Result<Vec<_>, _>>()?;
        if patients.contains(&PatientKind::Live) {
            return Err(CliError::Usage("batch runs need a simulated patient (scripted or persona_k)".into()));
        }
        let backend = args.backend.or(file.backend).unwrap_or_else(|| "sim".into()).parse().map_err(CliError::Usage)?;
        let mut flow = FlowConfig::default();
        if let Some(n) = args.max_turns.or(file.max_turns) {
            flow.caps.max_turns = n;
        }
        if let Some(n) = args.max_reasks.or(file.max_reasks) {
            flow.caps.max_reasks = n;
        }
        Ok(RunConfig {
            forms: pick(args.form, file.form),
            ledger: args.ledger.or(file.ledger),
            mode: args.mode.or(file.mode).unwrap_or(ModeArg::Modular).into(),
            patients: if patients.is_empty() { vec![PatientKind::Scripted] } else { patients },
            trials: args.trials.or(file.trials),
            seed: args.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            backend,
            out: args.out.or(file.out),
            flow,
        })
    }

    pub fn kb_config(&self) -> KbBuildConfig {
        KbBuildConfig { seed: self.seed, ..KbBuildConfig::default() }
    }

    /// The single form a command works on.
    pub fn one_form(&self) -> Result<&str, CliError> {
        match self.forms.as_slice() {
            [one] => Ok(one),
            [] => Err(CliError::Usage("--form is required".into())),
            _ => Err(CliError::Usage("this command takes exactly one --form".into())),
        }
    }

    /// Positive run count, defaulting to `default`.
    pub fn runs(&self, default: usize) -> Result<usize, CliError> {
        match self.trials.unwrap_or(default) {
            0 => Err(CliError::Usage("--trials must be at least 1".into())),
            n => Ok(n),
        }
    }
}

pub struct LoadedForm {
    pub form: FormSpec,
    pub ledger: Option<Ledger>,
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn parse_ledger(path: &Path) -> Result<Ledger, CliError> {
    let map: BTreeMap<String, AnswerValue> =
        serde_json::from_str(&read(path)?).map_err(|e| CliError::Finding(format!("{}: {e}", path.display())))?;
    Ok(map)
}

pub fn form_error(source: &str, e: FormError) -> CliError {
    match e {
        FormError::Invalid(report) => CliError::Finding(
            std::iter::once(format!("{source}: {} finding(s)", report.findings.len()))
                .chain(report.findings.iter().map(|f| format!("  {f}")))
                .collect::<Vec<_>>()
                .join("\n"),
        ),
        other => CliError::Finding(format!("{source}: {other}")),
    }
}

/// Loads a bundled replica by id or a validated form file with its ledger.
pub fn load_form(spec: &str, ledger: Option<&Path>) -> Result<LoadedForm, CliError> {
    if let Some((form, bundled)) = fixtures::by_id(spec) {
        let ledger = match ledger {
            Some(p) => parse_ledger(p)?,
            None => bundled,
        };
        return Ok(LoadedForm { form, ledger: Some(ledger) });
    }
    let path = Path::new(spec);
    let form = followup_core::parse_form(&read(path)?).map_err(|e| form_error(spec, e))?;
    let sibling = path.with_extension("ledger.json");
    let ledger = match ledger {
        Some(p) => Some(parse_ledger(p)?),
        None if sibling.is_file() => Some(parse_ledger(&sibling)?),
        None => None,
    };
    Ok(LoadedForm { form, ledger })
}
