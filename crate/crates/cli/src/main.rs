mod commands;
mod server;
mod settings;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use settings::{CliError, FileConfig, RunArgs, RunConfig};

/// Form-driven follow-up dialogues: validate forms, preview clusters, build
/// knowledge bases, run simulations and comparisons, serve the HTTP API.
#[derive(Debug, Parser)]
#[command(name = "followup", version)]
struct Cli {
    /// TOML file with defaults for the run flags; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a form; exit 1 with findings on stderr when it is not clean.
    Validate {
        #[arg(long)]
        form: String,
    },
    /// Preview the top-level question grouping, one line per group.
    Cluster(RunArgs),
    /// Build the extraction knowledge base for a form.
    KbBuild(RunArgs),
    /// Run N simulated sessions in one mode and write transcripts and metrics.
    Simulate(RunArgs),
    /// Run both modes on the same forms and patients and report the comparison.
    Compare(RunArgs),
    /// Serve the session API.
    Serve(server::ServeArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let resolve = |args: RunArgs| RunConfig::resolve(args, FileConfig::load(cli.config.as_deref())?);
    match cli.command {
        Command::Validate { ref form } => commands::validate(form),
        Command::Cluster(ref args) => commands::cluster(&resolve(args.clone())?),
        Command::KbBuild(ref args) => commands::kb_build(&resolve(args.clone())?),
        Command::Simulate(ref args) => commands::simulate(&resolve(args.clone())?),
        Command::Compare(ref args) => commands::compare(&resolve(args.clone())?),
        Command::Serve(ref args) => server::serve(args.clone()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = run(cli);
    let _ = std::io::stdout().flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
