use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use blerelay::scenario::{Scenario, ScenarioError, SweepSpec};
use blerelay::sim::{run_scenario, RunOptions};
use blerelay::sweep::{run_sweep, SweepOutcome};

#[derive(Parser)]
#[command(name = "blerelay", version, about = "BLE advertising relay simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Table,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario.
    Run {
        scenario: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write a per-event trace (time_us, device, kind, detail).
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Run a parameter sweep.
    Sweep {
        sweep: PathBuf,
        /// Override the base seed; repetitions use seed, seed+1, ...
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
}

enum Failure {
    Invalid(String),
    Fault(String),
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Io { .. } => Failure::Fault(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Failure::Fault(format!("{}: {e}", path.display()))),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| Failure::Fault(e.to_string())),
    }
}

fn render(outcome: &SweepOutcome, format: Format) -> Result<String, Failure> {
    match format {
        Format::Csv => outcome.to_csv().map_err(|e| Failure::Fault(e.to_string())),
        Format::Table => Ok(outcome.summary()),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { scenario, seed, out, trace, format } => {
            let mut s = Scenario::from_file(&scenario)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            if let Some(path) = &trace {
                let outcome = run_scenario(&s, RunOptions { trace: true, history: false });
                fs::write(path, outcome.trace.as_str())
                    .map_err(|e| Failure::Fault(format!("{}: {e}", path.display())))?;
            }
            let outcome = run_sweep(&SweepSpec::single(s), 1).map_err(|e| Failure::Fault(e.to_string()))?;
            write_output(out.as_deref(), &render(&outcome, format)?)?;
            match outcome.aborted {
                Some(reason) => Err(Failure::Fault(reason)),
                None => Ok(()),
            }
        }
        Command::Sweep { sweep, seed, out, jobs, format } => {
            let mut spec = SweepSpec::from_file(&sweep)?;
            if let Some(seed) = seed {
                spec.base.seed = seed;
            }
            let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let outcome = run_sweep(&spec, jobs).map_err(|e| Failure::Fault(e.to_string()))?;
            write_output(out.as_deref(), &render(&outcome, format)?)?;
            match outcome.aborted {
                Some(reason) => Err(Failure::Fault(reason)),
                None => Ok(()),
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Fault(msg)) => {
            eprintln!("fault: {msg}");
            ExitCode::from(1)
        }
    }
}
