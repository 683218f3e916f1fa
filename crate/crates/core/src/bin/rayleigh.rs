use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayleigh::harness::{run, ExperimentKind, ExperimentSpec};

#[derive(Parser)]
#[command(version, about = "Run Rayleigh gas experiments and write CSV/JSON/NDJSON reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment file; built-in defaults are used without one.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Particle simulation: trees and tagged marginals.
    Simulate,
    /// Jump-process sampler: trees and tagged marginals.
    Idealized,
    /// Particle marginals against the grid solver over N.
    Compare,
    TreeStats,
    BoundAudit,
    /// Scaling plan as JSON.
    Plan,
    /// Diffusion parameter as JSON.
    Kappa,
    /// L1 gap to the heat-equation limit as CSV.
    HeatLimit,
}

impl Command {
    fn kind(self) -> ExperimentKind {
        match self {
            Command::Simulate => ExperimentKind::Simulate,
            Command::Idealized => ExperimentKind::Idealized,
            Command::Compare => ExperimentKind::BgConvergence,
            Command::TreeStats => ExperimentKind::TreeStats,
            Command::BoundAudit => ExperimentKind::BoundAudit,
            Command::Plan => ExperimentKind::Plan,
            Command::Kappa => ExperimentKind::Kappa,
            Command::HeatLimit => ExperimentKind::HeatLimit,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let kind = cli.command.kind();
    let mut spec = match &cli.config {
        Some(path) => match ExperimentSpec::from_file(path) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => ExperimentSpec::default_for(kind),
    };
    if spec.kind != kind {
        eprintln!("error: config is for '{}', not '{}'", spec.kind.name(), kind.name());
        return ExitCode::from(2);
    }
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    if let Some(w) = cli.workers {
        spec.workers = w;
    }
    if let Some(o) = cli.out {
        spec.output_dir = o;
    }
    match run(&spec) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", f.display());
            }
            let failures = outcome.failures();
            if failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                for c in failures {
                    eprintln!("FAILED {}: {}", c.name, c.detail);
                }
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
