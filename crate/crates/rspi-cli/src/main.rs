use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rspi_cli::config::{load_config, ConfigError, ExperimentKind};
use rspi_cli::experiments::{run, GateStatus};

/// Risk-sensitive path integral control experiments.
#[derive(Parser)]
#[command(name = "rspi", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Control curves for a single end target or threat
    Fig1(RunArgs),
    /// Control curves for two end targets (symmetry breaking)
    Fig2(RunArgs),
    /// Control curves for two end threats
    Fig3(RunArgs),
    /// Cost-distribution study: 1000 rollouts per theta under the analytic
    /// mixture controller
    Fig4(RunArgs),
    /// Closed-form LEQG control sweep with well-posedness flags
    LeqgSweep(RunArgs),
    /// Monte Carlo estimators validated against the closed forms; exits 2
    /// when the agreement gate fails
    ValidateMc(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (JSON with an "experiment" discriminator)
    #[arg(long)]
    config: PathBuf,
    /// Master seed override
    #[arg(long)]
    seed: Option<u64>,
    /// Output path override
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Command {
    fn kind(&self) -> ExperimentKind {
        match self {
            Command::Fig1(_) => ExperimentKind::Fig1,
            Command::Fig2(_) => ExperimentKind::Fig2,
            Command::Fig3(_) => ExperimentKind::Fig3,
            Command::Fig4(_) => ExperimentKind::Fig4,
            Command::LeqgSweep(_) => ExperimentKind::LeqgSweep,
            Command::ValidateMc(_) => ExperimentKind::ValidateMc,
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Command::Fig1(a)
            | Command::Fig2(a)
            | Command::Fig3(a)
            | Command::Fig4(a)
            | Command::LeqgSweep(a)
            | Command::ValidateMc(a) => a,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let kind = cli.command.kind();
    let args = cli.command.args();

    let config = match load_config(&args.config, kind, args.seed, args.out.clone()) {
        Ok(config) => config,
        Err(e @ (ConfigError::Io { .. } | ConfigError::Json(_) | ConfigError::Invalid(_))) => {
            eprintln!("rspi: {e}");
            return ExitCode::from(1);
        }
    };
    match run(&config) {
        Ok(GateStatus::Passed) => ExitCode::SUCCESS,
        Ok(GateStatus::Failed) => {
            eprintln!("rspi: validation gate failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("rspi: {e}");
            ExitCode::from(1)
        }
    }
}
