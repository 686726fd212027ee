use std::path::PathBuf;
use std::process::ExitCode;

use ares_cli::{commands, CliResult, ExperimentConfig};
use clap::{Args, Parser, Subcommand};

/// Attack-resilient input and state estimation experiments.
#[derive(Parser)]
#[command(name = "ares", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of simulated steps.
    #[arg(long, global = true)]
    horizon: Option<usize>,
    /// Detector significance level.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    no_attack_constraints: bool,
    #[arg(long, global = true)]
    no_state_constraints: bool,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate ground-truth trajectories.
    Simulate,
    /// Run the estimator and write metrics and the step log.
    Estimate {
        /// Trajectory CSV; simulated from the config when absent.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// χ² decisions for a step log.
    Detect {
        #[arg(long)]
        steps: PathBuf,
    },
    /// Monte-Carlo stability study.
    Montecarlo {
        /// Number of consecutive seeds starting at the first configured one.
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Constrained against unconstrained estimation on the same trajectory.
    Compare,
}

fn config(common: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(h) = common.horizon {
        cfg.horizon = h;
    }
    if let Some(a) = common.alpha {
        cfg.alpha = a;
    }
    if common.no_attack_constraints {
        cfg.attack_constraints = false;
    }
    if common.no_state_constraints {
        cfg.state_constraints = false;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<Vec<PathBuf>> {
    let cfg = config(&cli.common)?;
    match cli.command {
        Command::Simulate => commands::simulate(&cfg),
        Command::Estimate { trajectory } => commands::estimate(&cfg, trajectory.as_deref()),
        Command::Detect { steps } => commands::detect(&cfg, &steps).map(|p| vec![p]),
        Command::Montecarlo { runs } => commands::montecarlo(&cfg, runs),
        Command::Compare => commands::compare(&cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
