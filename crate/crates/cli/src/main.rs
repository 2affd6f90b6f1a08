use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mmdiv_cli::commands::{self, SweepKind, DEFAULT_X0};
use mmdiv_cli::config::{self, Overrides};
use mmdiv_cli::CliError;

/// Periodic dividends with capital injection for Markov-modulated surplus models.
#[derive(Debug, Parser)]
#[command(name = "mmdiv", version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `mc.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for CSV files.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Overrides `mc.n_paths`.
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Overrides `mc.dt`.
    #[arg(long, global = true)]
    dt: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Value iteration: values.csv, barriers.csv, convergence.csv.
    Solve,
    /// Band membership of a barrier file: verdicts.csv.
    Verify {
        #[arg(long)]
        barriers: PathBuf,
        /// Barrier resolution absorbed by the test (default: grid spacing).
        #[arg(long)]
        slack: Option<f64>,
    },
    /// NPV of a strategy: npv.csv.
    Simulate {
        /// mmpcb, mmpcb-upper, never-pay or pay-all-at-0-barrier.
        #[arg(long, default_value = "mmpcb")]
        strategy: String,
        #[arg(long)]
        barriers: Option<PathBuf>,
        /// Comma-separated starting capitals.
        #[arg(long, value_delimiter = ',')]
        x0: Vec<f64>,
        /// Also write per-path samples to samples.csv.
        #[arg(long)]
        samples: bool,
    },
    /// Deterministic clocks 2^-n, n = 0..=n_max: sweep.csv.
    SweepDet {
        #[arg(long)]
        n_max: usize,
    },
    /// Exponential clocks of rate n = 1..=n_max: sweep.csv.
    SweepPoisson {
        #[arg(long)]
        n_max: usize,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .ok_or_else(|| CliError::Usage("--config is required".into()))?;
    let mut cfg = config::load(&path)?;
    cfg.apply(&Overrides {
        seed: cli.seed,
        paths: cli.paths,
        dt: cli.dt,
    })?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Solve => commands::solve(&cfg, out).map(|_| ()),
        Command::Verify { barriers, slack } => commands::verify(&cfg, &barriers, slack, out).map(|_| ()),
        Command::Simulate {
            strategy,
            barriers,
            x0,
            samples,
        } => {
            let x0 = if x0.is_empty() { DEFAULT_X0.to_vec() } else { x0 };
            commands::simulate(&cfg, &strategy, barriers.as_deref(), &x0, samples, out).map(|_| ())
        }
        Command::SweepDet { n_max } => commands::sweep(&cfg, SweepKind::Deterministic, n_max, out).map(|_| ()),
        Command::SweepPoisson { n_max } => commands::sweep(&cfg, SweepKind::Poisson, n_max, out).map(|_| ()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
