mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{GuessKind, RunConfig};

#[derive(Parser)]
#[command(name = "berthplan", version, about = "Ship docking trajectory planner")]
struct Cli {
    /// TOML run configuration; bundled data is used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the configured one).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the offline problem and write a reusable warm-start file.
    Offline {
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Plan one scenario with the semionline planner.
    Plan {
        #[arg(long)]
        scenario: String,
        #[arg(long, value_enum)]
        guess: Option<GuessKind>,
        #[arg(long)]
        warm_start: Option<PathBuf>,
    },
    /// Plan every scenario with both guesses and tabulate the comparison.
    Batch {
        #[arg(long)]
        warm_start: Option<PathBuf>,
        /// Worker threads; defaults to the number of cores.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Re-check a solution file written by `plan` or `batch`.
    Check { solution: PathBuf },
}

pub enum Failure {
    Config(anyhow::Error),
    Solver(anyhow::Error),
    Infeasible(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Solver(_) => 2,
            Failure::Infeasible(_) => 3,
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(Failure::Config)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    match cli.command {
        Command::Offline { scenario } => commands::offline(&cfg, scenario.as_deref(), &out).map(|_| ()),
        Command::Plan { scenario, guess, warm_start } => {
            let guess = guess.unwrap_or(cfg.guess);
            commands::plan_one(&cfg, &scenario, guess, warm_start.as_deref(), &out)
        }
        Command::Batch { warm_start, jobs } => commands::batch(&cfg, warm_start.as_deref(), jobs, &out),
        Command::Check { solution } => commands::check(&cfg, &solution, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(e) => eprintln!("error: {e:#}"),
                Failure::Solver(e) => eprintln!("solver failure: {e:#}"),
                Failure::Infeasible(m) => eprintln!("infeasible: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
