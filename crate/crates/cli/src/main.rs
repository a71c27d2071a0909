//! `papl`: experiment runner for the planner-aware masked diffusion
//! laboratory.
//!
//! Exit codes: 0 when the run's checks pass, 1 on a failed check or runtime
//! failure, 2 on invalid input or an exceeded enumeration budget.

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod output;

use config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(name = "papl", version, about = "Exact checks and toy training for planner-aware masked diffusion")]
struct Cli {
    /// TOML experiment file; flags override its keys.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Greedy decoding against the standard bound on the two-token instance.
    Counterexample,
    /// Every bound against the exact log-probability of its sampler.
    ValidateBounds,
    /// Paired vanilla and planner-aware training runs.
    TrainCompare,
    /// Chi-square agreement of the samplers with their exact laws.
    SamplerCheck,
    /// Quadrature check of the time-schedule identity.
    BetaIdentity,
}

/// Invalid input: bad flags, config or table files. Maps to exit code 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_pass(pass: bool) -> Self {
        if pass {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<Usage>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<papl_core::Error>() {
            return if e.is_usage() { 2 } else { 1 };
        }
    }
    1
}

fn resolve(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = jobs;
    }
    if cfg.jobs == 0 {
        return Err(Usage("--jobs must be at least 1".into()).into());
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> anyhow::Result<Verdict> {
    let cfg = resolve(cli)?;
    match cli.command {
        Command::Counterexample => commands::counterexample::run(&cfg),
        Command::ValidateBounds => commands::bounds::run(&cfg),
        Command::TrainCompare => commands::train::run(&cfg),
        Command::SamplerCheck => commands::sampler::run(&cfg),
        Command::BetaIdentity => commands::beta::run(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Verdict::Pass) => ExitCode::SUCCESS,
        Ok(Verdict::Fail) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
