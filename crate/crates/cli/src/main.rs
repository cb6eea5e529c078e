use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sqopt_cli::config::{BackendName, ExperimentConfig, NoiseName, Task};
use sqopt_cli::{emit_report, emit_report_to, run_config, CliError};

#[derive(Parser)]
#[command(name = "sqopt", about = "Mean estimation and convex optimization from statistical queries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment config; defaults are used for missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// CSV report path (stdout when absent); the resolved config is written
    /// next to it with a `.toml` extension.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendName>,
    #[arg(long, global = true, value_enum)]
    noise: Option<NoiseName>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Estimate the mean of a synthetic distribution in an l_q norm
    MeanEstimate,
    /// Minimize a stochastic objective over an l_p ball with a first-order method
    Optimize,
    /// Learn a margin halfspace from statistical queries
    Perceptron,
    /// Answer one statistical query under local differential privacy
    Ldp,
    /// Center-of-gravity optimization over the unit ball
    Cog,
    /// Zero-order annealing over the unit ball
    Anneal,
    /// Sweep the mean estimators over a grid of norms, dimensions and accuracies
    BenchSuite,
}

impl Command {
    fn task(self) -> Task {
        match self {
            Command::MeanEstimate => Task::MeanEstimate,
            Command::Optimize => Task::Optimize,
            Command::Perceptron => Task::Perceptron,
            Command::Ldp => Task::Ldp,
            Command::Cog => Task::Cog,
            Command::Anneal => Task::Anneal,
            Command::BenchSuite => Task::BenchSuite,
        }
    }
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let task = cli.command.task();
    let mut cfg = match &cli.config {
        Some(path) => {
            let cfg = ExperimentConfig::load(path)?;
            if cfg.task != task {
                return Err(CliError::Schema(vec![format!(
                    "config task {} does not match subcommand {}",
                    cfg.task.name(),
                    task.name()
                )]));
            }
            cfg
        }
        None => ExperimentConfig::new(task),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    if let Some(b) = cli.backend {
        cfg.oracle.backend = b;
    }
    if let Some(n) = cli.noise {
        cfg.oracle.noise = n;
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<bool, CliError> {
    let cfg = build_config(cli)?;
    let out = cfg.out.clone();
    let reports = run_config(cfg.clone())?;
    match &out {
        Some(path) => {
            emit_report_to(&reports, path)?;
            let echo = path.with_extension("toml");
            std::fs::write(&echo, cfg.resolve().to_toml()).map_err(|e| CliError::Io { path: echo, source: e })?;
        }
        None => emit_report(&reports, std::io::stdout().lock())?,
    }
    let mut ok = true;
    for r in &reports {
        for n in &r.notes {
            eprintln!("NOTE {} d={} q={} eps={}: {n}", r.task, r.dim, r.q, r.eps);
        }
        for f in &r.failures {
            eprintln!("FAIL {} d={} q={} eps={}: {f}", r.task, r.dim, r.q, r.eps);
            ok = false;
        }
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
