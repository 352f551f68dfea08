use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use relalloc_cli::commands::{
    cmd_allocate, cmd_constants, cmd_converge, cmd_fractions, cmd_oracle, cmd_simulate,
};
use relalloc_cli::config::{parse_config, ExperimentConfig};

/// Bayesian sample allocation for system reliability estimation.
#[derive(Debug, Parser)]
#[command(name = "relalloc", version)]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides `master_seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: RELALLOC_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file; overrides `output_path` in the config. Stdout otherwise.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Plan stage two from observed stage-one data.
    Allocate {
        /// Stage-one counts (JSON).
        #[arg(long)]
        stage_one: PathBuf,
        /// Total budget; defaults to the single m_grid entry.
        #[arg(long)]
        m: Option<u64>,
    },
    /// Monte Carlo Bayes risk for every budget (JSON).
    Simulate,
    /// Convergence table of m times risk (CSV).
    Converge,
    /// Realized versus limiting allocation fractions (JSON).
    Fractions {
        /// Budget; defaults to the last m_grid entry.
        #[arg(long)]
        m: Option<u64>,
    },
    /// Exact enumeration and constant cross-checks (JSON).
    Oracle,
    /// Closed-form asymptotic constants (JSON).
    Constants,
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli.config.as_deref().context("--config is required")?;
    let mut cfg = parse_config(path)?;
    if let Some(seed) = cli.seed {
        cfg.simulation.master_seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_path = Some(out.clone());
    }
    Ok(cfg)
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            Ok(out.flush()?)
        }
    }
}

fn pretty<T: serde::Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn threads(cli: &Cli) -> Result<Option<usize>> {
    if let Some(n) = cli.threads {
        return Ok(Some(n));
    }
    match std::env::var("RELALLOC_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .with_context(|| format!("RELALLOC_THREADS: not a thread count: {v:?}")),
        Err(_) => Ok(None),
    }
}

/// Returns whether every check passed.
fn run(cli: &Cli) -> Result<bool> {
    let cfg = load(cli)?;
    let out = cfg.output_path.as_deref();
    match &cli.command {
        Command::Allocate { stage_one, m } => {
            let (plan, table) = cmd_allocate(&cfg, stage_one, *m)?;
            emit(out, &pretty(&plan)?)?;
            eprint!("{table}");
        }
        Command::Simulate => emit(out, &pretty(&cmd_simulate(&cfg)?)?)?,
        Command::Converge => emit(out, &cmd_converge(&cfg)?)?,
        Command::Fractions { m } => emit(out, &pretty(&cmd_fractions(&cfg, *m)?)?)?,
        Command::Oracle => {
            let report = cmd_oracle(&cfg);
            emit(out, &pretty(&report)?)?;
            return Ok(report.ok);
        }
        Command::Constants => emit(out, &pretty(&cmd_constants(&cfg)?)?)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = threads(&cli).and_then(|n| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = n {
            builder = builder.num_threads(n);
        }
        let pool = builder.build().context("cannot start thread pool")?;
        pool.install(|| run(&cli))
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
