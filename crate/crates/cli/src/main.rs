//! `malkin`: locate forced periodic solutions bifurcating from a limit cycle
//! and check the predictions against the Poincaré map.

mod config;
mod output;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use malkin_core::sysdef::builtin_registry;

use pipeline::Stage;

#[derive(Debug, Parser)]
#[command(name = "malkin", version, about)]
struct Cli {
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for grid evaluation and multistart.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Multistart jitter seed; 0 keeps the regular grid.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Full pipeline: cycle, adjoint, Malkin zeros and sweep verification.
    Analyze { config: PathBuf },
    /// Stop after the Malkin function and its zeros.
    Malkin { config: PathBuf },
    /// Print the built-in systems and their parameters.
    ListSystems,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("cannot set up the thread pool")?;
    }
    let (path, stage) = match &cli.command {
        Command::ListSystems => {
            list_systems();
            return Ok(true);
        }
        Command::Analyze { config } => (config, Stage::Full),
        Command::Malkin { config } => (config, Stage::Malkin),
    };
    let mut cfg = config::load(path)?;
    if let Some(dir) = cli.out {
        cfg.output.dir = dir;
    }
    if let Some(seed) = cli.seed {
        cfg.verify.multistart.seed = seed;
    }
    let outcome = pipeline::run(&cfg, stage)?;
    output::write_all(&cfg.output.dir, &outcome.report, &outcome.profile)?;
    summarize(&outcome.report);
    Ok(outcome.report.passed)
}

fn list_systems() {
    let registry = builtin_registry();
    if registry.is_empty() {
        println!("(no built-in systems)");
    }
    for b in registry {
        println!("{} (dimension {}, forcing period {})", b.name, b.dimension, b.default_forcing_period);
        println!("  {}", b.summary);
        for p in b.params {
            println!("  param {}: {} ({})", p.name, p.doc, p.kind);
        }
    }
}

fn summarize(report: &pipeline::Report) {
    println!("system {}: T* = {:.12}, multipliers {:?}", report.system.name, report.cycle.period, report.cycle.floquet.moduli);
    match &report.malkin.note {
        Some(note) => println!("{note}"),
        None => println!("{:>14} {:>6} {:>10}", "theta*", "index", "mult"),
    }
    for z in &report.malkin.zeros {
        let mult = serde_json::to_string(&z.multiplicity_estimate).unwrap_or_default();
        println!("{:>14.10} {:>+6} {:>10}", z.theta_star, z.index, mult);
    }
    if let Some(sweep) = &report.sweep {
        for r in &sweep.per_eps {
            println!("eps {}: {} fixed points, {} matched, gamma sum {}", r.eps, r.fixed_points.len(), r.matches.len(), r.gamma_sum);
        }
        println!("{}", sweep.audit.statement);
    }
    for a in &report.assertions {
        println!("[{}] {}: {}", if a.passed { "PASS" } else { "FAIL" }, a.name, a.detail);
    }
}
