// Copyright 2026 The dcrab Authors
// SPDX-License-Identifier: Apache-2.0

//! `dcrab` command line: optimize, evaluate, diagnose and serve.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use dcrab::diagnostics::{bound_report, BoundInputs};
use dcrab::loop_server::{serve_exchange_dir, TcpServer, Transport};
use dcrab::objectives::evaluate;
use dcrab::optimizer::{run, OptimizationRecord, Termination};
use dcrab::pulses::Pulse;

use dcrab_cli::config::{read_json, RunConfig};

#[derive(Parser)]
#[command(
    name = "dcrab",
    version,
    about = "Derivative-free quantum optimal control (CRAB / dCRAB)"
)]
struct Cli {
    /// Run configuration (for `diagnose`: the bound inputs).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for ensemble runs.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run CRAB or dCRAB against the simulated model.
    Optimize,
    /// Score pulse CSV files (default: the configured guess).
    Evaluate { pulses: Vec<PathBuf> },
    /// Print speed-limit, capacity and error bounds for an inputs file.
    Diagnose,
    /// Run one closed-loop session over the configured transport.
    Serve,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<u8> {
    let path = cli.config.as_deref().context("--config PATH is required")?;
    match &cli.command {
        Command::Optimize => optimize(cli, path),
        Command::Evaluate { pulses } => evaluate_pulses(path, pulses),
        Command::Diagnose => diagnose(path),
        Command::Serve => serve(cli, path),
    }
}

/// 0 for a clean finish, 1 when a requested target was missed, 2 on abort.
fn exit_code(record: &OptimizationRecord) -> u8 {
    match record.termination {
        Termination::TargetReached | Termination::Stalled => 0,
        Termination::BudgetExhausted if record.config.target_j.is_some() => 1,
        Termination::BudgetExhausted => 0,
        Termination::Aborted(_) => 2,
    }
}

#[derive(Serialize)]
struct RunLine<'a> {
    seed: u64,
    #[serde(rename = "final_J")]
    final_j: f64,
    termination: String,
    evaluations: usize,
    output: &'a Path,
}

fn report(record: &OptimizationRecord, dir: &Path) -> Result<()> {
    record
        .write_outputs(dir)
        .with_context(|| format!("writing {}", dir.display()))?;
    let line = RunLine {
        seed: record.seed,
        final_j: record.final_j,
        termination: record.termination.to_string(),
        evaluations: record.total_evaluations,
        output: dir,
    };
    println!("{}", serde_json::to_string(&line)?);
    Ok(())
}

fn output_dir(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    cli.output
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("dcrab-output"))
}

fn optimize(cli: &Cli, path: &Path) -> Result<u8> {
    let cfg = RunConfig::load(path)?;
    let resolved = cfg.resolve()?;
    let first = cli.seed.unwrap_or(cfg.seed);
    let dir = output_dir(cli, &cfg);
    let problem = cfg.problem(&resolved);
    let one = |seed: u64| -> Result<OptimizationRecord> {
        let mut fom = cfg.simulator(&resolved);
        Ok(run(cfg.algorithm, &problem, &cfg.search, seed, &mut fom)?)
    };
    if cfg.ensemble == 1 {
        let record = one(first)?;
        report(&record, &dir)?;
        return Ok(exit_code(&record));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.max(1))
        .build()?;
    let seeds: Vec<u64> = (0..cfg.ensemble as u64).map(|k| first + k).collect();
    let records = pool.install(|| {
        seeds
            .par_iter()
            .map(|&s| one(s))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut code = 0;
    for record in &records {
        report(record, &dir.join(format!("seed_{}", record.seed)))?;
        code = code.max(exit_code(record));
    }
    Ok(code)
}

#[derive(Serialize)]
struct EvaluationLine {
    raw: f64,
    penalty: f64,
    #[serde(rename = "J")]
    j: f64,
}

fn evaluate_pulses(path: &Path, files: &[PathBuf]) -> Result<u8> {
    let cfg = RunConfig::load(path)?;
    let resolved = cfg.resolve()?;
    let pulses = if files.is_empty() {
        resolved.guess.clone()
    } else {
        files
            .iter()
            .map(|f| Pulse::read_csv(f).with_context(|| format!("reading {}", f.display())))
            .collect::<Result<Vec<_>>>()?
    };
    if pulses.len() != resolved.guess.len() {
        bail!(
            "{} pulse files for a model with {} controls",
            pulses.len(),
            resolved.guess.len()
        );
    }
    let b = evaluate(&cfg.objective, &resolved.model, &resolved.initial, &pulses)?;
    println!(
        "{}",
        serde_json::to_string(&EvaluationLine {
            raw: b.raw,
            penalty: b.penalty,
            j: b.j
        })?
    );
    Ok(0)
}

fn diagnose(path: &Path) -> Result<u8> {
    let inputs: BoundInputs = read_json(path)?;
    let report = bound_report(&inputs)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(0)
}

fn serve(cli: &Cli, path: &Path) -> Result<u8> {
    let cfg = RunConfig::load(path)?;
    let resolved = cfg.resolve()?;
    let session = cfg.session(&resolved, cli.seed.unwrap_or(cfg.seed))?;
    let outcome = match &session.transport {
        Transport::Tcp { addr } => {
            let server =
                TcpServer::bind(addr.as_str()).with_context(|| format!("binding {addr}"))?;
            println!("listening on {}", server.local_addr()?);
            std::io::stdout().flush()?;
            server.accept_session(&session)?
        }
        Transport::ExchangeDir { dir } => {
            println!("exchanging through {}", dir.display());
            std::io::stdout().flush()?;
            serve_exchange_dir(dir, &session)?
        }
    };
    report(&outcome.record, &output_dir(cli, &cfg))?;
    Ok(exit_code(&outcome.record))
}
