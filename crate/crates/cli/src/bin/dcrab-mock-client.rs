// Copyright 2026 The dcrab Authors
// SPDX-License-Identifier: Apache-2.0

//! Stand-in experiment for `dcrab serve`: connects over TCP and answers
//! every pulse request with the simulated figure of merit of a run config.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;

use dcrab::loop_server::run_tcp_client;
use dcrab::optimizer::FomEvaluator;
use dcrab_cli::config::RunConfig;

#[derive(Parser)]
#[command(name = "dcrab-mock-client", version)]
struct Args {
    /// Server address, `host:port`.
    #[arg(long)]
    addr: String,
    /// Run configuration describing the simulated experiment.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
}

fn main() -> ExitCode {
    match client(&Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn client(args: &Args) -> Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let resolved = cfg.resolve()?;
    let mut fom = cfg.simulator(&resolved);
    let summary = run_tcp_client(args.addr.as_str(), |iter, pulses| {
        Ok((fom.evaluate(iter, pulses)?.j, None))
    })?;
    for e in &summary.errors {
        eprintln!("server error: {e}");
    }
    println!(
        "session {} closed after {} evaluations: {}",
        summary.session, summary.evaluations, summary.close_reason
    );
    Ok(())
}
