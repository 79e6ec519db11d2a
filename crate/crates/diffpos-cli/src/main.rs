//! `diffpos` — command-line front end for the differential positivity
//! toolkit: simulate benchmark systems, certify cone contraction along
//! sampled trajectories, split strictly positive maps into dominant and
//! complementary spectral subspaces, and sweep parameters over a grid.
//!
//! Jobs are described by JSON config files (machine-generable for sweeps)
//! and write plot-ready CSV series plus JSON reports into an output
//! directory. Standard output is reserved for the `pf` subcommand's JSON;
//! everything else goes to standard error.
//!
//! Exit codes are stable: `0` success/pass, `1` analytic negative
//! (certification failed, map not strictly positive), `2` configuration
//! error, `3` runtime blow-up or domain escape.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "diffpos", version, about = "Differential positivity toolkit", disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate a model and write trajectory.csv, diagnostics.csv, run.json.
    Simulate(JobArgs),
    /// Run a sampled contraction certification and write certificate.json.
    Certify(JobArgs),
    /// Test a linear map for strict cone positivity and print its spectral
    /// splitting as JSON on standard output.
    Pf(PfArgs),
    /// Re-run certification over a parameter grid and write sweep.csv.
    Sweep(JobArgs),
}

/// Arguments shared by the directory-writing subcommands.
#[derive(Args)]
struct JobArgs {
    /// Path to the JSON job configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the config's certification block.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweeps (fallback: DIFFPOS_THREADS, then all cores).
    #[arg(long)]
    threads: Option<usize>,
}

/// Arguments of the `pf` subcommand.
#[derive(Args)]
struct PfArgs {
    /// JSON file holding {"matrix": [[...]], "cone": {...}}.
    #[arg(long, conflicts_with_all = ["matrix", "cone"])]
    config: Option<PathBuf>,
    /// JSON file holding the matrix alone (requires --cone).
    #[arg(long, requires = "cone")]
    matrix: Option<PathBuf>,
    /// JSON file holding the cone alone (requires --matrix).
    #[arg(long, requires = "matrix")]
    cone: Option<PathBuf>,
    /// Optional directory to also write the printed JSON into (pf.json).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Simulate(a) => commands::simulate(a),
        Cmd::Certify(a) => commands::certify(a),
        Cmd::Pf(a) => commands::pf(a),
        Cmd::Sweep(a) => commands::sweep(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("diffpos: {e}");
            ExitCode::from(e.code())
        }
    }
}
