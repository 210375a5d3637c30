//! `structpop`: equilibria, stability, simulation and bifurcation sweeps for
//! size-structured populations with constant inflow.
//!
//! Exit codes: 0 success, 1 failed reproduction check or numerical failure,
//! 2 usage or configuration error.

// `!(x < y)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use commands::{Failure, Params, SimulateArgs};
use config::RunConfig;
use output::{OutputDir, RunManifest};

#[derive(Parser)]
#[command(name = "structpop", version, about = "Size-structured population analysis")]
struct Cli {
    /// TOML run configuration; defaults to the built-in example.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Inflow rate, overriding [inflow] C.
    #[arg(long = "C", global = true)]
    c: Option<f64>,
    /// Simulated time span, overriding [sim] T.
    #[arg(long = "T", global = true)]
    t: Option<f64>,
    /// Grid cell count, overriding [grid] N.
    #[arg(long = "N", global = true)]
    n: Option<usize>,
    /// Initial density: an expression in s, or `equilibrium:<index>`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    initial: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Positive equilibria at one inflow rate.
    Equilibria {
        /// Upper end of the population scan window.
        #[arg(long = "P-hi")]
        p_hi: Option<f64>,
    },
    /// Linear stability of every positive equilibrium.
    Stability,
    /// Run the upwind scheme and write the P(t) trajectory.
    Simulate {
        /// Also store the density at every output time.
        #[arg(long)]
        density: bool,
    },
    /// Sweep C over [C_lo, C_hi] and locate folds.
    Bifurcate {
        #[arg(long = "C-lo", default_value_t = 0.0)]
        c_lo: f64,
        #[arg(long = "C-hi", default_value_t = 0.6)]
        c_hi: f64,
        #[arg(long, default_value_t = 60)]
        steps: usize,
    },
    /// Full analysis of the built-in example with pass/fail checks.
    Reproduce,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let start = Instant::now();
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(Failure::Input)?,
        None => RunConfig::default(),
    };
    let mut out = OutputDir::create(&cli.out).map_err(Failure::Input)?;
    let mut params = Params::new();
    let name = match &cli.command {
        Command::Equilibria { p_hi } => {
            commands::equilibria(&cfg, cli.c, *p_hi, cli.n, &mut out, &mut params)?;
            "equilibria"
        }
        Command::Stability => {
            commands::stability(&cfg, cli.c, cli.n, &mut out, &mut params)?;
            "stability"
        }
        Command::Simulate { density } => {
            let args = SimulateArgs { c: cli.c, t: cli.t, n: cli.n, initial: cli.initial.clone(), density: *density };
            commands::simulate_cmd(&cfg, args, &mut out, &mut params)?;
            "simulate"
        }
        Command::Bifurcate { c_lo, c_hi, steps } => {
            commands::bifurcate(&cfg, (*c_lo, *c_hi, *steps), cli.n, &mut out, &mut params)?;
            "bifurcate"
        }
        Command::Reproduce => {
            // the summary is written even when checks fail
            let outcome = commands::reproduce(&cfg, cli.n, &mut out, &mut params);
            let mut manifest = RunManifest::new("reproduce", cli.config.clone(), params);
            manifest.wall_time = start.elapsed().as_secs_f64();
            out.finish(manifest).map_err(Failure::Input)?;
            return outcome;
        }
    };
    let mut manifest = RunManifest::new(name, cli.config.clone(), params);
    manifest.wall_time = start.elapsed().as_secs_f64();
    out.finish(manifest).map_err(Failure::Input)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Compute(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Assertion(n)) => {
            eprintln!("{n} check(s) failed");
            ExitCode::from(1)
        }
    }
}
