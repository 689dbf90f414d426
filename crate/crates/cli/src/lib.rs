//! Experiment harness: configuration, orchestration and output files for the
//! `wmlab` command.

pub mod commands;
pub mod config;
pub mod lab;
pub mod plot;
pub mod record;

use std::path::PathBuf;
use std::time::Instant;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::commands::{Run, Status};
use crate::config::{config_hash, load_config, parse_config};
use crate::record::{ensure_dir, write_timing};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "wmlab",
    version,
    about = "Watermark erasure experiments on toy generative models"
)]
pub struct Cli {
    /// TOML config file (see README for the keys).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed; overrides `seed` in the config.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Number of trials; overrides `trials` in the config.
    #[arg(long, global = true, value_name = "N")]
    pub trials: Option<usize>,
    /// Record per-step attack traces.
    #[arg(long, global = true)]
    pub trace: bool,
    /// Use one key, derived from the seed, for every trial.
    #[arg(long, global = true)]
    pub fixed_key: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample watermarked outputs and detect them.
    Generate,
    /// Watermark, attack and re-detect.
    Attack,
    /// Spectral analysis of the quality-level graphs (enumerable models only).
    Theory,
    /// Check the attack's success rate against its lower bound.
    Validate,
    /// Long-format plot data from traced attack records.
    Plotdata {
        /// `attack.json` files written with --trace.
        records: Vec<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Attack => "attack",
            Command::Theory => "theory",
            Command::Validate => "validate",
            Command::Plotdata { .. } => "plotdata",
        }
    }
}

pub fn prepare(cli: &Cli) -> Result<Run> {
    let loaded = match &cli.config {
        Some(path) => load_config(path)?,
        None => parse_config("", None)?,
    };
    let e = &loaded.experiment;
    if cli.trials == Some(0) {
        anyhow::bail!("--trials must be at least 1");
    }
    Ok(Run {
        seed: cli.seed.unwrap_or(e.seed),
        out: cli.out.clone().unwrap_or_else(|| e.out.clone()),
        trials: cli.trials,
        trace: cli.trace,
        fixed_key: cli.fixed_key,
        config_hash: if cli.config.is_some() {
            loaded.hash.clone()
        } else {
            config_hash(b"")
        },
        experiment: loaded.experiment,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

/// Runs one command and reports on stdout.
pub fn execute(cli: &Cli) -> Result<Status> {
    let run = prepare(cli)?;
    let start = Instant::now();
    let name = cli.command.name();
    let status = match &cli.command {
        Command::Generate => {
            let r = commands::generate(&run)?;
            let s = &r.summary;
            println!(
                "generate: {} trials ({} failed), detection rate {}, mean statistic {}, mean quality {}",
                s.trials,
                s.generation_failures,
                fmt_opt(s.detected.as_ref().map(|d| d.point)),
                fmt_opt(s.mean_statistic),
                fmt_opt(s.mean_quality)
            );
            Status::Pass
        }
        Command::Attack => {
            let r = commands::attack(&run)?;
            let s = &r.summary;
            println!(
                "attack: {} trials, {} steps (t_err {}), detection {} -> {}, mean statistic {} -> {}, non-lose {}, success {}{}",
                s.trials,
                s.steps,
                s.t_err,
                fmt_opt(s.detected_before.as_ref().map(|d| d.point)),
                fmt_opt(s.detected_after.as_ref().map(|d| d.point)),
                fmt_opt(s.mean_z_before),
                fmt_opt(s.mean_z_after),
                fmt_opt(s.non_lose.as_ref().map(|d| d.point)),
                fmt_opt(s.success.as_ref().map(|d| d.point)),
                s.success_bound.map_or(String::new(), |b| format!(" (bound {b:.4})"))
            );
            Status::Pass
        }
        Command::Theory => {
            let r = commands::theory(&run)?;
            let s = &r.summary;
            let mixing = s
                .rows
                .iter()
                .filter(|r| {
                    r.report
                        .as_ref()
                        .is_some_and(|r| r.irreducible && r.aperiodic)
                })
                .count();
            println!(
                "theory: {} outputs, q_min {:.4} at v = {}, {} levels ({} mixing, {} empty)",
                s.outputs,
                s.q_min,
                s.v,
                s.rows.len(),
                mixing,
                s.rows.iter().filter(|r| r.report.is_none()).count()
            );
            Status::Pass
        }
        Command::Validate => {
            let (r, status) = commands::validate(&run)?;
            println!("{}", commands::describe_validation(&r.summary));
            status
        }
        Command::Plotdata { records } => {
            let n = plot::plotdata(records, &run.out)?;
            println!("plotdata: {} records, {n} long-format rows", records.len());
            Status::Pass
        }
    };
    ensure_dir(&run.out)?;
    write_timing(&run.out, name, start.elapsed().as_secs_f64())?;
    println!("wrote {}", run.out.display());
    Ok(status)
}

/// `execute` mapped onto the exit-code contract.
pub fn main_with(cli: &Cli) -> i32 {
    match execute(cli) {
        Ok(Status::Pass) => EXIT_OK,
        Ok(Status::Fail) => EXIT_FAIL,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}
