//! Command-line driver for community-level open-set evaluation.

pub mod commands;
pub mod config;
pub mod error;
pub mod reports;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::Context;
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "oscd", version, about = "Community-level open-set evaluation")]
pub struct Cli {
    /// Worker threads for parallel scans.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct RunArgs {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides OSCD_OUTPUT_ROOT and the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Sample manifest (overrides the config).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a manifest and report per-split counts.
    Validate {
        manifest: PathBuf,
        #[arg(long)]
        require_disjoint: bool,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute per-sample scores for every configured method.
    Score(RunArgs),
    /// Sample val and test community suites.
    Communities(RunArgs),
    /// Write threshold scans per method and seed.
    Scan(RunArgs),
    /// Select thresholds, check invariants and write reports.
    Calibrate(RunArgs),
    /// Rebuild reports from stored results.
    Report(RunArgs),
    /// Generate a synthetic manifest, scores and community suites.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Built-in scenario name or scenario JSON file.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        n_per_split: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn context(args: &RunArgs, jobs: Option<usize>, tweak: impl FnOnce(&mut RunConfig)) -> Result<Context, CliError> {
    let mut config = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = &args.manifest {
        config.manifest = Some(m.clone());
    }
    if jobs.is_some() {
        config.jobs = jobs;
    }
    tweak(&mut config);
    config.validate()?;
    let out = config.resolve_output(args.out.as_deref())?;
    Ok(Context::new(config, out))
}

fn set_jobs(jobs: Option<usize>) {
    if let Some(n) = jobs {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let jobs = cli.jobs;
    let ctx = match &cli.command {
        Command::Validate {
            manifest,
            require_disjoint,
            out,
        } => {
            let report = commands::cmd_validate(manifest, *require_disjoint)?;
            let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Other(e.to_string()))? + "\n";
            match out {
                Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(p, e))?,
                None => print!("{text}"),
            }
            return Ok(());
        }
        Command::Score(a) | Command::Communities(a) | Command::Scan(a) | Command::Calibrate(a) | Command::Report(a) => {
            context(a, jobs, |_| {})?
        }
        Command::Simulate {
            run,
            scenario,
            n_per_split,
            seed,
        } => context(run, jobs, |c| {
            if let Some(s) = scenario {
                c.simulate.scenario = s.clone();
            }
            if let Some(n) = n_per_split {
                c.simulate.n_per_split = *n;
            }
            if seed.is_some() {
                c.simulate.seed = *seed;
            }
        })?,
    };
    set_jobs(ctx.config.jobs);
    match cli.command {
        Command::Validate { .. } => unreachable!(),
        Command::Score(_) => commands::cmd_score(&ctx).map(|_| ()),
        Command::Communities(_) => commands::cmd_communities(&ctx).map(|_| ()),
        Command::Scan(_) => commands::cmd_scan(&ctx).map(|_| ()),
        Command::Calibrate(_) => commands::cmd_calibrate(&ctx).map(|_| ()),
        Command::Report(_) => commands::cmd_report(&ctx),
        Command::Simulate { .. } => commands::cmd_simulate(&ctx),
    }
}
