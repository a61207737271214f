use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use pgdg::dataset::{dataset_stats, deserialize};
use pgdg::env::EnvConfig;
use pgdg::pipeline::{compare, evaluate_replay, run_pgdg, run_spatial_only, PipelineConfig};
use pgdg::{par, Error};

#[derive(Parser)]
#[command(name = "pgdg", version, about = "Expand one demonstration into a curated, physically validated dataset")]
struct Cli {
    /// TOML config file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; all cores when omitted.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Environment name, with its default constants (overrides the config).
    #[arg(long, global = true)]
    env: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full generator and write the curated dataset.
    Generate,
    /// Write the spatial-randomization-only baseline dataset.
    Baseline,
    /// Replay stored plans of a PGDG and a baseline dataset and compare success rates.
    Evaluate {
        #[arg(long)]
        pgdg: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long, default_value_t = 40)]
        trials: usize,
        /// Print JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Summarize a dataset directory.
    Stats {
        dir: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Print the effective configuration as TOML.
    Config,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.run.out = o.clone();
    }
    if let Some(name) = &cli.env {
        if cfg.env.name() != name {
            cfg.env = EnvConfig::by_name(name)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidInput(_) => 2,
        Error::AllVariantsFailed => 3,
        Error::Io { .. } | Error::Parse { .. } => 4,
        Error::TubeUnavailable { .. } => 3,
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    let started = Instant::now();
    match &cli.command {
        Command::Generate => {
            let cfg = load_config(cli)?;
            let out = par::with_jobs(cli.jobs.unwrap_or(0), || run_pgdg(&cfg))?;
            print!("{}", out.report.to_text());
            eprintln!("wrote {} in {:.2?}", cfg.run.out.display(), started.elapsed());
        }
        Command::Baseline => {
            let cfg = load_config(cli)?;
            let (_, report) = par::with_jobs(cli.jobs.unwrap_or(0), || run_spatial_only(&cfg))?;
            print!("{}", report.to_text());
            eprintln!("wrote {} in {:.2?}", cfg.run.out.display(), started.elapsed());
        }
        Command::Evaluate {
            pgdg,
            baseline,
            trials,
            json,
        } => {
            let seed = cli.seed.unwrap_or(0);
            let eval = |dir: &Path| evaluate_replay(dir, *trials, seed);
            let cmp = par::with_jobs(cli.jobs.unwrap_or(0), || -> Result<_, Error> {
                Ok(compare(eval(pgdg)?, eval(baseline)?))
            })?;
            if *json {
                println!("{}", serde_json::to_string_pretty(&cmp).expect("comparison serializes"));
            } else {
                print!("{}", cmp.to_text());
            }
        }
        Command::Stats { dir, json } => {
            let stats = dataset_stats(&deserialize(dir)?)?;
            if *json {
                println!("{}", stats.to_json());
            } else {
                print!("{}", stats.to_text());
            }
        }
        Command::Config => print!("{}", load_config(cli)?.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
