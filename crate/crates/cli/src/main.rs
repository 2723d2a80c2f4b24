//! `driftscan`: batch driver for marine-debris label refinement, forest
//! training, calibration, scene prediction, detection and evaluation.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::LevelFilter;

use commands::{Failure, Overrides};
use config::{ConfigError, PipelineConfig};
use output::JsonLogger;

#[derive(Parser, Debug)]
#[command(name = "driftscan", version, about = "Marine-debris detection pipeline for Sentinel-2 scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON run configuration
    #[arg(long, short)]
    config: Option<PathBuf>,

    /// Master seed; overrides the config value
    #[arg(long)]
    seed: Option<u64>,

    /// Input raster (scene id for `refine`, probability raster for `detect`
    /// and `evaluate`)
    #[arg(long)]
    scene: Option<PathBuf>,

    /// Output path (directory for `refine`)
    #[arg(long, short)]
    out: Option<PathBuf>,

    /// Probability threshold in (0, 1)
    #[arg(long)]
    tau: Option<f64>,

    #[arg(long)]
    tile: Option<usize>,

    #[arg(long)]
    overlap: Option<usize>,

    /// Worker threads
    #[arg(long, env = "DRIFTSCAN_THREADS")]
    threads: Option<usize>,

    /// Log level: off, error, warn, info, debug
    #[arg(long, env = "DRIFTSCAN_LOG", default_value = "info")]
    log: LevelFilter,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Expand line annotations into 25 refined masks per scene
    Refine(Common),
    /// Sample training pixels and fit the random forest
    Train(Common),
    /// Pick the threshold that balances precision and recall on validation points
    Calibrate(Common),
    /// Score every pixel of a scene
    Predict(Common),
    /// Extract local-maximum detections from a probability raster
    Detect(Common),
    /// Point-protocol metrics of a probability raster
    Evaluate(Common),
    /// Print the effective configuration
    Config(Common),
}

fn effective_config(c: &Common) -> Result<PipelineConfig, ConfigError> {
    let mut cfg = match &c.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(t) = c.tile {
        cfg.tile = t;
    }
    if let Some(o) = c.overlap {
        cfg.overlap = o;
    }
    if c.threads.is_some() {
        cfg.threads = c.threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (Command::Refine(c)
    | Command::Train(c)
    | Command::Calibrate(c)
    | Command::Predict(c)
    | Command::Detect(c)
    | Command::Evaluate(c)
    | Command::Config(c)) = &cli.command;
    JsonLogger::install(c.log);
    let cfg = effective_config(c)?;
    if let Some(n) = cfg.threads {
        // fails only if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let ov = Overrides {
        scene: c.scene.clone(),
        out: c.out.clone(),
        tau: c.tau,
    };
    match &cli.command {
        Command::Refine(_) => commands::refine(&cfg, &ov),
        Command::Train(_) => commands::train(&cfg, &ov),
        Command::Calibrate(_) => commands::calibrate(&cfg, &ov),
        Command::Predict(_) => commands::predict(&cfg, &ov),
        Command::Detect(_) => commands::detect_cmd(&cfg, &ov),
        Command::Evaluate(_) => commands::evaluate(&cfg, &ov),
        Command::Config(_) => commands::show_config(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            log::error!("configuration error: {e}");
            eprintln!("driftscan: configuration error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            log::error!("{e:#}");
            eprintln!("driftscan: {e:#}");
            ExitCode::from(1)
        }
    }
}
