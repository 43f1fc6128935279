mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use eee_core::pipeline::{self, estimate_budget, EEEConfig, PipelineError, Study, TUPLES_FILE};
use eee_core::sampling::SamplingError;
use eee_core::tsp::TspError;

const EXIT_CONFIG: u8 = 2;
const EXIT_MISSING_INPUT: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

#[derive(Parser)]
#[command(
    name = "eee",
    version,
    about = "Exploration, exploitation and evaluation of ACO parameter tuples"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// INI configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// TSPLIB instance; overrides [instance] path.
    #[arg(long, global = true)]
    instance: Option<PathBuf>,
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the engine.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Small profile for quick checks.
    #[arg(long, global = true)]
    smoke: bool,
    /// Route pheromone tables through CSV files between iterations.
    #[arg(long, global = true)]
    persist_pheromones: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write the Saltelli tuple design to OUT/tuples.csv.
    Sample,
    /// Run the exploration stage over a tuples CSV.
    Explore {
        /// Tuples CSV; defaults to OUT/tuples.csv.
        #[arg(long)]
        tuples: Option<PathBuf>,
    },
    /// Run the exploitation stage from OUT/exploration.
    Exploit,
    /// Run the bootstrap evaluation from OUT/exploitation.
    Evaluate,
    /// Run every stage in order.
    RunAll,
    /// Extrapolate stage run times from a timed trial run.
    Estimate {
        /// Use this per-run time instead of timing a trial.
        #[arg(long)]
        trial_seconds: Option<f64>,
    },
}

enum Failure {
    Config(String),
    Missing(String),
    Runtime(String),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let msg = e.to_string();
        match e {
            PipelineError::Config(_)
            | PipelineError::Sampling(
                SamplingError::InvalidSpace(_)
                | SamplingError::NotPowerOfTwo(_)
                | SamplingError::DimensionOutOfRange(_),
            ) => Failure::Config(msg),
            PipelineError::MissingInput { .. } | PipelineError::Tsp(TspError::Io { .. }) => {
                Failure::Missing(msg)
            }
            _ => Failure::Runtime(msg),
        }
    }
}

fn build_config(common: &Common) -> Result<EEEConfig, Failure> {
    let mut cfg = EEEConfig::case_study("data/berlin52.tsp");
    if let Some(path) = &common.config {
        if !path.is_file() {
            return Err(Failure::Missing(format!(
                "config file not found: {}",
                path.display()
            )));
        }
        config::load_file(&mut cfg, path).map_err(|e| Failure::Config(e.to_string()))?;
    }
    if common.smoke {
        cfg.apply_smoke();
    }
    if let Some(p) = &common.instance {
        cfg.instance = p.clone();
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(w) = common.workers {
        cfg.engine.workers = w;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    if common.persist_pheromones {
        cfg.persist_pheromones = true;
    }
    Ok(cfg)
}

fn estimate(study: &Study, trial_seconds: Option<f64>) -> Result<(), Failure> {
    let cfg = &study.config;
    let tuples = study.sample()?;
    let probe = tuples
        .first()
        .ok_or_else(|| Failure::Config("design produced no tuples".into()))?;
    let trial = |iterations: usize| -> Result<Duration, Failure> {
        match trial_seconds {
            Some(s) if s > 0.0 && s.is_finite() => Ok(Duration::from_secs_f64(s)),
            Some(s) => Err(Failure::Config(format!(
                "trial seconds must be positive, got {s}"
            ))),
            None => Ok(study.timed_trial(probe, iterations)?),
        }
    };
    let explore_trial = trial(cfg.exploration.iterations)?;
    let exploit_trial = trial(cfg.exploitation.iterations)?;
    let explore = estimate_budget(explore_trial, cfg.exploration.runs, tuples.len());
    let exploit = estimate_budget(
        exploit_trial,
        cfg.exploitation.runs,
        cfg.top_p.min(tuples.len()),
    );
    println!(
        "exploration: {:.3} s/run x {} runs x {} tuples = {explore}",
        explore_trial.as_secs_f64(),
        cfg.exploration.runs,
        tuples.len()
    );
    println!(
        "exploitation: {:.3} s/run x {} runs x {} tuples = {exploit}",
        exploit_trial.as_secs_f64(),
        cfg.exploitation.runs,
        cfg.top_p.min(tuples.len())
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = build_config(&cli.common)?;
    let study = Study::new(cfg)?;
    let out = study.config.out.clone();
    match cli.command {
        Command::Sample => {
            let tuples = pipeline::stage_sample(&study)?;
            log::info!(
                "wrote {} tuples to {}",
                tuples.len(),
                out.join(TUPLES_FILE).display()
            );
        }
        Command::Explore { tuples } => {
            let report = pipeline::stage_explore(&study, tuples.as_deref())?;
            log::info!("explored {} tuples", report.rows.len());
        }
        Command::Exploit => {
            let report = pipeline::stage_exploit(&study)?;
            log::info!("exploited {} tuples", report.rows.len());
        }
        Command::Evaluate => {
            let report = pipeline::stage_evaluate(&study)?;
            log::info!("evaluated {} tuples", report.rows.len());
        }
        Command::RunAll => {
            let summary = pipeline::run_all(&study)?;
            for w in &summary.winners {
                log::info!(
                    "{} winner: tuple {} (score {})",
                    w.stage,
                    w.tuple.index,
                    w.score
                );
            }
        }
        Command::Estimate { trial_seconds } => estimate(&study, trial_seconds)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, msg) = match f {
                Failure::Config(m) => (EXIT_CONFIG, m),
                Failure::Missing(m) => (EXIT_MISSING_INPUT, m),
                Failure::Runtime(m) => (EXIT_RUNTIME, m),
            };
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
