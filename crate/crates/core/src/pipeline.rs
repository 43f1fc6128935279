//! Exploration, exploitation and evaluation stages, their checkpoints and
//! the plot-data files each stage leaves behind.
//!
//! Output tree under `out`:
//! `tuples.csv`, `summary.json`, and one directory per stage holding
//! `report.json` (the checkpoint the next stage reads), `ranking.csv`,
//! `runs.csv`, `boxplot.csv` and stage-specific files.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aco::{encode_path, AcoParams, RunRecord};
use crate::bootstrap::{
    bootstrap_probability, multi_run_aggregate, BootstrapConfig, BootstrapError, MultiRunAggregate,
    BOOTSTRAP_CSV_HEADER,
};
use crate::engine::{Engine, EngineConfig, EngineError};
use crate::fitstats::{
    qq_points, rank_families, success_probability, Family, FamilyFit, FitError, FitOutcome, Sample,
    FIT_CSV_HEADER, QQ_CSV_HEADER,
};
use crate::rng::StreamSeed;
use crate::sampling::{
    load_tuples, saltelli_sample, save_tuples, ParameterSpace, ParameterTuple, SamplingError,
    Strictness,
};
use crate::stats::{five_number, mean, median, FiveNumber};
use crate::tsp::{DistanceMatrix, Instance, TspError};

pub const TUPLES_FILE: &str = "tuples.csv";
pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const BOXPLOT_CSV_HEADER: &str = "tuple_index,min,q1,median,q3,max,points";
pub const HISTOGRAM_BINS: usize = 20;

const STAGE_LABEL_EXPLORATION: u64 = 1;
const STAGE_LABEL_EXPLOITATION: u64 = 2;
const STAGE_LABEL_EVALUATION: u64 = 3;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("missing input {what}: {path}")]
    MissingInput { what: &'static str, path: String },
    #[error(transparent)]
    Tsp(#[from] TspError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Bootstrap(#[from] BootstrapError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {reason}")]
    Report { path: String, reason: String },
}

type Result<T, E = PipelineError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRuns {
    pub runs: usize,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSettings {
    pub iterations: usize,
    pub resample_size: Option<usize>,
    pub level: f64,
    /// Run count for the multi-run success aggregate.
    pub aggregate_runs: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EEEConfig {
    pub instance: PathBuf,
    pub optimum: f64,
    pub space: ParameterSpace,
    pub base_samples: usize,
    pub strictness: Strictness,
    pub tau0: f64,
    pub q: f64,
    pub exploration: StageRuns,
    pub top_p: usize,
    pub exploitation: StageRuns,
    pub evaluation: EvaluationSettings,
    pub seed: u64,
    pub engine: EngineConfig,
    pub persist_pheromones: bool,
    pub out: PathBuf,
}

impl EEEConfig {
    /// The case-study design: berlin52's optimum, N = 8 over four
    /// parameters, 3 x 10 exploration, top 5, 10 x 30 exploitation and
    /// 10 000 bootstrap resamples.
    pub fn case_study(instance: impl Into<PathBuf>) -> Self {
        Self {
            instance: instance.into(),
            optimum: 7542.0,
            space: ParameterSpace::case_study(),
            base_samples: 8,
            strictness: Strictness::Strict,
            tau0: 1.0,
            q: 1000.0,
            exploration: StageRuns {
                runs: 3,
                iterations: 10,
            },
            top_p: 5,
            exploitation: StageRuns {
                runs: 10,
                iterations: 30,
            },
            evaluation: EvaluationSettings {
                iterations: 10_000,
                resample_size: None,
                level: 0.95,
                aggregate_runs: 10,
            },
            seed: 0,
            engine: EngineConfig::default(),
            persist_pheromones: false,
            out: PathBuf::from("eee-out"),
        }
    }

    /// Small CI profile. Exploitation keeps 5 runs so families can be fitted.
    pub fn apply_smoke(&mut self) {
        self.base_samples = 2;
        self.exploration = StageRuns {
            runs: 1,
            iterations: 2,
        };
        self.exploitation = StageRuns {
            runs: 5,
            iterations: 2,
        };
        self.evaluation.iterations = 50;
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        self.space.validate()?;
        if self.base_samples == 0 {
            return bad("base sample count must be >= 1".into());
        }
        for (name, s) in [
            ("exploration", self.exploration),
            ("exploitation", self.exploitation),
        ] {
            if s.runs == 0 || s.iterations == 0 {
                return bad(format!("{name} runs and iterations must be >= 1"));
            }
        }
        if self.top_p == 0 {
            return bad("top-p must be >= 1".into());
        }
        if !self.optimum.is_finite() {
            return bad("optimum must be finite".into());
        }
        if self.engine.workers == 0 || self.engine.partitions == 0 {
            return bad("engine workers and partitions must be >= 1".into());
        }
        self.bootstrap_config(Family::Normal, 0)
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.aco_params(&self.space.fixed, 1)
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn aco_params(&self, t: &ParameterTuple, iterations: usize) -> AcoParams {
        AcoParams {
            tau0: self.tau0,
            ants: t.ants,
            iterations,
            alpha: t.alpha,
            beta: t.beta,
            rho: t.rho,
            q: self.q,
        }
    }

    pub fn bootstrap_config(&self, family: Family, seed: u64) -> BootstrapConfig {
        BootstrapConfig {
            iterations: self.evaluation.iterations,
            resample_size: self.evaluation.resample_size,
            level: self.evaluation.level,
            seed,
            family,
        }
    }

    /// SHA-256 over every setting that can change a number in the output,
    /// with the instance identified by its file contents.
    pub fn config_hash(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Design<'a> {
            instance_sha256: String,
            optimum: f64,
            space: &'a ParameterSpace,
            base_samples: usize,
            strictness: Strictness,
            tau0: f64,
            q: f64,
            exploration: StageRuns,
            top_p: usize,
            exploitation: StageRuns,
            evaluation: &'a EvaluationSettings,
            seed: u64,
            partitions: usize,
            combiner: bool,
        }
        let bytes = fs::read(&self.instance).map_err(|_| PipelineError::MissingInput {
            what: "instance",
            path: self.instance.display().to_string(),
        })?;
        let design = Design {
            instance_sha256: hex(&Sha256::digest(&bytes)),
            optimum: self.optimum,
            space: &self.space,
            base_samples: self.base_samples,
            strictness: self.strictness,
            tau0: self.tau0,
            q: self.q,
            exploration: self.exploration,
            top_p: self.top_p,
            exploitation: self.exploitation,
            evaluation: &self.evaluation,
            seed: self.seed,
            partitions: self.engine.partitions,
            combiner: self.engine.combiner,
        };
        let json = serde_json::to_vec(&design).expect("design serializes");
        Ok(hex(&Sha256::digest(&json)))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Exploration,
    Exploitation,
    Evaluation,
}

impl Stage {
    pub fn dir_name(self) -> &'static str {
        match self {
            Stage::Exploration => "exploration",
            Stage::Exploitation => "exploitation",
            Stage::Evaluation => "evaluation",
        }
    }

    fn label(self) -> u64 {
        match self {
            Stage::Exploration => STAGE_LABEL_EXPLORATION,
            Stage::Exploitation => STAGE_LABEL_EXPLOITATION,
            Stage::Evaluation => STAGE_LABEL_EVALUATION,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    pub instance: String,
    pub optimum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum TupleStatus {
    Ok,
    Failed { reason: String },
}

impl TupleStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, TupleStatus::Ok)
    }

    fn label(&self) -> &str {
        match self {
            TupleStatus::Ok => "ok",
            TupleStatus::Failed { .. } => "failed",
        }
    }

    fn reason(&self) -> &str {
        match self {
            TupleStatus::Ok => "",
            TupleStatus::Failed { reason } => reason,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub five_number: FiveNumber,
}

impl RunSummary {
    pub fn of(values: &[f64]) -> Self {
        let five = five_number(values);
        Self {
            mean: mean(values),
            median: median(values),
            min: five.min,
            five_number: five,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub family: Family,
    pub mean_p: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub failed_refits: usize,
    pub unreliable: bool,
    pub aggregate: MultiRunAggregate,
    pub probabilities: Vec<f64>,
}

/// One tuple's results; later stages fill more of the optional sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TupleResult {
    pub tuple: ParameterTuple,
    pub status: TupleStatus,
    pub runs: Vec<RunRecord>,
    pub summary: Option<RunSummary>,
    pub fits: Vec<FamilyFit>,
    pub winner: Option<Family>,
    pub probability: Option<f64>,
    pub evaluation: Option<EvaluationResult>,
}

impl TupleResult {
    fn new(tuple: ParameterTuple) -> Self {
        Self {
            tuple,
            status: TupleStatus::Ok,
            runs: Vec::new(),
            summary: None,
            fits: Vec::new(),
            winner: None,
            probability: None,
            evaluation: None,
        }
    }

    fn fail(&mut self, reason: impl Into<String>) {
        if self.status.is_ok() {
            self.status = TupleStatus::Failed {
                reason: reason.into(),
            };
        }
    }

    /// Best length of each run, in run order.
    pub fn run_bests(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.best_length as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub provenance: Provenance,
    /// Tuple indices, best first. A permutation of the rows' indices.
    pub ranking: Vec<usize>,
    /// Rows in input order.
    pub rows: Vec<TupleResult>,
}

impl StageReport {
    pub fn row(&self, tuple_index: usize) -> Option<&TupleResult> {
        self.rows.iter().find(|r| r.tuple.index == tuple_index)
    }

    pub fn ranked_rows(&self) -> impl Iterator<Item = &TupleResult> {
        self.ranking.iter().filter_map(|&i| self.row(i))
    }

    pub fn winner(&self) -> Option<&TupleResult> {
        self.ranked_rows().next().filter(|r| r.status.is_ok())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text =
            serde_json::to_string_pretty(self).map_err(|source| PipelineError::Json {
                path: path.display().to_string(),
                source,
            })?;
        text.push('\n');
        write_file(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => PipelineError::MissingInput {
                what: "stage report",
                path: path.display().to_string(),
            },
            _ => PipelineError::Io {
                path: path.display().to_string(),
                source: e,
            },
        })?;
        serde_json::from_str(&text).map_err(|source| PipelineError::Json {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Sorts indices by `key`, ascending, `None` last, ties to the lower index.
fn rank_by<K: Fn(&TupleResult) -> Option<f64>>(
    rows: &[TupleResult],
    key: K,
    descending: bool,
) -> Vec<usize> {
    let mut keyed: Vec<(Option<f64>, usize)> =
        rows.iter().map(|r| (key(r), r.tuple.index)).collect();
    keyed.sort_by(|(ka, ia), (kb, ib)| {
        let by_key = match (ka, kb) {
            (Some(a), Some(b)) if descending => b.total_cmp(a),
            (Some(a), Some(b)) => a.total_cmp(b),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        };
        by_key.then(ia.cmp(ib))
    });
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// Ascending by mean of per-run bests; failed tuples last.
pub fn rank_exploration(rows: &[TupleResult]) -> Vec<usize> {
    rank_by(
        rows,
        |r| {
            r.status
                .is_ok()
                .then(|| r.summary.as_ref().map(|s| s.mean))
                .flatten()
        },
        false,
    )
}

/// Descending by success probability; failed tuples last.
pub fn rank_exploitation(rows: &[TupleResult]) -> Vec<usize> {
    rank_by(
        rows,
        |r| r.status.is_ok().then_some(r.probability).flatten(),
        true,
    )
}

/// Descending by bootstrap mean probability; failed tuples last.
pub fn rank_evaluation(rows: &[TupleResult]) -> Vec<usize> {
    rank_by(
        rows,
        |r| {
            r.status
                .is_ok()
                .then(|| r.evaluation.as_ref().map(|e| e.mean_p))
                .flatten()
        },
        true,
    )
}

/// Loaded instance, engine and provenance shared by every stage.
pub struct Study {
    pub config: EEEConfig,
    pub provenance: Provenance,
    distances: DistanceMatrix,
    engine: Engine,
}

impl Study {
    pub fn new(config: EEEConfig) -> Result<Self> {
        config.validate()?;
        if !config.instance.is_file() {
            return Err(PipelineError::MissingInput {
                what: "instance",
                path: config.instance.display().to_string(),
            });
        }
        let instance = Instance::from_path(&config.instance)?;
        let provenance = Provenance {
            seed: config.seed,
            config_hash: config.config_hash()?,
            instance: instance.name.clone(),
            optimum: config.optimum,
        };
        let engine = Engine::new(config.engine)?;
        Ok(Self {
            distances: instance.distance_matrix(),
            provenance,
            engine,
            config,
        })
    }

    pub fn sample(&self) -> Result<Vec<ParameterTuple>> {
        Ok(saltelli_sample(
            &self.config.space,
            self.config.base_samples,
            self.config.strictness,
        )?)
    }

    fn stream(&self, stage: Stage, tuple: usize, run: usize) -> StreamSeed {
        StreamSeed::new(self.config.seed).path(&[stage.label(), tuple as u64, run as u64])
    }

    fn pheromone_dir(&self, stage: Stage, tuple: usize, run: usize) -> Option<PathBuf> {
        self.config.persist_pheromones.then(|| {
            self.config
                .out
                .join(stage.dir_name())
                .join("pheromones")
                .join(format!("tuple_{tuple:03}"))
                .join(format!("run_{run:02}"))
        })
    }

    /// Every (tuple, run) pair concurrently; results come back index-ordered.
    fn execute_runs(
        &self,
        stage: Stage,
        tuples: &[ParameterTuple],
        runs: StageRuns,
    ) -> Vec<TupleResult> {
        let jobs: Vec<(usize, usize)> = (0..tuples.len())
            .flat_map(|t| (0..runs.runs).map(move |r| (t, r)))
            .collect();
        let outcomes: Vec<Result<RunRecord, EngineError>> = self.engine.install(|| {
            jobs.par_iter()
                .map(|&(t, r)| {
                    let tuple = &tuples[t];
                    let params = self.config.aco_params(tuple, runs.iterations);
                    let persist = self.pheromone_dir(stage, tuple.index, r);
                    let mut rec = self.engine.run_iterations(
                        &self.distances,
                        &params,
                        self.stream(stage, tuple.index, r),
                        persist.as_deref(),
                    )?;
                    rec.tuple_index = tuple.index;
                    rec.run_index = r;
                    Ok(rec)
                })
                .collect()
        });

        let mut rows: Vec<TupleResult> = tuples.iter().copied().map(TupleResult::new).collect();
        for (&(t, r), outcome) in jobs.iter().zip(outcomes) {
            match outcome {
                Ok(rec) => rows[t].runs.push(rec),
                Err(e) => {
                    log::warn!("tuple {} run {r} failed: {e}", tuples[t].index);
                    rows[t].fail(format!("run {r}: {e}"));
                }
            }
        }
        for row in &mut rows {
            if row.status.is_ok() {
                row.summary = Some(RunSummary::of(&row.run_bests()));
            }
        }
        rows
    }

    pub fn run_exploration(&self, tuples: &[ParameterTuple]) -> Result<StageReport> {
        if tuples.is_empty() {
            return Err(PipelineError::Config(
                "exploration needs at least one tuple".into(),
            ));
        }
        let rows = self.execute_runs(Stage::Exploration, tuples, self.config.exploration);
        Ok(StageReport {
            stage: Stage::Exploration,
            provenance: self.provenance.clone(),
            ranking: rank_exploration(&rows),
            rows,
        })
    }

    pub fn run_exploitation(&self, top: &[ParameterTuple]) -> Result<StageReport> {
        let mut rows = self.execute_runs(Stage::Exploitation, top, self.config.exploitation);
        for row in rows.iter_mut().filter(|r| r.status.is_ok()) {
            fit_row(row, self.config.optimum);
        }
        Ok(StageReport {
            stage: Stage::Exploitation,
            provenance: self.provenance.clone(),
            ranking: rank_exploitation(&rows),
            rows,
        })
    }

    pub fn run_evaluation(&self, exploitation: &StageReport) -> Result<StageReport> {
        if exploitation.stage != Stage::Exploitation {
            return Err(PipelineError::Config(format!(
                "evaluation needs an exploitation report, got {}",
                exploitation.stage
            )));
        }
        let mut rows = exploitation.rows.clone();
        self.engine.install(|| {
            rows.par_iter_mut().for_each(|row| {
                if let Some(family) = row.winner {
                    let seed = self.stream(Stage::Evaluation, row.tuple.index, 0).value();
                    let cfg = self.config.bootstrap_config(family, seed);
                    match evaluate_row(
                        row,
                        &cfg,
                        self.config.optimum,
                        self.config.evaluation.aggregate_runs,
                    ) {
                        Ok(e) => row.evaluation = Some(e),
                        Err(e) => row.fail(format!("bootstrap: {e}")),
                    }
                } else {
                    row.fail("no fitted family to bootstrap");
                }
            })
        });
        Ok(StageReport {
            stage: Stage::Evaluation,
            provenance: self.provenance.clone(),
            ranking: rank_evaluation(&rows),
            rows,
        })
    }

    /// Wall time of one run of `tuple` at the given stage depth.
    pub fn timed_trial(&self, tuple: &ParameterTuple, iterations: usize) -> Result<Duration> {
        let params = self.config.aco_params(tuple, iterations);
        let start = Instant::now();
        self.engine.run_iterations(
            &self.distances,
            &params,
            StreamSeed::new(self.config.seed),
            None,
        )?;
        Ok(start.elapsed())
    }
}

fn fit_row(row: &mut TupleResult, optimum: f64) {
    let fits = Sample::new(row.run_bests())
        .map_err(|e| e.to_string())
        .and_then(|s| rank_families(&s).map_err(|e| e.to_string()));
    match fits {
        Ok(fits) => {
            let (dist, _) = fits[0].fitted().expect("ranked first is fitted");
            row.winner = Some(dist.family);
            row.probability = Some(success_probability(dist, optimum));
            row.fits = fits;
        }
        Err(reason) => {
            row.fits = Family::ALL
                .iter()
                .map(|&family| FamilyFit {
                    family,
                    outcome: FitOutcome::Failed {
                        reason: reason.clone(),
                    },
                })
                .collect();
            row.fail(format!("fit: {reason}"));
        }
    }
}

fn evaluate_row(
    row: &TupleResult,
    cfg: &BootstrapConfig,
    optimum: f64,
    aggregate_runs: u32,
) -> Result<EvaluationResult, BootstrapError> {
    let sample = Sample::new(row.run_bests())
        .map_err(|e: FitError| BootstrapError::Config(e.to_string()))?;
    let b = bootstrap_probability(&sample, cfg, optimum)?;
    let aggregate = multi_run_aggregate(&b, aggregate_runs);
    Ok(EvaluationResult {
        family: b.family,
        mean_p: b.mean,
        ci_low: b.lower,
        ci_high: b.upper,
        failed_refits: b.failed_refits,
        unreliable: b.unreliable,
        aggregate,
        probabilities: b.probabilities,
    })
}

/// First `p` tuples of the exploration ranking.
pub fn select_top(report: &StageReport, p: usize) -> Result<Vec<ParameterTuple>> {
    if p > report.ranking.len() {
        return Err(PipelineError::Config(format!(
            "top-p {p} exceeds the {} ranked tuples",
            report.ranking.len()
        )));
    }
    Ok(report.ranked_rows().take(p).map(|r| r.tuple).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    pub total: Duration,
}

impl Budget {
    pub fn seconds(&self) -> f64 {
        self.total.as_secs_f64()
    }

    pub fn minutes(&self) -> f64 {
        self.seconds() / 60.0
    }

    pub fn hours(&self) -> f64 {
        self.seconds() / 3600.0
    }
}

fn trim_number(x: f64) -> String {
    let s = format!("{x:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.seconds();
        if s >= 3600.0 {
            write!(f, "{} h", trim_number(self.hours()))
        } else if s >= 600.0 {
            write!(f, "{} min", trim_number(self.minutes()))
        } else {
            write!(f, "{} s", trim_number(s))
        }
    }
}

/// Trial time multiplied by every run the stage will execute.
pub fn estimate_budget(trial: Duration, runs: usize, tuples: usize) -> Budget {
    Budget {
        total: trial.mul_f64((runs * tuples) as f64),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

/// Minimal CSV builder; every field here is numeric or a fixed identifier,
/// except failure reasons, which are quoted.
struct Table {
    text: String,
}

impl Table {
    fn new(header: &str) -> Self {
        Self {
            text: format!("{header}\n"),
        }
    }

    fn row(&mut self, fields: &[String]) {
        let escaped: Vec<String> = fields.iter().map(|f| escape(f)).collect();
        self.text.push_str(&escaped.join(","));
        self.text.push('\n');
    }

    fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.text.as_bytes())
    }
}

fn escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn runs_table(report: &StageReport) -> Table {
    let mut t = Table::new("tuple_index,run_index,best_length,iteration_bests,best_path");
    for row in &report.rows {
        for r in &row.runs {
            let bests: Vec<String> = r.iteration_best.iter().map(u64::to_string).collect();
            t.row(&[
                row.tuple.index.to_string(),
                r.run_index.to_string(),
                r.best_length.to_string(),
                bests.join(" "),
                encode_path(&r.best_path),
            ]);
        }
    }
    t
}

fn boxplot_table(report: &StageReport) -> Table {
    let mut t = Table::new(BOXPLOT_CSV_HEADER);
    for row in report.rows.iter().filter(|r| !r.runs.is_empty()) {
        let bests = row.run_bests();
        let f = five_number(&bests);
        let points: Vec<String> = bests.iter().map(f64::to_string).collect();
        t.row(&[
            row.tuple.index.to_string(),
            f.min.to_string(),
            f.q1.to_string(),
            f.median.to_string(),
            f.q3.to_string(),
            f.max.to_string(),
            points.join(" "),
        ]);
    }
    t
}

fn tuple_fields(t: &ParameterTuple) -> [String; 5] {
    [
        t.index.to_string(),
        t.alpha.to_string(),
        t.beta.to_string(),
        t.rho.to_string(),
        t.ants.to_string(),
    ]
}

fn ranking_table(report: &StageReport) -> Table {
    let header = match report.stage {
        Stage::Exploration => "rank,tuple_index,alpha,beta,rho,ants,mean,median,min,status,reason",
        Stage::Exploitation => {
            "rank,tuple_index,alpha,beta,rho,ants,family,probability,status,reason"
        }
        Stage::Evaluation => {
            "rank,tuple_index,alpha,beta,rho,ants,family,mean_p,ci_low,ci_high,status,reason"
        }
    };
    let mut t = Table::new(header);
    for (rank, row) in report.ranked_rows().enumerate() {
        let mut fields = vec![(rank + 1).to_string()];
        fields.extend(tuple_fields(&row.tuple));
        match report.stage {
            Stage::Exploration => {
                let s = row.summary.as_ref();
                fields.extend([
                    opt(s.map(|s| s.mean)),
                    opt(s.map(|s| s.median)),
                    opt(s.map(|s| s.min)),
                ]);
            }
            Stage::Exploitation => {
                fields.push(row.winner.map(|f| f.to_string()).unwrap_or_default());
                fields.push(opt(row.probability));
            }
            Stage::Evaluation => {
                let e = row.evaluation.as_ref();
                fields.push(e.map(|e| e.family.to_string()).unwrap_or_default());
                fields.extend([
                    opt(e.map(|e| e.mean_p)),
                    opt(e.map(|e| e.ci_low)),
                    opt(e.map(|e| e.ci_high)),
                ]);
            }
        }
        fields.push(row.status.label().to_string());
        fields.push(row.status.reason().to_string());
        t.row(&fields);
    }
    t
}

fn emit_exploitation_extras(report: &StageReport, dir: &Path, optimum: f64) -> Result<()> {
    for row in &report.rows {
        let idx = row.tuple.index;
        let mut fits = Table::new(FIT_CSV_HEADER);
        let sample = Sample::new(row.run_bests()).ok();
        for fit in &row.fits {
            let mut qq = Table::new(QQ_CSV_HEADER);
            match fit.fitted() {
                Some((d, m)) => {
                    fits.row(&[
                        fit.family.to_string(),
                        d.param1.to_string(),
                        d.param2.to_string(),
                        m.ll.to_string(),
                        m.aic.to_string(),
                        opt(m.aicc),
                        m.bic.to_string(),
                        success_probability(d, optimum).to_string(),
                    ]);
                    if let Some(s) = &sample {
                        for (theoretical, empirical) in qq_points(s, d).points {
                            qq.row(&[theoretical.to_string(), empirical.to_string()]);
                        }
                    }
                }
                None => fits.row(&[
                    fit.family.to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                ]),
            }
            qq.save(
                &dir.join("qq")
                    .join(format!("tuple_{idx:03}_{}.csv", fit.family)),
            )?;
        }
        fits.save(&dir.join("fits").join(format!("tuple_{idx:03}.csv")))?;
    }
    Ok(())
}

fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() {
        return Vec::new();
    }
    if !(hi > lo) {
        return vec![(lo, hi, values.len())];
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            (
                lo + i as f64 * width,
                if i + 1 == bins {
                    hi
                } else {
                    lo + (i + 1) as f64 * width
                },
                c,
            )
        })
        .collect()
}

fn emit_evaluation_extras(report: &StageReport, dir: &Path) -> Result<()> {
    let mut boot = Table::new(BOOTSTRAP_CSV_HEADER);
    let mut agg = Table::new(
        "tuple_index,family,runs,independent,bootstrap_mean,bootstrap_low,bootstrap_high",
    );
    let mut hist = Table::new("tuple_index,bin,low,high,count");
    for row in report.ranked_rows() {
        let Some(e) = &row.evaluation else { continue };
        let idx = row.tuple.index.to_string();
        boot.row(&[
            idx.clone(),
            e.family.to_string(),
            e.mean_p.to_string(),
            e.ci_low.to_string(),
            e.ci_high.to_string(),
            e.failed_refits.to_string(),
        ]);
        let a = &e.aggregate;
        agg.row(&[
            idx.clone(),
            e.family.to_string(),
            a.runs.to_string(),
            a.independent.to_string(),
            a.bootstrap_mean.to_string(),
            a.bootstrap_lower.to_string(),
            a.bootstrap_upper.to_string(),
        ]);
        for (b, (lo, hi, count)) in histogram(&e.probabilities, HISTOGRAM_BINS)
            .into_iter()
            .enumerate()
        {
            hist.row(&[
                idx.clone(),
                b.to_string(),
                lo.to_string(),
                hi.to_string(),
                count.to_string(),
            ]);
        }
        let mut raw = Table::new("probability");
        for p in &e.probabilities {
            raw.row(&[p.to_string()]);
        }
        raw.save(
            &dir.join("probabilities")
                .join(format!("tuple_{:03}.csv", row.tuple.index)),
        )?;
    }
    boot.save(&dir.join("bootstrap.csv"))?;
    agg.save(&dir.join("aggregate.csv"))?;
    hist.save(&dir.join("histogram.csv"))
}

/// Writes the stage directory: checkpoint, ranking, runs, box plots and the
/// stage's own plot data.
pub fn emit_plot_data(report: &StageReport, outdir: &Path) -> Result<()> {
    let dir = outdir.join(report.stage.dir_name());
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    report.save(&dir.join(REPORT_FILE))?;
    ranking_table(report).save(&dir.join("ranking.csv"))?;
    runs_table(report).save(&dir.join("runs.csv"))?;
    boxplot_table(report).save(&dir.join("boxplot.csv"))?;
    match report.stage {
        Stage::Exploration => Ok(()),
        Stage::Exploitation => emit_exploitation_extras(report, &dir, report.provenance.optimum),
        Stage::Evaluation => emit_evaluation_extras(report, &dir),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageWinner {
    pub stage: Stage,
    pub tuple: ParameterTuple,
    pub family: Option<Family>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub provenance: Provenance,
    pub stages_completed: Vec<Stage>,
    pub winners: Vec<StageWinner>,
}

fn stage_winner(report: &StageReport) -> Option<StageWinner> {
    let row = report.winner()?;
    let (family, score) = match report.stage {
        Stage::Exploration => (None, row.summary.as_ref()?.mean),
        Stage::Exploitation => (row.winner, row.probability?),
        Stage::Evaluation => {
            let e = row.evaluation.as_ref()?;
            (Some(e.family), e.mean_p)
        }
    };
    Some(StageWinner {
        stage: report.stage,
        tuple: row.tuple,
        family,
        score,
    })
}

/// Rebuilds `summary.json` from whichever stage checkpoints exist in `out`.
pub fn write_summary(out: &Path, provenance: &Provenance) -> Result<Summary> {
    let mut summary = Summary {
        provenance: provenance.clone(),
        stages_completed: Vec::new(),
        winners: Vec::new(),
    };
    for stage in [Stage::Exploration, Stage::Exploitation, Stage::Evaluation] {
        let path = out.join(stage.dir_name()).join(REPORT_FILE);
        if !path.is_file() {
            continue;
        }
        let report = StageReport::load(&path)?;
        summary.stages_completed.push(stage);
        summary.winners.extend(stage_winner(&report));
    }
    let path = out.join(SUMMARY_FILE);
    let mut text =
        serde_json::to_string_pretty(&summary).map_err(|source| PipelineError::Json {
            path: path.display().to_string(),
            source,
        })?;
    text.push('\n');
    write_file(&path, text.as_bytes())?;
    Ok(summary)
}

fn load_checked(study: &Study, stage: Stage) -> Result<StageReport> {
    let path = study.config.out.join(stage.dir_name()).join(REPORT_FILE);
    let report = StageReport::load(&path)?;
    if report.stage != stage {
        return Err(PipelineError::Report {
            path: path.display().to_string(),
            reason: format!("expected a {stage} report, found {}", report.stage),
        });
    }
    if report.provenance.config_hash != study.provenance.config_hash {
        log::warn!(
            "{}: written under config {}, current config is {}",
            path.display(),
            report.provenance.config_hash,
            study.provenance.config_hash
        );
    }
    Ok(report)
}

/// Writes `tuples.csv`.
pub fn stage_sample(study: &Study) -> Result<Vec<ParameterTuple>> {
    let tuples = study.sample()?;
    let out = &study.config.out;
    fs::create_dir_all(out).map_err(io_err(out))?;
    save_tuples(study.config.out.join(TUPLES_FILE), &tuples)?;
    write_summary(&study.config.out, &study.provenance)?;
    Ok(tuples)
}

/// Reads `tuples` (default `out/tuples.csv`) and writes `exploration/`.
pub fn stage_explore(study: &Study, tuples: Option<&Path>) -> Result<StageReport> {
    let default = study.config.out.join(TUPLES_FILE);
    let path = tuples.unwrap_or(&default);
    if !path.is_file() {
        return Err(PipelineError::MissingInput {
            what: "tuples CSV",
            path: path.display().to_string(),
        });
    }
    let tuples = load_tuples(path)?;
    let report = study.run_exploration(&tuples)?;
    emit_plot_data(&report, &study.config.out)?;
    write_summary(&study.config.out, &study.provenance)?;
    Ok(report)
}

/// Reads `exploration/report.json` and writes `exploitation/`.
pub fn stage_exploit(study: &Study) -> Result<StageReport> {
    let exploration = load_checked(study, Stage::Exploration)?;
    let top = select_top(
        &exploration,
        study.config.top_p.min(exploration.ranking.len()),
    )?;
    if study.config.top_p > top.len() {
        log::warn!(
            "top-p {} clipped to {} tuples",
            study.config.top_p,
            top.len()
        );
    }
    let report = study.run_exploitation(&top)?;
    emit_plot_data(&report, &study.config.out)?;
    write_summary(&study.config.out, &study.provenance)?;
    Ok(report)
}

/// Reads `exploitation/report.json` and writes `evaluation/`.
pub fn stage_evaluate(study: &Study) -> Result<StageReport> {
    let exploitation = load_checked(study, Stage::Exploitation)?;
    let report = study.run_evaluation(&exploitation)?;
    emit_plot_data(&report, &study.config.out)?;
    write_summary(&study.config.out, &study.provenance)?;
    Ok(report)
}

/// All stages in order through their checkpoint files.
pub fn run_all(study: &Study) -> Result<Summary> {
    stage_sample(study)?;
    stage_explore(study, None)?;
    stage_exploit(study)?;
    stage_evaluate(study)?;
    write_summary(&study.config.out, &study.provenance)
}
