//! In-process map/combine/reduce engine.
//!
//! One job is one ACO iteration. Each map task is one ant: it builds a tour
//! and emits a `BestTour` record plus one `EdgeDelta` record per tour edge.
//! Ants are split into a fixed number of contiguous partitions; with the
//! combiner enabled each partition pre-reduces its records (min / sum) before
//! the shuffle. The reducer takes the global minimum tour and applies
//! `tau' = rho * tau + sum(delta)` edge by edge.
//!
//! Partitioning is a property of the job, not of the worker pool, and every
//! sum runs in a fixed order, so results do not depend on the worker count.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::aco::{
    construct_tour_with, delta_tau, edge_count, edge_index, encode_path, AcoError, AcoParams,
    PheromoneTable, RunRecord, TransitionModel,
};
use crate::rng::StreamSeed;
use crate::tsp::DistanceMatrix;

pub const ANTS_FILE_HEADER: &str = "ant";
pub const SHORTEST_LOG_HEADER: &str = "iteration,best_length,encoded_path";

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Aco(#[from] AcoError),
    #[error("engine configuration: {0}")]
    Config(String),
    #[error("ants file {path}: {reason}")]
    Ants { path: String, reason: String },
    #[error("reduce: {0}")]
    Reduce(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EngineError + '_ {
    move |source| EngineError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineConfig {
    pub workers: usize,
    pub partitions: usize,
    pub combiner: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            workers: 1,
            partitions: 4,
            combiner: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AntSource {
    Count(usize),
    /// One ant per line after the `ant` header.
    File(PathBuf),
}

#[derive(Debug, Clone, Copy)]
pub enum TableSource<'a> {
    Memory(&'a PheromoneTable),
    File(&'a Path),
}

#[derive(Debug, Clone)]
pub struct JobSpec<'a> {
    pub ants: AntSource,
    pub table: TableSource<'a>,
    pub params: &'a AcoParams,
    /// 0-based iteration number; selects the rng sub-stream.
    pub iteration: usize,
    /// Stream of the enclosing run.
    pub stream: StreamSeed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Key {
    BestTour,
    EdgeDelta(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Tour {
        ant: usize,
        length: u64,
        path: Vec<usize>,
    },
    Delta(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyedRecord {
    pub key: Key,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BestTour {
    pub ant: usize,
    pub length: u64,
    pub path: Vec<usize>,
}

impl BestTour {
    fn better_than(&self, other: &BestTour) -> bool {
        (self.length, self.ant) < (other.length, other.ant)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobOutput {
    pub table: PheromoneTable,
    pub best: BestTour,
}

/// Everything a map task reads; shared immutably across ants.
pub struct MapContext<'a> {
    pub model: TransitionModel,
    pub distances: DistanceMatrix,
    pub params: &'a AcoParams,
    pub iteration: usize,
    pub stream: StreamSeed,
}

impl<'a> MapContext<'a> {
    pub fn new(
        table: &PheromoneTable,
        params: &'a AcoParams,
        iteration: usize,
        stream: StreamSeed,
    ) -> Self {
        Self {
            model: TransitionModel::new(table, params.alpha, params.beta),
            distances: table.distance_matrix(),
            params,
            iteration,
            stream,
        }
    }
}

/// The work of one ant: a random start city, one tour, and its deposits.
pub fn map_ant(ant: usize, ctx: &MapContext<'_>) -> Result<Vec<KeyedRecord>, EngineError> {
    let mut rng = ctx.stream.path(&[ctx.iteration as u64, ant as u64]).rng();
    let n = ctx.model.n();
    let start = rng.random_range(0..n);
    let tour = construct_tour_with(start, &ctx.model, &ctx.distances, &mut rng)?;
    let deposits = delta_tau(&tour, ctx.params.q)?;
    let mut out = Vec::with_capacity(deposits.len() + 1);
    out.extend(deposits.into_iter().map(|d| KeyedRecord {
        key: Key::EdgeDelta(d.source, d.destination),
        value: Value::Delta(d.amount),
    }));
    out.push(KeyedRecord {
        key: Key::BestTour,
        value: Value::Tour {
            ant,
            length: tour.length,
            path: tour.path,
        },
    });
    Ok(out)
}

/// Partition-local pre-reduction. Output is sorted by key; values with the
/// same key are folded in input order.
pub fn combine(records: Vec<KeyedRecord>) -> Vec<KeyedRecord> {
    let mut best: Option<BestTour> = None;
    let mut deltas: std::collections::BTreeMap<(usize, usize), f64> = Default::default();
    let mut stray = Vec::new();
    for rec in records {
        match (rec.key, rec.value) {
            (Key::BestTour, Value::Tour { ant, length, path }) => {
                let cand = BestTour { ant, length, path };
                if best.as_ref().is_none_or(|b| cand.better_than(b)) {
                    best = Some(cand);
                }
            }
            (Key::EdgeDelta(i, j), Value::Delta(v)) => {
                *deltas.entry((i, j)).or_insert(0.0) += v;
            }
            // mismatched pairs are passed through for the reducer to reject
            (key, value) => stray.push(KeyedRecord { key, value }),
        }
    }
    let mut out = Vec::with_capacity(deltas.len() + 1);
    if let Some(b) = best {
        out.push(KeyedRecord {
            key: Key::BestTour,
            value: Value::Tour {
                ant: b.ant,
                length: b.length,
                path: b.path,
            },
        });
    }
    out.extend(deltas.into_iter().map(|((i, j), v)| KeyedRecord {
        key: Key::EdgeDelta(i, j),
        value: Value::Delta(v),
    }));
    out.extend(stray);
    out
}

/// Global reduction after the shuffle. Edges without deposits only decay.
pub fn reduce(
    partials: Vec<KeyedRecord>,
    table: &PheromoneTable,
    rho: f64,
) -> Result<JobOutput, EngineError> {
    let n = table.n();
    let mut sums = vec![0.0; edge_count(n)];
    let mut best: Option<BestTour> = None;
    for rec in partials {
        match (rec.key, rec.value) {
            (Key::BestTour, Value::Tour { ant, length, path }) => {
                let cand = BestTour { ant, length, path };
                if best.as_ref().is_none_or(|b| cand.better_than(b)) {
                    best = Some(cand);
                }
            }
            (Key::EdgeDelta(i, j), Value::Delta(v)) => {
                if i >= n || j >= n || i == j {
                    return Err(EngineError::Reduce(format!("edge {i}-{j} does not exist")));
                }
                sums[edge_index(n, i, j)] += v;
            }
            (key, _) => {
                return Err(EngineError::Reduce(format!(
                    "value type does not match key {key:?}"
                )))
            }
        }
    }
    let best = best.ok_or_else(|| EngineError::Reduce("no tour records".into()))?;
    Ok(JobOutput {
        table: table.apply_deposits(&sums, rho),
        best,
    })
}

pub fn write_ants_file(path: &Path, ants: usize) -> Result<(), EngineError> {
    let mut text = String::with_capacity(ants * 2 + 4);
    text.push_str(ANTS_FILE_HEADER);
    text.push('\n');
    for _ in 0..ants {
        text.push_str("1\n");
    }
    fs::write(path, text).map_err(io_err(path))
}

/// Number of ants encoded by an ants file (its line count after the header).
pub fn read_ants_file(path: &Path) -> Result<usize, EngineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == ANTS_FILE_HEADER => {}
        _ => {
            return Err(EngineError::Ants {
                path: path.display().to_string(),
                reason: format!("missing `{ANTS_FILE_HEADER}` header"),
            })
        }
    }
    let count = lines.count();
    if count == 0 {
        return Err(EngineError::Ants {
            path: path.display().to_string(),
            reason: "no ants listed".into(),
        });
    }
    Ok(count)
}

pub struct Engine {
    config: EngineConfig,
    pool: rayon::ThreadPool,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self, EngineError> {
        if config.workers == 0 {
            return Err(EngineError::Config("workers must be at least 1".into()));
        }
        if config.partitions == 0 {
            return Err(EngineError::Config("partitions must be at least 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| EngineError::Config(e.to_string()))?;
        Ok(Self { config, pool })
    }

    pub fn config(&self) -> EngineConfig {
        self.config
    }

    /// Runs `f` inside the engine's worker pool.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }

    pub fn run_job(&self, job: &JobSpec<'_>) -> Result<JobOutput, EngineError> {
        let ants = match &job.ants {
            AntSource::Count(0) => {
                return Err(EngineError::Config("job needs at least one ant".into()))
            }
            AntSource::Count(m) => *m,
            AntSource::File(path) => read_ants_file(path)?,
        };
        let loaded;
        let table = match job.table {
            TableSource::Memory(t) => t,
            TableSource::File(path) => {
                loaded = PheromoneTable::load(path)?;
                &loaded
            }
        };
        let ctx = MapContext::new(table, job.params, job.iteration, job.stream);
        let partitions = self.config.partitions.min(ants);
        let combiner = self.config.combiner;

        let partials = self
            .pool
            .install(|| -> Result<Vec<KeyedRecord>, EngineError> {
                let mapped: Vec<Vec<KeyedRecord>> = (0..partitions)
                    .into_par_iter()
                    .map(|p| {
                        let (lo, hi) = (p * ants / partitions, (p + 1) * ants / partitions);
                        let records = (lo..hi)
                            .into_par_iter()
                            .map(|ant| map_ant(ant, &ctx))
                            .collect::<Result<Vec<_>, _>>()?;
                        let records: Vec<KeyedRecord> = records.into_iter().flatten().collect();
                        Ok(if combiner { combine(records) } else { records })
                    })
                    .collect::<Result<_, EngineError>>()?;
                Ok(mapped.into_iter().flatten().collect())
            })?;

        reduce(partials, table, job.params.rho)
    }

    /// Chains `params.iterations` jobs. With `persist` set, the pheromone table
    /// goes through CSV files in that directory between jobs, the ants file
    /// drives the ant count, and a shortest-distance log is appended whenever
    /// an iteration improves on the best so far.
    pub fn run_iterations(
        &self,
        distances: &DistanceMatrix,
        params: &AcoParams,
        stream: StreamSeed,
        persist: Option<&Path>,
    ) -> Result<RunRecord, EngineError> {
        params.validate()?;
        let initial = PheromoneTable::new(distances, params.tau0);
        match persist {
            None => self.run_in_memory(initial, params, stream),
            Some(dir) => self.run_persisted(initial, params, stream, dir),
        }
    }

    fn run_in_memory(
        &self,
        mut table: PheromoneTable,
        params: &AcoParams,
        stream: StreamSeed,
    ) -> Result<RunRecord, EngineError> {
        let mut tracker = BestTracker::default();
        for iteration in 0..params.iterations {
            let out = self.run_job(&JobSpec {
                ants: AntSource::Count(params.ants),
                table: TableSource::Memory(&table),
                params,
                iteration,
                stream,
            })?;
            tracker.observe(out.best);
            table = out.table;
        }
        Ok(tracker.finish())
    }

    fn run_persisted(
        &self,
        initial: PheromoneTable,
        params: &AcoParams,
        stream: StreamSeed,
        dir: &Path,
    ) -> Result<RunRecord, EngineError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let ants_path = dir.join("ants.csv");
        write_ants_file(&ants_path, params.ants)?;
        let job_dir = |k: usize| dir.join(format!("iter-{k:03}"));
        let first = job_dir(0);
        fs::create_dir_all(&first).map_err(io_err(&first))?;
        initial.save(first.join("pheromones.csv"))?;

        let log_path = dir.join("shortest.csv");
        let mut log = fs::File::create(&log_path).map_err(io_err(&log_path))?;
        writeln!(log, "{SHORTEST_LOG_HEADER}").map_err(io_err(&log_path))?;

        let mut tracker = BestTracker::default();
        for iteration in 0..params.iterations {
            let input = job_dir(iteration).join("pheromones.csv");
            let out = self.run_job(&JobSpec {
                ants: AntSource::File(ants_path.clone()),
                table: TableSource::File(&input),
                params,
                iteration,
                stream,
            })?;
            let output = job_dir(iteration + 1);
            fs::create_dir_all(&output).map_err(io_err(&output))?;
            out.table.save(output.join("pheromones.csv"))?;
            let best_path = output.join("best.csv");
            fs::write(
                &best_path,
                format!(
                    "best_length,encoded_path\n{},{}\n",
                    out.best.length,
                    encode_path(&out.best.path)
                ),
            )
            .map_err(io_err(&best_path))?;

            // helper step between jobs: re-read the job's best and log improvements
            let (length, path) = read_best_file(&best_path)?;
            if tracker.best_length().is_none_or(|b| length < b) {
                writeln!(log, "{},{},{}", iteration + 1, length, path)
                    .map_err(io_err(&log_path))?;
            }
            tracker.observe(out.best);
        }
        Ok(tracker.finish())
    }
}

fn read_best_file(path: &Path) -> Result<(u64, String), EngineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let line = text.lines().nth(1).unwrap_or_default();
    let (len, encoded) = line.split_once(',').unwrap_or((line, ""));
    let len = len
        .trim()
        .parse()
        .map_err(|_| EngineError::Reduce(format!("{}: malformed best record", path.display())))?;
    Ok((len, encoded.trim().to_string()))
}

#[derive(Default)]
struct BestTracker {
    iteration_best: Vec<u64>,
    best: Option<BestTour>,
}

impl BestTracker {
    fn best_length(&self) -> Option<u64> {
        self.best.as_ref().map(|b| b.length)
    }

    fn observe(&mut self, tour: BestTour) {
        self.iteration_best.push(tour.length);
        if self.best.as_ref().is_none_or(|b| tour.length < b.length) {
            self.best = Some(tour);
        }
    }

    fn finish(self) -> RunRecord {
        let best = self.best.expect("at least one iteration ran");
        RunRecord {
            tuple_index: 0,
            run_index: 0,
            iteration_best: self.iteration_best,
            best_length: best.length,
            best_path: best.path,
        }
    }
}
