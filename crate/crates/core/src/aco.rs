//! Ant-system tour construction and pheromone bookkeeping.
//!
//! Nothing here knows about the execution engine: the engine calls
//! [`construct_tour_with`] once per ant and folds the deposits back with
//! [`PheromoneTable::apply_deposits`].

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::StreamSeed;
use crate::tsp::{closed_length, DistanceMatrix, Instance};

/// Visibility cutoff for zero-length edges: `eta = 1 / ZERO_DISTANCE_EPS`.
pub const ZERO_DISTANCE_EPS: f64 = 1e-9;

pub const PHEROMONE_CSV_HEADER: &str = "source,destination,distance,pheromones";

#[derive(Debug, Error)]
pub enum AcoError {
    #[error("invalid ACO parameters: {0}")]
    InvalidParams(String),
    #[error("tour of length zero cannot deposit pheromone (degenerate instance)")]
    ZeroLengthTour,
    #[error("no unvisited candidates")]
    NoCandidates,
    #[error("pheromone table: {0}")]
    Table(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcoParams {
    pub tau0: f64,
    pub ants: usize,
    pub iterations: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Retained fraction of pheromone per update: `tau' = rho * tau + delta`.
    pub rho: f64,
    pub q: f64,
}

impl AcoParams {
    pub fn validate(&self) -> Result<(), AcoError> {
        let fail = |m: &str| Err(AcoError::InvalidParams(m.to_string()));
        if !(self.alpha > 0.0) {
            return fail("alpha must be > 0");
        }
        if !(self.beta > 0.0) {
            return fail("beta must be > 0");
        }
        if !(0.0..1.0).contains(&self.rho) {
            return fail("rho must lie in [0, 1)");
        }
        if self.ants == 0 {
            return fail("at least one ant is required");
        }
        if self.iterations == 0 {
            return fail("at least one iteration is required");
        }
        if !(self.q > 0.0) {
            return fail("Q must be > 0");
        }
        if !(self.tau0 > 0.0) {
            return fail("initial pheromone must be > 0");
        }
        Ok(())
    }
}

/// Position of the undirected edge `{i, j}` in lexicographic `(min, max)` order.
#[inline]
pub fn edge_index(n: usize, i: usize, j: usize) -> usize {
    let (a, b) = if i < j { (i, j) } else { (j, i) };
    debug_assert!(a != b && b < n);
    a * n - a * (a + 1) / 2 + (b - a - 1)
}

pub fn edge_count(n: usize) -> usize {
    n * (n - 1) / 2
}

/// Per-edge distance and pheromone for a symmetric instance.
#[derive(Debug, Clone, PartialEq)]
pub struct PheromoneTable {
    n: usize,
    distance: Vec<u32>,
    tau: Vec<f64>,
}

impl PheromoneTable {
    pub fn new(d: &DistanceMatrix, tau0: f64) -> Self {
        let n = d.n();
        let mut distance = Vec::with_capacity(edge_count(n));
        for i in 0..n {
            for j in (i + 1)..n {
                distance.push(d.get(i, j));
            }
        }
        Self {
            n,
            tau: vec![tau0; distance.len()],
            distance,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn distance(&self, i: usize, j: usize) -> u32 {
        self.distance[edge_index(self.n, i, j)]
    }

    pub fn pheromone(&self, i: usize, j: usize) -> f64 {
        self.tau[edge_index(self.n, i, j)]
    }

    pub fn set_pheromone(&mut self, i: usize, j: usize, tau: f64) {
        let e = edge_index(self.n, i, j);
        self.tau[e] = tau;
    }

    /// Pheromones in edge order.
    pub fn pheromones(&self) -> &[f64] {
        &self.tau
    }

    /// `(source, destination, distance, pheromone)` in edge order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, u32, f64)> + '_ {
        let n = self.n;
        (0..n)
            .flat_map(move |i| ((i + 1)..n).map(move |j| (i, j)))
            .zip(self.distance.iter().zip(&self.tau))
            .map(|((i, j), (&d, &t))| (i, j, d, t))
    }

    pub fn distance_matrix(&self) -> DistanceMatrix {
        let n = self.n;
        let mut rows = vec![vec![0u32; n]; n];
        for (i, j, d, _) in self.edges() {
            rows[i][j] = d;
            rows[j][i] = d;
        }
        DistanceMatrix::from_rows(&rows)
    }

    /// `tau' = rho * tau + delta` for every edge; `delta_sums` is indexed by
    /// edge and already accumulated.
    pub fn apply_deposits(&self, delta_sums: &[f64], rho: f64) -> PheromoneTable {
        assert_eq!(delta_sums.len(), self.tau.len());
        let tau = self
            .tau
            .iter()
            .zip(delta_sums)
            .map(|(&t, &d)| rho * t + d)
            .collect();
        PheromoneTable {
            n: self.n,
            distance: self.distance.clone(),
            tau,
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), AcoError> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| AcoError::Table(e.to_string());
        w.write_record(PHEROMONE_CSV_HEADER.split(','))
            .map_err(err)?;
        for (i, j, d, t) in self.edges() {
            w.write_record([i.to_string(), j.to_string(), d.to_string(), t.to_string()])
                .map_err(err)?;
        }
        w.flush().map_err(|e| AcoError::Table(e.to_string()))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, AcoError> {
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(input);
        let header = r.headers().map_err(|e| AcoError::Table(e.to_string()))?;
        if header.iter().collect::<Vec<_>>().join(",") != PHEROMONE_CSV_HEADER {
            return Err(AcoError::Table(format!(
                "expected header `{PHEROMONE_CSV_HEADER}`"
            )));
        }
        let mut rows = Vec::new();
        for (k, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| AcoError::Table(e.to_string()))?;
            let bad = || AcoError::Table(format!("line {}: malformed edge record", k + 2));
            if rec.len() != 4 {
                return Err(bad());
            }
            let i: usize = rec[0].parse().map_err(|_| bad())?;
            let j: usize = rec[1].parse().map_err(|_| bad())?;
            let d: u32 = rec[2].parse().map_err(|_| bad())?;
            let t: f64 = rec[3].parse().map_err(|_| bad())?;
            if i == j || !t.is_finite() {
                return Err(bad());
            }
            rows.push((i, j, d, t));
        }
        let n = rows
            .iter()
            .map(|&(i, j, _, _)| i.max(j) + 1)
            .max()
            .unwrap_or(0);
        if n < 2 || rows.len() != edge_count(n) {
            return Err(AcoError::Table(format!(
                "{} edges do not form a complete graph",
                rows.len()
            )));
        }
        let mut distance = vec![0u32; rows.len()];
        let mut tau = vec![f64::NAN; rows.len()];
        for (i, j, d, t) in rows {
            let e = edge_index(n, i, j);
            if !tau[e].is_nan() {
                return Err(AcoError::Table(format!("edge {i}-{j} listed twice")));
            }
            distance[e] = d;
            tau[e] = t;
        }
        Ok(Self { n, distance, tau })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), AcoError> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        fs::write(path, buf).map_err(|source| AcoError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AcoError> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|source| AcoError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::read_csv(file)
    }
}

/// Log-space transition desirability `alpha ln tau + beta ln eta` for every
/// ordered pair, fixed for the duration of one iteration.
#[derive(Debug, Clone)]
pub struct TransitionModel {
    n: usize,
    log_weight: Vec<f64>,
    zero_distance: bool,
}

impl TransitionModel {
    pub fn new(table: &PheromoneTable, alpha: f64, beta: f64) -> Self {
        let n = table.n();
        let mut log_weight = vec![f64::NEG_INFINITY; n * n];
        let mut zero_distance = false;
        for (i, j, d, t) in table.edges() {
            let log_eta = if d == 0 {
                zero_distance = true;
                -ZERO_DISTANCE_EPS.ln()
            } else {
                -f64::from(d).ln()
            };
            let w = alpha * t.ln() + beta * log_eta;
            log_weight[i * n + j] = w;
            log_weight[j * n + i] = w;
        }
        Self {
            n,
            log_weight,
            zero_distance,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// True when some edge has length zero and was given the capped visibility.
    pub fn has_zero_distance(&self) -> bool {
        self.zero_distance
    }

    #[inline]
    fn log_weight(&self, i: usize, j: usize) -> f64 {
        self.log_weight[i * self.n + j]
    }

    /// Unnormalized weights over `candidates`, max-subtracted. Returns the
    /// weights and their sum; a zero or non-finite sum means "choose uniformly".
    fn relative_weights(&self, current: usize, candidates: &[usize], buf: &mut Vec<f64>) -> f64 {
        buf.clear();
        let max = candidates
            .iter()
            .map(|&j| self.log_weight(current, j))
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY || max.is_nan() {
            buf.resize(candidates.len(), 0.0);
            return 0.0;
        }
        let mut total = 0.0;
        for &j in candidates {
            let w = (self.log_weight(current, j) - max).exp();
            total += w;
            buf.push(w);
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionWeights {
    /// Probability per candidate, in the order the candidates were given.
    pub probabilities: Vec<f64>,
    /// Set when a zero-length edge was involved anywhere in the table.
    pub zero_distance: bool,
}

/// Ant-system transition probabilities from `current` to each unvisited city.
pub fn transition_weights(
    current: usize,
    unvisited: &[usize],
    table: &PheromoneTable,
    alpha: f64,
    beta: f64,
) -> Result<TransitionWeights, AcoError> {
    let model = TransitionModel::new(table, alpha, beta);
    transition_weights_with(&model, current, unvisited)
}

pub fn transition_weights_with(
    model: &TransitionModel,
    current: usize,
    unvisited: &[usize],
) -> Result<TransitionWeights, AcoError> {
    if unvisited.is_empty() {
        return Err(AcoError::NoCandidates);
    }
    let mut w = Vec::with_capacity(unvisited.len());
    let total = model.relative_weights(current, unvisited, &mut w);
    let probabilities = if total > 0.0 && total.is_finite() {
        w.iter().map(|x| x / total).collect()
    } else {
        vec![1.0 / unvisited.len() as f64; unvisited.len()]
    };
    Ok(TransitionWeights {
        probabilities,
        zero_distance: model.has_zero_distance(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AntTour {
    pub path: Vec<usize>,
    pub length: u64,
}

/// Builds one tour from `start` by roulette-wheel selection.
pub fn construct_tour<R: Rng + ?Sized>(
    start: usize,
    table: &PheromoneTable,
    params: &AcoParams,
    rng: &mut R,
) -> Result<AntTour, AcoError> {
    let model = TransitionModel::new(table, params.alpha, params.beta);
    let d = table.distance_matrix();
    construct_tour_with(start, &model, &d, rng)
}

pub fn construct_tour_with<R: Rng + ?Sized>(
    start: usize,
    model: &TransitionModel,
    d: &DistanceMatrix,
    rng: &mut R,
) -> Result<AntTour, AcoError> {
    let n = model.n();
    if start >= n {
        return Err(AcoError::InvalidParams(format!(
            "start city {start} outside 0..{n}"
        )));
    }
    let mut path = Vec::with_capacity(n);
    path.push(start);
    let mut unvisited: Vec<usize> = (0..n).filter(|&c| c != start).collect();
    let mut weights = Vec::with_capacity(n);
    let mut current = start;
    while !unvisited.is_empty() {
        let total = model.relative_weights(current, &unvisited, &mut weights);
        let pick = roulette(&weights, total, rng);
        current = unvisited.swap_remove(pick);
        path.push(current);
    }
    let length = closed_length(&path, d);
    Ok(AntTour { path, length })
}

/// Inverse-CDF draw over unnormalized weights; uniform when they carry no mass.
fn roulette<R: Rng + ?Sized>(weights: &[f64], total: f64, rng: &mut R) -> usize {
    if !(total > 0.0 && total.is_finite()) {
        return rng.random_range(0..weights.len());
    }
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (k, &w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return k;
        }
    }
    // rounding left target at the very top of the wheel
    weights
        .iter()
        .rposition(|&w| w > 0.0)
        .unwrap_or(weights.len() - 1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeDeposit {
    pub source: usize,
    pub destination: usize,
    pub amount: f64,
}

/// `Q / L_k` on every edge of the closed tour, listed in tour order.
pub fn delta_tau(tour: &AntTour, q: f64) -> Result<Vec<EdgeDeposit>, AcoError> {
    if tour.length == 0 {
        return Err(AcoError::ZeroLengthTour);
    }
    let amount = q / tour.length as f64;
    let n = tour.path.len();
    Ok((0..n)
        .map(|k| {
            let (a, b) = (tour.path[k], tour.path[(k + 1) % n]);
            EdgeDeposit {
                source: a.min(b),
                destination: a.max(b),
                amount,
            }
        })
        .collect())
}

/// Sums deposits per edge in ant order, then applies `tau' = rho * tau + sum`.
pub fn update_pheromones(
    table: &PheromoneTable,
    deposits: &[Vec<EdgeDeposit>],
    rho: f64,
) -> PheromoneTable {
    let mut sums = vec![0.0; table.pheromones().len()];
    for ant in deposits {
        for dep in ant {
            sums[edge_index(table.n(), dep.source, dep.destination)] += dep.amount;
        }
    }
    table.apply_deposits(&sums, rho)
}

/// Outcome of one independent ACO execution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub tuple_index: usize,
    pub run_index: usize,
    /// Best tour length found in each iteration.
    pub iteration_best: Vec<u64>,
    pub best_length: u64,
    pub best_path: Vec<usize>,
}

impl RunRecord {
    /// Running minimum of the per-iteration bests.
    pub fn running_best(&self) -> Vec<u64> {
        self.iteration_best
            .iter()
            .scan(u64::MAX, |best, &x| {
                *best = (*best).min(x);
                Some(*best)
            })
            .collect()
    }
}

pub fn encode_path(path: &[usize]) -> String {
    path.iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join("-")
}

pub fn decode_path(s: &str) -> Option<Vec<usize>> {
    if s.is_empty() {
        return Some(Vec::new());
    }
    s.split('-').map(|t| t.parse().ok()).collect()
}

/// One ACO execution with in-memory state, using a single-worker engine.
pub fn run(
    instance: &Instance,
    params: &AcoParams,
    seed: u64,
) -> Result<RunRecord, crate::engine::EngineError> {
    let engine = crate::engine::Engine::new(crate::engine::EngineConfig::default())?;
    engine.run_iterations(
        &instance.distance_matrix(),
        params,
        StreamSeed::new(seed),
        None,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tsp::Instance;

    fn table_from(coords: &[(f64, f64)], tau0: f64) -> PheromoneTable {
        let inst = Instance::from_coords("t", coords).unwrap();
        PheromoneTable::new(&inst.distance_matrix(), tau0)
    }

    fn line_table(distances: &[u32]) -> PheromoneTable {
        // star: city 0 connected to 1..=k with the given distances
        let k = distances.len();
        let mut rows = vec![vec![0u32; k + 1]; k + 1];
        for (c, &d) in distances.iter().enumerate() {
            rows[0][c + 1] = d;
            rows[c + 1][0] = d;
        }
        for (i, row) in rows.iter_mut().enumerate().skip(1) {
            for (j, cell) in row.iter_mut().enumerate().skip(1) {
                if i != j {
                    *cell = 100;
                }
            }
        }
        PheromoneTable::new(&DistanceMatrix::from_rows(&rows), 1.0)
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn uniform_weights() {
        let t = line_table(&[10, 10, 10, 10]);
        let w = transition_weights(0, &[1, 2, 3, 4], &t, 1.0, 2.0).unwrap();
        assert!(close(&w.probabilities, &[0.25; 4]));
        assert!(!w.zero_distance);
    }

    #[test]
    fn pheromone_only_weights() {
        let mut t = line_table(&[5, 5, 5]);
        t.set_pheromone(0, 1, 2.0);
        let w = transition_weights(0, &[1, 2, 3], &t, 1.0, 0.0).unwrap();
        assert!(close(&w.probabilities, &[0.5, 0.25, 0.25]));
    }

    #[test]
    fn visibility_weights() {
        let t = line_table(&[1, 2, 4]);
        let w = transition_weights(0, &[1, 2, 3], &t, 1.0, 1.0).unwrap();
        assert!(close(&w.probabilities, &[4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0]));
    }

    #[test]
    fn zero_distance_is_flagged_and_capped() {
        let t = table_from(&[(0.0, 0.0), (0.0, 0.0), (10.0, 0.0)], 1.0);
        let w = transition_weights(0, &[1, 2], &t, 1.0, 1.0).unwrap();
        assert!(w.zero_distance);
        assert!((w.probabilities[0] - 1e9 / (1e9 + 0.1)).abs() < 1e-12);
        assert!(matches!(
            transition_weights(0, &[], &t, 1.0, 1.0),
            Err(AcoError::NoCandidates)
        ));
    }

    #[test]
    fn large_beta_does_not_overflow() {
        let t = line_table(&[1, 2, 3]);
        let w = transition_weights(0, &[1, 2, 3], &t, 1.0, 2000.0).unwrap();
        assert!((w.probabilities[0] - 1.0).abs() < 1e-12);
        assert!(w.probabilities.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn two_city_tour_is_forced() {
        let d = DistanceMatrix::from_rows(&[vec![0, 7], vec![7, 0]]);
        let t = PheromoneTable::new(&d, 1.0);
        let params = AcoParams {
            tau0: 1.0,
            ants: 1,
            iterations: 1,
            alpha: 1.3,
            beta: 4.0,
            rho: 0.5,
            q: 1000.0,
        };
        let mut rng = StreamSeed::new(1).rng();
        let tour = construct_tour(1, &t, &params, &mut rng).unwrap();
        assert_eq!(tour.path, vec![1, 0]);
        assert_eq!(tour.length, 14);
    }

    #[test]
    fn deposits() {
        let tour = AntTour {
            path: vec![0, 2, 1],
            length: 500,
        };
        let dep = delta_tau(&tour, 1000.0).unwrap();
        assert_eq!(dep.len(), 3);
        assert!(dep.iter().all(|d| d.amount == 2.0));
        assert_eq!((dep[2].source, dep[2].destination), (0, 1));
        let opt = AntTour {
            path: vec![0, 1, 2],
            length: 7542,
        };
        assert!((delta_tau(&opt, 1000.0).unwrap()[0].amount - 0.132591).abs() < 1e-6);
        let zero = AntTour {
            path: vec![0, 1, 2],
            length: 0,
        };
        assert!(matches!(
            delta_tau(&zero, 1000.0),
            Err(AcoError::ZeroLengthTour)
        ));
    }

    #[test]
    fn update_rule_examples() {
        let base = table_from(&[(0.0, 0.0), (3.0, 0.0), (0.0, 4.0), (5.0, 5.0)], 2.0);
        let dep = |a, amount| {
            vec![EdgeDeposit {
                source: 0,
                destination: a,
                amount,
            }]
        };
        let t = update_pheromones(&base, &[dep(1, 0.5), dep(1, 0.5)], 0.5);
        assert_eq!(t.pheromone(0, 1), 2.0);
        assert_eq!(t.pheromone(1, 0), 2.0);
        let t = update_pheromones(&base, &[dep(2, 0.7)], 0.0);
        assert_eq!(t.pheromone(0, 2), 0.7);
        let ones = table_from(&[(0.0, 0.0), (3.0, 0.0), (0.0, 4.0)], 1.0);
        let t = update_pheromones(&ones, &[], 0.9);
        assert!(t.pheromones().iter().all(|&x| x == 0.9));
    }

    #[test]
    fn edge_index_is_lexicographic() {
        let n = 5;
        let mut k = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                assert_eq!(edge_index(n, i, j), k);
                assert_eq!(edge_index(n, j, i), k);
                k += 1;
            }
        }
        assert_eq!(k, edge_count(n));
    }

    #[test]
    fn pheromone_csv_matches_layout() {
        let t = table_from(&[(565.0, 575.0), (25.0, 185.0), (345.0, 750.0)], 1.0);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "source,destination,distance,pheromones\n0,1,666,1\n0,2,281,1\n1,2,649,1\n"
        );
        assert_eq!(PheromoneTable::read_csv(text.as_bytes()).unwrap(), t);
        assert!(PheromoneTable::read_csv("a,b\n".as_bytes()).is_err());
        let missing = "source,destination,distance,pheromones\n0,1,666,1\n0,2,281,1\n";
        assert!(PheromoneTable::read_csv(missing.as_bytes()).is_err());
    }

    #[test]
    fn path_encoding() {
        assert_eq!(encode_path(&[3, 0, 12]), "3-0-12");
        assert_eq!(decode_path("3-0-12"), Some(vec![3, 0, 12]));
        assert_eq!(decode_path("3-x"), None);
    }

    #[test]
    fn params_validation() {
        let ok = AcoParams {
            tau0: 1.0,
            ants: 5,
            iterations: 3,
            alpha: 1.0,
            beta: 2.0,
            rho: 0.5,
            q: 1000.0,
        };
        assert!(ok.validate().is_ok());
        assert!(AcoParams { rho: 1.0, ..ok }.validate().is_err());
        assert!(AcoParams { ants: 0, ..ok }.validate().is_err());
        assert!(AcoParams { alpha: 0.0, ..ok }.validate().is_err());
        assert!(AcoParams { q: 0.0, ..ok }.validate().is_err());
    }
}
