//! Percentile-bootstrap uncertainty for the success probability.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fitstats::{
    fit_mle_with, success_probability, DegenerateMode, Family, FitError, Sample,
};
use crate::rng::StreamSeed;
use crate::stats::{mean, percentile_sorted, sorted_copy};

pub const BOOTSTRAP_CSV_HEADER: &str = "tuple_index,family,mean_p,ci_low,ci_high,failed_refits";
pub const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BootstrapError {
    #[error("invalid bootstrap configuration: {0}")]
    Config(String),
    #[error("sample too small for bootstrap: {0} < 3")]
    TooFewPoints(usize),
    #[error("every one of {0} refits failed")]
    AllRefitsFailed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub iterations: usize,
    /// Defaults to the sample size.
    pub resample_size: Option<usize>,
    pub level: f64,
    pub seed: u64,
    pub family: Family,
}

impl BootstrapConfig {
    pub fn new(family: Family, seed: u64) -> Self {
        Self {
            iterations: 10_000,
            resample_size: None,
            level: 0.95,
            seed,
            family,
        }
    }

    pub fn validate(&self) -> Result<(), BootstrapError> {
        if self.iterations < 1 {
            return Err(BootstrapError::Config("iterations must be >= 1".into()));
        }
        if self.resample_size.is_some_and(|r| r < 3) {
            return Err(BootstrapError::Config("resample size must be >= 3".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(BootstrapError::Config(format!(
                "confidence level {} outside (0, 1)",
                self.level
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub family: Family,
    /// Probabilities of the successful refits, in resample order.
    pub probabilities: Vec<f64>,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub failed_refits: usize,
    pub iterations: usize,
    pub level: f64,
    /// More than half of the refits failed.
    pub unreliable: bool,
}

/// Empirical `(1 - level) / 2` and `(1 + level) / 2` percentiles.
pub fn percentile_ci(values: &[f64], level: f64) -> (f64, f64) {
    let sorted = sorted_copy(values);
    (
        percentile_sorted(&sorted, (1.0 - level) / 2.0),
        percentile_sorted(&sorted, (1.0 + level) / 2.0),
    )
}

fn refit_mode(family: Family) -> DegenerateMode {
    match family {
        Family::Normal | Family::LogNormal => DegenerateMode::FloorSigma(SIGMA_FLOOR),
        Family::Gamma | Family::Weibull => DegenerateMode::Reject,
    }
}

/// Probability for resample `b`, drawn from its own stream.
fn resample_probability(
    values: &[f64],
    r: usize,
    family: Family,
    optimum: f64,
    stream: StreamSeed,
) -> Result<f64, FitError> {
    let mut rng = stream.rng();
    let draw: Vec<f64> = (0..r)
        .map(|_| values[rng.random_range(0..values.len())])
        .collect();
    let fitted = fit_mle_with(&Sample::new(draw)?, family, refit_mode(family))?;
    Ok(success_probability(&fitted, optimum))
}

pub fn bootstrap_probability(
    sample: &Sample,
    cfg: &BootstrapConfig,
    optimum: f64,
) -> Result<BootstrapResult, BootstrapError> {
    cfg.validate()?;
    let values = sample.values();
    if values.len() < 3 {
        return Err(BootstrapError::TooFewPoints(values.len()));
    }
    let r = cfg.resample_size.unwrap_or(values.len());
    let root = StreamSeed::new(cfg.seed);
    let outcomes: Vec<Option<f64>> = (0..cfg.iterations)
        .into_par_iter()
        .map(|b| resample_probability(values, r, cfg.family, optimum, root.child(b as u64)).ok())
        .collect();
    let probabilities: Vec<f64> = outcomes.iter().flatten().copied().collect();
    let failed_refits = cfg.iterations - probabilities.len();
    if probabilities.is_empty() {
        return Err(BootstrapError::AllRefitsFailed(cfg.iterations));
    }
    let (lower, upper) = percentile_ci(&probabilities, cfg.level);
    let unreliable = 2 * failed_refits > cfg.iterations;
    if unreliable {
        log::warn!(
            "{failed_refits} of {} {} refits failed; interval is unreliable",
            cfg.iterations,
            cfg.family
        );
    }
    Ok(BootstrapResult {
        family: cfg.family,
        mean: mean(&probabilities),
        lower,
        upper,
        probabilities,
        failed_refits,
        iterations: cfg.iterations,
        level: cfg.level,
        unreliable,
    })
}

/// Chance of at least one success in `runs` independent runs.
pub fn at_least_once(p: f64, runs: u32) -> f64 {
    1.0 - (1.0 - p).powi(runs as i32)
}

/// Two readings of the success chance over several independent runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiRunAggregate {
    pub runs: u32,
    /// `1 - (1 - mean_p)^runs` from the bootstrap mean.
    pub independent: f64,
    /// Mean of `1 - (1 - p_b)^runs` over the bootstrap distribution.
    pub bootstrap_mean: f64,
    pub bootstrap_lower: f64,
    pub bootstrap_upper: f64,
}

pub fn multi_run_aggregate(result: &BootstrapResult, runs: u32) -> MultiRunAggregate {
    let transformed: Vec<f64> = result
        .probabilities
        .iter()
        .map(|&p| at_least_once(p, runs))
        .collect();
    let (lo, hi) = percentile_ci(&transformed, result.level);
    MultiRunAggregate {
        runs,
        independent: at_least_once(result.mean, runs),
        bootstrap_mean: mean(&transformed),
        bootstrap_lower: lo,
        bootstrap_upper: hi,
    }
}
