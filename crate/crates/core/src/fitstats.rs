//! Maximum-likelihood fits of four two-parameter families, the information
//! criteria used to rank them, CDF success probabilities and Q-Q data.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::special::{gamma_p, ln_gamma, ln_minus_digamma, std_normal_cdf, trigamma_minus_inv};

/// Every family here has two free parameters.
pub const PARAMS_PER_FAMILY: usize = 2;

pub const NEWTON_TOLERANCE: f64 = 1e-10;
pub const NEWTON_MAX_ITERATIONS: usize = 100;
const QUANTILE_TOLERANCE: f64 = 1e-10;

pub const FIT_CSV_HEADER: &str = "family,param1,param2,LL,AIC,AICc,BIC,P_le_optimum";
pub const QQ_CSV_HEADER: &str = "theoretical,empirical";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("need at least 3 observations to fit, got {0}")]
    TooFewPoints(usize),
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("{0} requires strictly positive data")]
    NonPositive(Family),
    #[error("{0} fit is degenerate: sample has zero spread")]
    Degenerate(Family),
    #[error("{family} shape iteration did not converge (last iterate {last})")]
    NoConvergence { family: Family, last: f64 },
    #[error("AICc undefined for q={q}, k={k} (needs q > k + 1)")]
    AiccUndefined { q: usize, k: usize },
    #[error("no family could be fitted")]
    AllFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Normal,
    LogNormal,
    Gamma,
    Weibull,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::Normal,
        Family::LogNormal,
        Family::Gamma,
        Family::Weibull,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Normal => "normal",
            Family::LogNormal => "lognormal",
            Family::Gamma => "gamma",
            Family::Weibull => "weibull",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown family `{s}`"))
    }
}

/// Run-best values for one parameter tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    values: Vec<f64>,
}

impl Sample {
    pub fn new(values: Vec<f64>) -> Result<Self, FitError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FitError::NonFinite);
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A family with its two parameters:
/// Normal `(mu, sigma)`, LogNormal `(mu_log, sigma_log)`,
/// Gamma `(shape, scale)`, Weibull `(shape, scale)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedDistribution {
    pub family: Family,
    pub param1: f64,
    pub param2: f64,
}

impl FittedDistribution {
    pub fn new(family: Family, param1: f64, param2: f64) -> Self {
        Self {
            family,
            param1,
            param2,
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let (a, b) = (self.param1, self.param2);
        match self.family {
            Family::Normal => {
                let z = (x - a) / b;
                -0.5 * z * z - b.ln() - 0.5 * (2.0 * PI).ln()
            }
            Family::LogNormal => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let z = (x.ln() - a) / b;
                -0.5 * z * z - b.ln() - x.ln() - 0.5 * (2.0 * PI).ln()
            }
            Family::Gamma => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                (a - 1.0) * x.ln() - x / b - a * b.ln() - ln_gamma(a)
            }
            Family::Weibull => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let ln_ratio = x.ln() - b.ln();
                a.ln() - b.ln() + (a - 1.0) * ln_ratio - (a * ln_ratio).exp()
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let (a, b) = (self.param1, self.param2);
        match self.family {
            Family::Normal => std_normal_cdf((x - a) / b),
            Family::LogNormal => {
                if x <= 0.0 {
                    0.0
                } else {
                    std_normal_cdf((x.ln() - a) / b)
                }
            }
            Family::Gamma => {
                if x <= 0.0 {
                    0.0
                } else {
                    gamma_p(a, x / b)
                }
            }
            Family::Weibull => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-(x / b).powf(a)).exp_m1()
                }
            }
        }
    }

    /// Inverse CDF. Weibull is closed form; the others bisect the CDF.
    pub fn quantile(&self, p: f64) -> f64 {
        let (a, b) = (self.param1, self.param2);
        match self.family {
            Family::Weibull => {
                if p <= 0.0 {
                    return 0.0;
                }
                if p >= 1.0 {
                    return f64::INFINITY;
                }
                b * (-(-p).ln_1p()).powf(1.0 / a)
            }
            Family::Normal => a + b * std_normal_quantile(p),
            Family::LogNormal => (a + b * std_normal_quantile(p)).exp(),
            Family::Gamma => {
                if p <= 0.0 {
                    return 0.0;
                }
                if p >= 1.0 {
                    return f64::INFINITY;
                }
                let mut hi = (a + 10.0 * a.sqrt() + 10.0) * b;
                while self.cdf(hi) < p {
                    hi *= 2.0;
                }
                bisect(|x| self.cdf(x), p, 0.0, hi)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        let (a, b) = (self.param1, self.param2);
        match self.family {
            Family::Normal => a,
            Family::LogNormal => (a + 0.5 * b * b).exp(),
            Family::Gamma => a * b,
            Family::Weibull => b * ln_gamma(1.0 + 1.0 / a).exp(),
        }
    }
}

fn std_normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    bisect(std_normal_cdf, p, -40.0, 40.0)
}

/// Finds `x` in `[lo, hi]` with `f(x) = target` for non-decreasing `f`.
fn bisect(f: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= QUANTILE_TOLERANCE * mid.abs().max(1.0) {
            return mid;
        }
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn cdf(fitted: &FittedDistribution, x: f64) -> f64 {
    fitted.cdf(x)
}

/// `P(X <= optimum)` under the fitted law.
pub fn success_probability(fitted: &FittedDistribution, optimum: f64) -> f64 {
    fitted.cdf(optimum).clamp(0.0, 1.0)
}

/// How zero-spread samples are handled by the location-scale families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DegenerateMode {
    Reject,
    /// Floor sigma at this value, producing a near step CDF.
    FloorSigma(f64),
}

pub fn fit_mle(sample: &Sample, family: Family) -> Result<FittedDistribution, FitError> {
    fit_mle_with(sample, family, DegenerateMode::Reject)
}

pub fn fit_mle_with(
    sample: &Sample,
    family: Family,
    mode: DegenerateMode,
) -> Result<FittedDistribution, FitError> {
    let x = sample.values();
    if x.len() < 3 {
        return Err(FitError::TooFewPoints(x.len()));
    }
    if family != Family::Normal && x.iter().any(|&v| v <= 0.0) {
        return Err(FitError::NonPositive(family));
    }
    match family {
        Family::Normal => {
            let (mu, sigma) = location_scale(x.iter().copied(), family, mode)?;
            Ok(FittedDistribution::new(family, mu, sigma))
        }
        Family::LogNormal => {
            let (mu, sigma) = location_scale(x.iter().map(|v| v.ln()), family, mode)?;
            Ok(FittedDistribution::new(family, mu, sigma))
        }
        Family::Gamma => fit_gamma(x),
        Family::Weibull => fit_weibull(x),
    }
}

fn location_scale(
    values: impl Iterator<Item = f64> + Clone,
    family: Family,
    mode: DegenerateMode,
) -> Result<(f64, f64), FitError> {
    let q = values.clone().count() as f64;
    let mu = values.clone().sum::<f64>() / q;
    let var = values.map(|v| (v - mu) * (v - mu)).sum::<f64>() / q;
    let sigma = var.sqrt();
    match mode {
        DegenerateMode::Reject if !(sigma > 0.0) => Err(FitError::Degenerate(family)),
        DegenerateMode::FloorSigma(floor) => Ok((mu, sigma.max(floor))),
        _ => Ok((mu, sigma)),
    }
}

/// Shape solves `ln k - psi(k) = ln(mean) - mean(ln x)`; scale = mean / k.
fn fit_gamma(x: &[f64]) -> Result<FittedDistribution, FitError> {
    let q = x.len() as f64;
    let mean = x.iter().sum::<f64>() / q;
    // ln(mean) - mean(ln x), computed on x / mean to avoid cancellation
    let s = -x.iter().map(|v| (v / mean).ln()).sum::<f64>() / q;
    if !(s > 0.0) {
        return Err(FitError::Degenerate(Family::Gamma));
    }
    let mut k = (3.0 - s + ((s - 3.0) * (s - 3.0) + 24.0 * s).sqrt()) / (12.0 * s);
    for _ in 0..NEWTON_MAX_ITERATIONS {
        let f = ln_minus_digamma(k) - s;
        // d/dk (ln k - psi(k)) = 1/k - psi'(k)
        let fp = -trigamma_minus_inv(k);
        let mut next = k - f / fp;
        if !(next > 0.0) {
            next = 0.5 * k;
        }
        let step = (next - k).abs();
        k = next;
        if step <= NEWTON_TOLERANCE * k {
            return Ok(FittedDistribution::new(Family::Gamma, k, mean / k));
        }
    }
    Err(FitError::NoConvergence {
        family: Family::Gamma,
        last: k,
    })
}

/// Shape solves `sum x^k ln x / sum x^k - 1/k - mean(ln x) = 0`, found by
/// Newton steps kept inside a sign bracket. Data are scaled by their maximum
/// so `x^k` cannot overflow.
fn fit_weibull(x: &[f64]) -> Result<FittedDistribution, FitError> {
    let q = x.len() as f64;
    let ln_max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max).ln();
    let y: Vec<f64> = x.iter().map(|v| v.ln() - ln_max).collect();
    let mean_y = y.iter().sum::<f64>() / q;
    let sd_y = (y.iter().map(|v| (v - mean_y) * (v - mean_y)).sum::<f64>() / q).sqrt();
    if !(sd_y > 0.0) {
        return Err(FitError::Degenerate(Family::Weibull));
    }

    let eval = |k: f64| {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for &v in &y {
            let w = (k * v).exp();
            s0 += w;
            s1 += w * v;
            s2 += w * v * v;
        }
        let g = s1 / s0 - 1.0 / k - mean_y;
        let gp = (s2 * s0 - s1 * s1) / (s0 * s0) + 1.0 / (k * k);
        (g, gp, s0)
    };

    let mut k = 1.2825 / sd_y;
    let (mut lo, mut hi) = (k, k);
    while eval(lo).0 > 0.0 {
        lo *= 0.5;
    }
    while eval(hi).0 < 0.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(FitError::NoConvergence {
                family: Family::Weibull,
                last: k,
            });
        }
    }
    for _ in 0..NEWTON_MAX_ITERATIONS {
        let (g, gp, _) = eval(k);
        if g < 0.0 {
            lo = lo.max(k);
        } else {
            hi = hi.min(k);
        }
        let mut next = k - g / gp;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - k).abs();
        k = next;
        if step <= NEWTON_TOLERANCE * k {
            let s0 = eval(k).2;
            let scale = (ln_max + (s0 / q).ln() / k).exp();
            return Ok(FittedDistribution::new(Family::Weibull, k, scale));
        }
    }
    Err(FitError::NoConvergence {
        family: Family::Weibull,
        last: k,
    })
}

pub fn log_likelihood(sample: &Sample, fitted: &FittedDistribution) -> f64 {
    sample.values().iter().map(|&x| fitted.ln_pdf(x)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    pub ll: f64,
    pub aic: f64,
    /// `None` when `q <= k + 1`.
    pub aicc: Option<f64>,
    pub bic: f64,
}

/// `AIC = 2k - 2 LL`, `AICc = AIC + 2k(k+1)/(q-k-1)`, `BIC = k ln q - 2 LL`.
pub fn criteria(ll: f64, k: usize, q: usize) -> FitMetrics {
    let kf = k as f64;
    let aic = 2.0 * kf - 2.0 * ll;
    let aicc = (q > k + 1).then(|| aic + 2.0 * kf * (kf + 1.0) / (q - k - 1) as f64);
    FitMetrics {
        ll,
        aic,
        aicc,
        bic: (q as f64).ln() * kf - 2.0 * ll,
    }
}

impl FitMetrics {
    pub fn aicc(&self, q: usize) -> Result<f64, FitError> {
        self.aicc.ok_or(FitError::AiccUndefined {
            q,
            k: PARAMS_PER_FAMILY,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum FitOutcome {
    Fitted {
        distribution: FittedDistribution,
        metrics: FitMetrics,
    },
    Failed {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyFit {
    pub family: Family,
    pub outcome: FitOutcome,
}

impl FamilyFit {
    pub fn fitted(&self) -> Option<(&FittedDistribution, &FitMetrics)> {
        match &self.outcome {
            FitOutcome::Fitted {
                distribution,
                metrics,
            } => Some((distribution, metrics)),
            FitOutcome::Failed { .. } => None,
        }
    }
}

pub fn fit_family(sample: &Sample, family: Family) -> FamilyFit {
    let q = sample.len();
    let outcome = fit_mle(sample, family)
        .and_then(|d| {
            let metrics = criteria(log_likelihood(sample, &d), PARAMS_PER_FAMILY, q);
            if !metrics.ll.is_finite() {
                return Err(FitError::NonFinite);
            }
            metrics.aicc(q)?;
            Ok((d, metrics))
        })
        .map_or_else(
            |e| FitOutcome::Failed {
                reason: e.to_string(),
            },
            |(distribution, metrics)| FitOutcome::Fitted {
                distribution,
                metrics,
            },
        );
    FamilyFit { family, outcome }
}

/// Fits all four families, best AICc first; failed fits trail in family order.
pub fn rank_families(sample: &Sample) -> Result<Vec<FamilyFit>, FitError> {
    let fits = Family::ALL.iter().map(|&f| fit_family(sample, f)).collect();
    let ranked = order_by_aicc(fits);
    if ranked.first().is_none_or(|f| f.fitted().is_none()) {
        return Err(FitError::AllFailed);
    }
    Ok(ranked)
}

/// Ascending AICc, ties and failures ordered by family.
pub fn order_by_aicc(mut fits: Vec<FamilyFit>) -> Vec<FamilyFit> {
    fits.sort_by(|a, b| {
        let key = |f: &FamilyFit| f.fitted().and_then(|(_, m)| m.aicc);
        match (key(a), key(b)) {
            (Some(x), Some(y)) => x.total_cmp(&y).then(a.family.cmp(&b.family)),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => a.family.cmp(&b.family),
        }
    });
    fits
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QQData {
    /// `(theoretical, empirical)` pairs, both non-decreasing.
    pub points: Vec<(f64, f64)>,
}

/// Empirical order statistics against the fitted quantiles at `(i - 0.5) / q`.
pub fn qq_points(sample: &Sample, fitted: &FittedDistribution) -> QQData {
    let sorted = crate::stats::sorted_copy(sample.values());
    let q = sorted.len() as f64;
    let points = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| (fitted.quantile((i as f64 + 0.5) / q), x))
        .collect();
    QQData { points }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(v: &[f64]) -> Sample {
        Sample::new(v.to_vec()).unwrap()
    }

    #[test]
    fn normal_closed_form() {
        let d = fit_mle(&sample(&[1.0, 2.0, 3.0]), Family::Normal).unwrap();
        assert!((d.param1 - 2.0).abs() < 1e-15);
        assert!((d.param2 * d.param2 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_and_domain_errors() {
        let e = std::f64::consts::E;
        assert_eq!(
            fit_mle(&sample(&[e, e, e]), Family::LogNormal),
            Err(FitError::Degenerate(Family::LogNormal))
        );
        assert_eq!(
            fit_mle(&sample(&[5.0, 5.0, 5.0]), Family::Gamma),
            Err(FitError::Degenerate(Family::Gamma))
        );
        assert_eq!(
            fit_mle(&sample(&[5.0, 5.0, 5.0]), Family::Weibull),
            Err(FitError::Degenerate(Family::Weibull))
        );
        assert_eq!(
            fit_mle(&sample(&[1.0, -2.0, 3.0]), Family::Gamma),
            Err(FitError::NonPositive(Family::Gamma))
        );
        assert_eq!(
            fit_mle(&sample(&[1.0, 2.0]), Family::Normal),
            Err(FitError::TooFewPoints(2))
        );
        assert!(Sample::new(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn floor_guard_gives_step_cdf() {
        let s = sample(&[7600.0; 10]);
        let d = fit_mle_with(&s, Family::Normal, DegenerateMode::FloorSigma(1e-12)).unwrap();
        assert_eq!(d.param2, 1e-12);
        assert_eq!(success_probability(&d, 7542.0), 0.0);
        assert_eq!(success_probability(&d, 7700.0), 1.0);
    }

    #[test]
    fn criteria_examples() {
        let m = criteria(-10.0, 2, 10);
        assert_eq!(m.aic, 24.0);
        assert!((m.aicc.unwrap() - (24.0 + 12.0 / 7.0)).abs() < 1e-12);
        assert!((m.aicc.unwrap() - 25.7143).abs() < 1e-4);
        assert!((m.bic - (2.0 * 10f64.ln() + 20.0)).abs() < 1e-12);
        assert!((m.bic - 24.6052).abs() < 1e-4);
        let small = criteria(-10.0, 2, 3);
        assert_eq!(small.aicc, None);
        assert_eq!(small.aicc(3), Err(FitError::AiccUndefined { q: 3, k: 2 }));
        assert!(small.bic.is_finite());
        assert!(criteria(-1.0, 2, 1).bic.is_finite());
    }

    #[test]
    fn cdf_landmarks() {
        let n = FittedDistribution::new(Family::Normal, 7600.0, 50.0);
        assert!((n.cdf(7600.0) - 0.5).abs() < 1e-15);
        let w = FittedDistribution::new(Family::Weibull, 1.0, 3.0);
        assert!((w.cdf(3.0) - (1.0 - (-1f64).exp())).abs() < 1e-15);
        assert!((w.cdf(3.0) - 0.6321).abs() < 1e-4);
        assert_eq!(w.cdf(-1.0), 0.0);
        let g = FittedDistribution::new(Family::Gamma, 2.0, 1.0);
        assert_eq!(g.cdf(0.0), 0.0);
        let l = FittedDistribution::new(Family::LogNormal, 0.0, 1.0);
        assert!((l.cdf(1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn weibull_quantile_closed_form() {
        let w = FittedDistribution::new(Family::Weibull, 1.0, 2.0);
        assert!((w.quantile(1.0 - (-1f64).exp()) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn quantiles_invert_cdfs() {
        let dists = [
            FittedDistribution::new(Family::Normal, 7600.0, 50.0),
            FittedDistribution::new(Family::LogNormal, 8.9, 0.01),
            FittedDistribution::new(Family::Gamma, 3.5, 2.0),
            FittedDistribution::new(Family::Gamma, 6000.0, 1.3),
            FittedDistribution::new(Family::Weibull, 2.0, 1.0),
        ];
        for d in dists {
            for &p in &[1e-4, 0.01, 0.3, 0.5, 0.77, 0.999] {
                let x = d.quantile(p);
                assert!((d.cdf(x) - p).abs() < 1e-8, "{d:?} p={p}");
            }
        }
    }

    #[test]
    fn single_point_qq() {
        let s = Sample::new(vec![4.0]).unwrap();
        let d = FittedDistribution::new(Family::Normal, 3.0, 2.0);
        let qq = qq_points(&s, &d);
        assert_eq!(qq.points.len(), 1);
        assert!((qq.points[0].0 - 3.0).abs() < 1e-9);
        assert_eq!(qq.points[0].1, 4.0);
    }

    #[test]
    fn tie_break_by_family_order() {
        let m = criteria(-10.0, 2, 10);
        let mk = |family| FamilyFit {
            family,
            outcome: FitOutcome::Fitted {
                distribution: FittedDistribution::new(family, 1.0, 1.0),
                metrics: m,
            },
        };
        let failed = FamilyFit {
            family: Family::Normal,
            outcome: FitOutcome::Failed { reason: "x".into() },
        };
        let ordered = order_by_aicc(vec![
            mk(Family::Weibull),
            failed,
            mk(Family::Gamma),
            mk(Family::LogNormal),
        ]);
        let fams: Vec<Family> = ordered.iter().map(|f| f.family).collect();
        assert_eq!(
            fams,
            vec![
                Family::LogNormal,
                Family::Gamma,
                Family::Weibull,
                Family::Normal
            ]
        );
    }

    #[test]
    fn non_positive_sample_keeps_normal() {
        let s = sample(&[-1.0, 2.0, 3.0, 4.5, 5.0]);
        let ranked = rank_families(&s).unwrap();
        assert_eq!(ranked[0].family, Family::Normal);
        assert!(ranked[1..].iter().all(|f| f.fitted().is_none()));
        assert_eq!(
            rank_families(&sample(&[-1.0, -1.0, -1.0, -1.0])),
            Err(FitError::AllFailed)
        );
    }

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
        }
        assert!("cauchy".parse::<Family>().is_err());
    }
}
