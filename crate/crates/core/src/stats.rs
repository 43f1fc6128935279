//! Order statistics shared by every stage (one percentile rule repo-wide).

use serde::{Deserialize, Serialize};

/// Percentile of an ascending slice with linear interpolation between order
/// statistics at position `(n - 1) * p`.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty slice");
    let p = p.clamp(0.0, 1.0);
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

pub fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn median(values: &[f64]) -> f64 {
    percentile_sorted(&sorted_copy(values), 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

pub fn five_number(values: &[f64]) -> FiveNumber {
    let s = sorted_copy(values);
    FiveNumber {
        min: s[0],
        q1: percentile_sorted(&s, 0.25),
        median: percentile_sorted(&s, 0.5),
        q3: percentile_sorted(&s, 0.75),
        max: s[s.len() - 1],
    }
}
