//! Independent oracles shared by the integration tests. Nothing here calls
//! into the library's numerical code.
#![allow(dead_code)]

use eee_core::tsp::{DistanceMatrix, Instance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Cities on an integer grid, drawn with a seeded generator.
pub fn random_instance(seed: u64, n: usize) -> Instance {
    let mut r = rng(seed);
    let coords: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            (
                r.random_range(0..1000) as f64,
                r.random_range(0..1000) as f64,
            )
        })
        .collect();
    Instance::from_coords(format!("rand{seed}"), &coords).unwrap()
}

/// Exact optimum by Held-Karp dynamic programming over subsets.
pub fn held_karp(d: &DistanceMatrix) -> u64 {
    let n = d.n();
    assert!((2..=16).contains(&n));
    let full = 1usize << (n - 1);
    let mut dp = vec![u64::MAX; full * (n - 1)];
    for j in 0..n - 1 {
        dp[(1 << j) * (n - 1) + j] = d.get(0, j + 1) as u64;
    }
    for mask in 1..full {
        for j in 0..n - 1 {
            let cur = dp[mask * (n - 1) + j];
            if mask & (1 << j) == 0 || cur == u64::MAX {
                continue;
            }
            for k in 0..n - 1 {
                if mask & (1 << k) != 0 {
                    continue;
                }
                let next = (mask | (1 << k)) * (n - 1) + k;
                let cand = cur + d.get(j + 1, k + 1) as u64;
                if cand < dp[next] {
                    dp[next] = cand;
                }
            }
        }
    }
    (0..n - 1)
        .map(|j| dp[(full - 1) * (n - 1) + j] + d.get(j + 1, 0) as u64)
        .min()
        .unwrap()
}

// 15-point Gauss-Kronrod nodes and weights on [-1, 1]; the embedded 7-point
// Gauss rule uses the odd-indexed nodes.
pub const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
pub const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
pub const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// `(kronrod, gauss)` estimates on `[a, b]`.
pub fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let pair = f(c - h * XGK[i]) + f(c + h * XGK[i]);
        k += WGK[i] * pair;
        if i % 2 == 1 {
            g += WG[i / 2] * pair;
        }
    }
    (k * h, g * h)
}

/// Adaptive bisection on the Gauss-Kronrod error estimate, starting from
/// 64 equal panels so narrow features are not stepped over.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    const PANELS: usize = 64;
    fn rec(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (k, g) = gk15(f, a, b);
        if (k - g).abs() <= tol || depth == 0 {
            return k;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, 0.5 * tol, depth - 1) + rec(f, m, b, 0.5 * tol, depth - 1)
    }
    let w = (b - a) / PANELS as f64;
    (0..PANELS)
        .map(|i| {
            let lo = a + i as f64 * w;
            let hi = if i + 1 == PANELS { b } else { lo + w };
            rec(&f, lo, hi, tol / PANELS as f64, 30)
        })
        .sum()
}

/// Squared Hickernell centered L2 discrepancy.
pub fn centered_l2_discrepancy(points: &[Vec<f64>]) -> f64 {
    let n = points.len() as f64;
    let d = points[0].len() as i32;
    let term1 = (13.0f64 / 12.0).powi(d);
    let term2: f64 = points
        .iter()
        .map(|p| {
            p.iter()
                .map(|&x| {
                    let a = (x - 0.5).abs();
                    1.0 + 0.5 * a - 0.5 * a * a
                })
                .product::<f64>()
        })
        .sum::<f64>()
        * 2.0
        / n;
    let mut term3 = 0.0;
    for p in points {
        for q in points {
            term3 += p
                .iter()
                .zip(q)
                .map(|(&x, &y)| {
                    1.0 + 0.5 * (x - 0.5).abs() + 0.5 * (y - 0.5).abs() - 0.5 * (x - y).abs()
                })
                .product::<f64>();
        }
    }
    term1 - term2 + term3 / (n * n)
}

/// Log-likelihood with shape `k` and its profile-optimal scale.
pub fn gamma_profile_ll(x: &[f64], k: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let theta = mean / k;
    x.iter()
        .map(|&v| (k - 1.0) * v.ln() - v / theta - k * theta.ln() - ln_gamma(k))
        .sum()
}

pub fn gamma_ll(x: &[f64], k: f64, theta: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    x.iter()
        .map(|&v| (k - 1.0) * v.ln() - v / theta - k * theta.ln() - ln_gamma(k))
        .sum()
}

pub fn weibull_profile_ll(x: &[f64], k: f64) -> f64 {
    let n = x.len() as f64;
    let lam = (x.iter().map(|v| v.powf(k)).sum::<f64>() / n).powf(1.0 / k);
    weibull_ll(x, k, lam)
}

pub fn weibull_ll(x: &[f64], k: f64, lam: f64) -> f64 {
    x.iter()
        .map(|&v| k.ln() - lam.ln() + (k - 1.0) * (v / lam).ln() - (v / lam).powf(k))
        .sum()
}

/// Maximizes a unimodal profile over `ln k`: coarse grid, then golden-section
/// refinement around the best grid cell.
pub fn grid_golden_max(f: impl Fn(f64) -> f64, ln_lo: f64, ln_hi: f64) -> (f64, f64) {
    const STEPS: usize = 400;
    let step = (ln_hi - ln_lo) / STEPS as f64;
    let (best_i, _) = (0..=STEPS)
        .map(|i| (i, f((ln_lo + i as f64 * step).exp())))
        .fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, v)| if v > acc.1 { (i, v) } else { acc },
        );
    let mut a = ln_lo + (best_i as f64 - 1.0) * step;
    let mut b = ln_lo + (best_i as f64 + 1.0) * step;
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c.exp()), f(d.exp()));
    for _ in 0..200 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c.exp());
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d.exp());
        }
    }
    let k = (0.5 * (a + b)).exp();
    (k, f(k))
}

/// Writes `inst` as an EUC_2D TSPLIB file.
pub fn write_tsplib(path: &std::path::Path, inst: &Instance) {
    let mut text = format!(
        "NAME: {}\nTYPE: TSP\nDIMENSION: {}\nEDGE_WEIGHT_TYPE: EUC_2D\nNODE_COORD_SECTION\n",
        inst.name,
        inst.n()
    );
    for (i, c) in inst.cities.iter().enumerate() {
        text.push_str(&format!("{} {} {}\n", i + 1, c.x, c.y));
    }
    text.push_str("EOF\n");
    std::fs::write(path, text).unwrap();
}

/// Every file under `root` with its bytes, keyed by relative path.
pub fn tree(root: &std::path::Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    fn walk(
        root: &std::path::Path,
        dir: &std::path::Path,
        out: &mut std::collections::BTreeMap<String, Vec<u8>>,
    ) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = Default::default();
    walk(root, root, &mut out);
    out
}
