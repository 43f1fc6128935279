//! Checks on the test oracles themselves, and library special functions
//! against an independent implementation.

mod common;

use common::*;
use eee_core::special;
use eee_core::tsp::brute_force_optimum;

#[test]
fn gauss_kronrod_weights_integrate_polynomials_exactly() {
    let ksum = 2.0 * WGK[..7].iter().sum::<f64>() + WGK[7];
    let gsum = 2.0 * WG[..3].iter().sum::<f64>() + WG[3];
    assert!((ksum - 2.0).abs() < 1e-15 && (gsum - 2.0).abs() < 1e-15);
    for deg in 0..=22 {
        let (k, g) = gk15(&|x: f64| x.powi(deg), -1.0, 1.0);
        let exact = if deg % 2 == 0 {
            2.0 / (deg as f64 + 1.0)
        } else {
            0.0
        };
        assert!((k - exact).abs() < 1e-14, "kronrod degree {deg}");
        if deg <= 13 {
            assert!((g - exact).abs() < 1e-14, "gauss degree {deg}");
        }
    }
}

#[test]
fn adaptive_quadrature_known_integrals() {
    let pi = std::f64::consts::PI;
    assert!((integrate(f64::sin, 0.0, pi, 1e-13) - 2.0).abs() < 1e-12);
    assert!((integrate(f64::exp, 0.0, 1.0, 1e-13) - (1f64.exp() - 1.0)).abs() < 1e-13);
    // peaked integrand, sigma = 0.01
    let g = |x: f64| (-(x - 0.3) * (x - 0.3) / 2e-4).exp();
    assert!((integrate(g, -1.0, 1.0, 1e-14) - (2e-4 * pi).sqrt()).abs() < 1e-13);
}

#[test]
fn held_karp_agrees_with_brute_force() {
    for seed in 0..8 {
        let inst = random_instance(seed, 7);
        assert_eq!(
            held_karp(&inst.distance_matrix()),
            brute_force_optimum(&inst).unwrap().length
        );
    }
}

#[test]
fn discrepancy_matches_scipy() {
    let pts = sobol_fixture();
    let first8: Vec<Vec<f64>> = pts[..8].iter().map(|p| p[..2].to_vec()).collect();
    let first64: Vec<Vec<f64>> = pts[..64].iter().map(|p| p[..4].to_vec()).collect();
    // scipy.stats.qmc.discrepancy(method="CD"), which reports the squared value
    assert!((centered_l2_discrepancy(&first8) - 0.011_775_440_639_919_532).abs() < 1e-15);
    assert!((centered_l2_discrepancy(&first64) - 0.001_466_925_627_581_439).abs() < 1e-15);
}

pub fn sobol_fixture() -> Vec<Vec<f64>> {
    include_str!("data/sobol_8d_first_64.txt")
        .lines()
        .map(|l| l.split_whitespace().map(|t| t.parse().unwrap()).collect())
        .collect()
}

// scipy.special: (x, erf, erfc)
const ERF: &[(f64, f64, f64)] = &[
    (-2.0, -0.9953222650189527, 1.9953222650189528),
    (-0.3, -0.3286267594591274, 1.3286267594591274),
    (0.4, 0.42839235504666845, 0.5716076449533316),
    (1.7, 0.9837904585907745, 0.01620954140922544),
    (3.5, 0.9999992569016276, 7.430983723414129e-07),
    (5.0, 0.9999999999984626, 1.5374597944280347e-12),
];
// scipy.special: (x, gammaln, psi)
const LN_GAMMA_DIGAMMA: &[(f64, f64, f64)] = &[
    (0.1, 2.252712651734206, -10.423754940411076),
    (0.5, 0.5723649429247, -1.9635100260214235),
    (1.0, 0.0, -0.5772156649015329),
    (2.5, 0.2846828704729192, 0.7031566406452432),
    (7.3, 7.147892523022249, 1.917820335637986),
    (30.0, 71.257038967168, 3.384438132685525),
    (150.0, 600.0094705553274, 5.007298257075679),
    (6000.5, 46198.00742084991, 8.699514749367598),
];
// scipy.special.gammainc: (a, x, P)
const GAMMA_P: &[(f64, f64, f64)] = &[
    (0.5, 0.2, 0.47291074313446196),
    (2.5, 3.0, 0.6937810815867212),
    (10.0, 4.0, 0.008132242796933871),
    (10.0, 20.0, 0.9950045876916924),
    (150.0, 140.0, 0.2095436239186071),
    (5900.0, 5950.0, 0.7432673304839177),
    (3683.375724078471, 3589.14983346251, 0.059321863615245246),
];

#[test]
fn special_functions_match_reference_values() {
    for &(x, erf, erfc) in ERF {
        assert!((special::erf(x) - erf).abs() < 1e-15, "erf {x}");
        assert!((special::erfc(x) - erfc).abs() <= 1e-13 * erfc, "erfc {x}");
    }
    for &(x, lg, psi) in LN_GAMMA_DIGAMMA {
        assert!(
            (special::ln_gamma(x) - lg).abs() <= 2e-14 * lg.abs().max(1.0),
            "ln_gamma {x}"
        );
        assert!(
            (special::digamma(x) - psi).abs() <= 1e-14 * psi.abs().max(1.0),
            "digamma {x}"
        );
    }
    for &(a, x, p) in GAMMA_P {
        assert!(
            (special::gamma_p(a, x) - p).abs() <= 1e-11 * p,
            "P({a}, {x})"
        );
        assert!((special::gamma_p(a, x) + special::gamma_q(a, x) - 1.0).abs() < 1e-14);
    }
}

#[test]
fn trigamma_matches_difference_quotient_of_digamma() {
    for &x in &[0.7, 3.0, 12.0, 500.0] {
        let h = 1e-5 * x;
        let fd = (special::digamma(x + h) - special::digamma(x - h)) / (2.0 * h);
        assert!((special::trigamma(x) - fd).abs() < 1e-7 * special::trigamma(x).max(1.0));
    }
}
