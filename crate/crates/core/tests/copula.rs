//! Copula families against their closed forms, Spearman's rho against the
//! Debye-function formula, calibration and sampling.

use ordcic::copula::{
    calibrate_theta, copula_cdf, sample_pair, spearman_rho, spearman_rho_with_nodes, CopulaFamily, CopulaSpec,
};
use ordcic::rng::substream;
use proptest::prelude::*;
use rand::Rng;

fn spec(family: CopulaFamily, theta: f64) -> CopulaSpec {
    CopulaSpec::new(family, theta).unwrap()
}

fn frank_direct(theta: f64, u: f64, v: f64) -> f64 {
    let num = ((-theta * u).exp() - 1.0) * ((-theta * v).exp() - 1.0);
    -(1.0 + num / ((-theta).exp() - 1.0)).ln() / theta
}

fn clayton_direct(theta: f64, u: f64, v: f64) -> f64 {
    let s = u.powf(-theta) + v.powf(-theta) - 1.0;
    if s <= 0.0 {
        0.0
    } else {
        s.powf(-1.0 / theta)
    }
}

/// Debye function `D_k(x) = k / x^k * int_0^x t^k / (e^t - 1) dt` by Simpson.
fn debye(k: i32, x: f64) -> f64 {
    let n = 20_000;
    let h = x / n as f64;
    let f = |t: f64| if t == 0.0 { if k == 1 { 1.0 } else { 0.0 } } else { t.powi(k) / t.exp_m1() };
    let mut s = f(0.0) + f(x);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    k as f64 / x.powi(k) * s * h / 3.0
}

fn frank_spearman_oracle(theta: f64) -> f64 {
    1.0 - 12.0 / theta * (debye(1, theta) - debye(2, theta))
}

#[test]
fn closed_form_values() {
    assert!((spec(CopulaFamily::Clayton, 2.0).cdf(0.5, 0.5) - 7f64.powf(-0.5)).abs() < 1e-12);
    assert!((spec(CopulaFamily::Frank, 1e-9).cdf(0.3, 0.6) - 0.18).abs() < 1e-12);
    assert_eq!(spec(CopulaFamily::Frank, 0.0).cdf(0.3, 0.6), 0.3 * 0.6);
    for &theta in &[-8.0, -2.0, -0.3, 0.5, 4.0, 15.0] {
        for &(u, v) in &[(0.1, 0.2), (0.5, 0.5), (0.9, 0.3), (0.77, 0.99)] {
            let c = spec(CopulaFamily::Frank, theta).cdf(u, v);
            assert!((c - frank_direct(theta, u, v)).abs() < 1e-12, "frank {theta} ({u},{v})");
        }
    }
    for &theta in &[-1.0, -0.7, -0.2, 0.4, 2.0, 9.0] {
        for &(u, v) in &[(0.1, 0.2), (0.5, 0.5), (0.9, 0.3), (0.77, 0.99)] {
            let c = spec(CopulaFamily::Clayton, theta).cdf(u, v);
            assert!((c - clayton_direct(theta, u, v)).abs() < 1e-12, "clayton {theta} ({u},{v})");
        }
    }
}

#[test]
fn margins_and_boundaries() {
    let specs = [
        CopulaSpec::independence(),
        spec(CopulaFamily::Frank, -5.0),
        spec(CopulaFamily::Frank, 3.0),
        spec(CopulaFamily::Clayton, -0.6),
        spec(CopulaFamily::Clayton, 2.5),
    ];
    for s in &specs {
        for k in 0..=20 {
            let u = k as f64 / 20.0;
            assert!((copula_cdf(s, u, 1.0).unwrap() - u).abs() < 1e-12);
            assert!((copula_cdf(s, 1.0, u).unwrap() - u).abs() < 1e-12);
            assert!(copula_cdf(s, u, 0.0).unwrap().abs() < 1e-15);
            assert!(copula_cdf(s, 0.0, u).unwrap().abs() < 1e-15);
        }
    }
}

#[test]
fn invalid_parameters_are_rejected() {
    assert!(CopulaSpec::new(CopulaFamily::Clayton, -1.5).is_err());
    assert!(CopulaSpec::new(CopulaFamily::Clayton, 0.0).is_err());
    assert!(CopulaSpec::new(CopulaFamily::Frank, f64::NAN).is_err());
    let bad = CopulaSpec { family: CopulaFamily::Clayton, theta: -2.0 };
    assert!(copula_cdf(&bad, 0.5, 0.5).is_err());
    assert!(copula_cdf(&CopulaSpec::independence(), 1.2, 0.5).is_err());
}

#[test]
fn frechet_bounds_on_grid() {
    let mut rng = substream(11, 0);
    for family in [CopulaFamily::Frank, CopulaFamily::Clayton] {
        for _ in 0..10 {
            let theta = match family {
                CopulaFamily::Frank => rng.gen_range(-20.0..20.0),
                _ => rng.gen_range(-1.0..10.0),
            };
            let s = spec(family, theta);
            for i in 0..=200 {
                for j in 0..=200 {
                    let (u, v) = (i as f64 / 200.0, j as f64 / 200.0);
                    let c = s.cdf(u, v);
                    assert!(c >= (u + v - 1.0).max(0.0) - 1e-12, "{family} {theta} ({u},{v})");
                    assert!(c <= u.min(v) + 1e-12, "{family} {theta} ({u},{v})");
                }
            }
        }
    }
}

#[test]
fn spearman_of_independence_is_zero() {
    assert!(spearman_rho(&CopulaSpec::independence()).abs() < 1e-10);
    assert!(spearman_rho(&spec(CopulaFamily::Frank, 0.0)).abs() < 1e-10);
}

#[test]
fn frank_spearman_matches_debye_formula() {
    for &theta in &[-12.0, -4.0, -1.0, 0.5, 3.0, 9.0] {
        let rho = spearman_rho(&spec(CopulaFamily::Frank, theta));
        assert!((rho - frank_spearman_oracle(theta)).abs() < 1e-8, "theta {theta}");
    }
}

#[test]
fn spearman_quadrature_is_converged() {
    for s in [
        spec(CopulaFamily::Frank, -4.5),
        spec(CopulaFamily::Clayton, -0.6),
        spec(CopulaFamily::Clayton, 3.0),
    ] {
        let coarse = spearman_rho_with_nodes(&s, 128);
        let fine = spearman_rho_with_nodes(&s, 512);
        assert!((coarse - fine).abs() < 1e-8, "{s:?}: {coarse} vs {fine}");
    }
}

#[test]
fn frank_spearman_is_increasing() {
    let mut prev = -1.0;
    for k in -40..=40 {
        let rho = spearman_rho(&spec(CopulaFamily::Frank, k as f64 * 0.5));
        assert!(rho > prev || k == 0 && rho >= prev);
        prev = rho;
    }
}

#[test]
fn calibration_round_trip() {
    assert_eq!(calibrate_theta(CopulaFamily::Frank, 0.0).unwrap().family, CopulaFamily::Independence);
    assert_eq!(calibrate_theta(CopulaFamily::Clayton, 0.0).unwrap().family, CopulaFamily::Independence);
    for family in [CopulaFamily::Frank, CopulaFamily::Clayton] {
        for target in [-0.5, -0.25, 0.25, 0.5] {
            let s = calibrate_theta(family, target).unwrap();
            assert!((spearman_rho(&s) - target).abs() <= 1e-6, "{family} {target}");
        }
    }
    let clayton = calibrate_theta(CopulaFamily::Clayton, -0.5).unwrap();
    assert!((-1.0..0.0).contains(&clayton.theta));
    // Bisection oracle against the Debye formula.
    let (mut lo, mut hi) = (-20.0, 0.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if frank_spearman_oracle(mid) < -0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let frank = calibrate_theta(CopulaFamily::Frank, -0.5).unwrap();
    assert!((frank.theta - 0.5 * (lo + hi)).abs() < 1e-5);
    assert!(calibrate_theta(CopulaFamily::Frank, 1.0).is_err());
    assert!(calibrate_theta(CopulaFamily::Independence, 0.3).is_err());
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|a, b| values[*a].total_cmp(&values[*b]));
    let mut r = vec![0.0; values.len()];
    for (rank, i) in idx.into_iter().enumerate() {
        r[i] = rank as f64;
    }
    r
}

fn empirical_spearman(u: &[f64], v: &[f64]) -> f64 {
    let (ru, rv) = (ranks(u), ranks(v));
    let n = u.len() as f64;
    let mean = (n - 1.0) / 2.0;
    let cov: f64 = ru.iter().zip(&rv).map(|(a, b)| (a - mean) * (b - mean)).sum();
    let var: f64 = ru.iter().map(|a| (a - mean) * (a - mean)).sum();
    cov / var
}

fn ks_uniform(values: &[f64]) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn sampling_reproduces_dependence_and_margins() {
    let n = 100_000;
    let cases = [
        (CopulaSpec::independence(), 0.0),
        (calibrate_theta(CopulaFamily::Frank, -0.5).unwrap(), -0.5),
        (calibrate_theta(CopulaFamily::Clayton, -0.5).unwrap(), -0.5),
        (calibrate_theta(CopulaFamily::Clayton, 0.5).unwrap(), 0.5),
    ];
    for (k, (s, target)) in cases.iter().enumerate() {
        let mut rng = substream(2024, k as u64);
        let (u, v): (Vec<f64>, Vec<f64>) = (0..n).map(|_| sample_pair(s, &mut rng)).unzip();
        let rho = empirical_spearman(&u, &v);
        assert!((rho - target).abs() <= 0.02, "{s:?}: {rho}");
        assert!(ks_uniform(&u) <= 0.01);
        assert!(ks_uniform(&v) <= 0.01);
    }
}

fn arb_spec() -> impl Strategy<Value = CopulaSpec> {
    prop_oneof![
        Just(CopulaSpec::independence()),
        (-30.0f64..30.0).prop_map(|t| spec(CopulaFamily::Frank, t)),
        (-1.0f64..-1e-3).prop_map(|t| spec(CopulaFamily::Clayton, t)),
        (1e-3f64..20.0).prop_map(|t| spec(CopulaFamily::Clayton, t)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn two_increasing(s in arb_spec(), a in 0.0f64..=1.0, b in 0.0f64..=1.0, c in 0.0f64..=1.0, d in 0.0f64..=1.0) {
        let (u1, u2) = (a.min(b), a.max(b));
        let (v1, v2) = (c.min(d), c.max(d));
        let volume = s.cdf(u2, v2) - s.cdf(u1, v2) - s.cdf(u2, v1) + s.cdf(u1, v1);
        prop_assert!(volume >= -1e-12, "volume {}", volume);
    }

    #[test]
    fn conditional_inverse_solves_partial(s in arb_spec(), u in 0.02f64..0.98, w in 0.02f64..0.98) {
        let v = s.conditional_inverse(u, w);
        prop_assert!((0.0..=1.0).contains(&v));
        // Generalized inverse: the conditional CDF crosses w at v. Near the
        // lower Frechet bound it can jump, so bracket instead of matching.
        let below = s.eval(u, (v - 1e-9).max(0.0)).du;
        let above = s.eval(u, (v + 1e-9).min(1.0)).du;
        prop_assert!(below <= w + 1e-6 && above >= w - 1e-6, "v {} below {} above {} w {}", v, below, above, w);
    }
}
