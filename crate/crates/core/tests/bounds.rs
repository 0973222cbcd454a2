//! Partial identification bounds: hand examples, population validity on
//! latent changes-in-changes designs, smooth envelopes and bootstrap bands.

mod common;

use std::collections::BTreeMap;

use common::{random_population, sharp_population, PopulationCell};
use ordcic::bounds::{
    bootstrap_bound_ci, cell_bounds, counterfactual_bounds, feasibility_check, raw_counterfactual, smooth_cell_bounds,
    smooth_envelope_bounds, smooth_minmax, BootstrapOptions, CellBoundInputs, CellSample, Extremum, LevelBounds, Side,
};
use ordcic::rng::substream;
use ordcic::stats_core::DiscreteCdf;
use proptest::prelude::*;
use rand::Rng;

fn cdf(v: [f64; 2]) -> DiscreteCdf {
    DiscreteCdf::from_cum_probs(vec![v[0], v[1], 1.0]).unwrap()
}

fn inputs(unconditional: [f64; 2], conditional: &[[f64; 2]]) -> CellBoundInputs {
    let map: BTreeMap<i64, DiscreteCdf> = conditional.iter().enumerate().map(|(z, v)| (z as i64, cdf(*v))).collect();
    CellBoundInputs::new(cdf(unconditional), map, None).unwrap()
}

fn all_inputs(cells: &[PopulationCell; 4]) -> [CellBoundInputs; 4] {
    [0, 1, 2, 3].map(|c| cells[c].inputs())
}

#[test]
fn cell_bound_examples() {
    let cell = inputs([0.6, 0.8], &[[0.55, 0.75], [0.65, 0.85]]);
    let b = cell_bounds(&cell, 0.2).unwrap();
    assert!((b.lower[0] - 0.5).abs() < 1e-12);
    assert!((b.upper[0] - 0.55).abs() < 1e-12);
    assert_eq!((b.lower[2], b.upper[2]), (1.0, 1.0));
    let free = cell_bounds(&cell, 1.0).unwrap();
    assert_eq!(&free.lower[..2], &[0.0, 0.0]);
    assert!((free.upper[1] - 0.75).abs() < 1e-12);
    assert!(cell_bounds(&cell, 1.2).is_err());
    assert!(cell_bounds(&cell, -0.1).is_err());
}

#[test]
fn feasibility_examples() {
    let cell = inputs([0.6, 0.8], &[[0.5, 0.8], [0.7, 0.8]]);
    let f = feasibility_check(&[&cell], 0.1);
    assert!((f.ratio - 0.2).abs() < 1e-12);
    assert!(!f.feasible);
    let b = f.binding.unwrap();
    assert_eq!((b.level, b.instrument), (0, 0));
    assert!(feasibility_check(&[&cell], 0.2).feasible);
    assert!(feasibility_check(&[&cell], 1.0).feasible);
    let flat = inputs([0.4, 0.7], &[[0.4, 0.7], [0.4, 0.7]]);
    let f = feasibility_check(&[&flat], 0.0);
    assert_eq!(f.ratio, 0.0);
    assert!(f.feasible);
}

#[test]
fn counterfactual_examples() {
    let shared = inputs([0.3, 0.7], &[[0.3, 0.7], [0.3, 0.7]]);
    let b = raw_counterfactual([&shared, &shared, &shared], 0.0).unwrap();
    for j in 0..2 {
        let truth = [0.3, 0.7][j];
        assert!(b.lower[j] <= truth + 1e-12 && truth <= b.upper[j] + 1e-12);
    }
    assert_eq!((b.lower[2], b.upper[2]), (1.0, 1.0));
    let mut rng = substream(5, 0);
    for _ in 0..50 {
        let (_, cells) = random_population(&mut rng);
        let inp = all_inputs(&cells);
        let b = raw_counterfactual([&inp[0], &inp[1], &inp[2]], 1.0).unwrap();
        assert_eq!(&b.lower[..2], &[0.0, 0.0]);
        assert_eq!(&b.upper[..2], &[1.0, 1.0]);
        assert!(feasibility_check(&[&inp[0], &inp[1], &inp[2], &inp[3]], 1.0).feasible);
    }
}

/// Discrete changes-in-changes interval from exhaustive scans over levels.
fn cic_interval(f00: [f64; 3], f01: [f64; 3], f10: [f64; 3], j: usize) -> (f64, f64) {
    let q = f01[j];
    let right = (0..3).rev().find(|&y| q >= f00[y]);
    let left = (0..3).find(|&y| q <= f00[y]);
    let lower = right.map_or(0.0, |y| f10[y]);
    let upper = left.map_or(1.0, |y| f10[y]);
    (lower, upper)
}

#[test]
fn no_misreporting_contains_the_cic_interval() {
    let mut rng = substream(6, 0);
    for _ in 0..500 {
        let draws: Vec<[f64; 3]> = (0..3)
            .map(|_| {
                let a: f64 = rng.gen_range(0.01..0.99);
                let b: f64 = rng.gen_range(0.01..0.99);
                [a.min(b), a.max(b), 1.0]
            })
            .collect();
        let cells: Vec<CellBoundInputs> =
            draws.iter().map(|v| inputs([v[0], v[1]], &[[v[0], v[1]], [v[0], v[1]]])).collect();
        let b = raw_counterfactual([&cells[0], &cells[1], &cells[2]], 0.0).unwrap();
        for j in 0..2 {
            let (lo, hi) = cic_interval(draws[0], draws[1], draws[2], j);
            assert!(b.lower[j] <= lo + 1e-12 && hi <= b.upper[j] + 1e-12, "{draws:?} j {j}");
        }
    }
}

#[test]
fn population_bounds_contain_the_truth() {
    let mut rng = substream(7, 0);
    for _ in 0..1000 {
        let (dgp, cells) = random_population(&mut rng);
        let inp = all_inputs(&cells);
        let worst = (0..4)
            .flat_map(|c| (0..2).map(move |j| (c, j)))
            .map(|(c, j)| cells[c].misreport_rate(j))
            .fold(0.0, f64::max);
        let alpha = (worst + rng.gen_range(0.0..0.2)).min(1.0);
        assert!(feasibility_check(&[&inp[0], &inp[1], &inp[2], &inp[3]], alpha).feasible);
        for c in 0..4 {
            let b = cell_bounds(&inp[c], alpha).unwrap();
            for j in 0..2 {
                assert!(b.lower[j] <= cells[c].f_y[j] + 1e-9 && cells[c].f_y[j] <= b.upper[j] + 1e-9);
            }
        }
        let b = raw_counterfactual([&inp[0], &inp[1], &inp[2]], alpha).unwrap();
        let truth = dgp.cdf(1, 1);
        for j in 0..2 {
            assert!(b.lower[j] <= truth[j] + 1e-9 && truth[j] <= b.upper[j] + 1e-9, "{dgp:?} alpha {alpha}");
        }
    }
}

#[test]
fn sharp_designs_collapse_and_contain_the_truth() {
    let mut rng = substream(8, 0);
    for _ in 0..500 {
        let rate = rng.gen_range(0.01..0.15);
        let (dgp, cells) = sharp_population(&mut rng, rate);
        let inp = all_inputs(&cells);
        let observed_min = cells.iter().flat_map(|c| c.unconditional()).fold(1.0, f64::min);
        if rate >= observed_min {
            continue;
        }
        for c in 0..4 {
            assert!((cells[c].misreport_rate(0) - rate).abs() < 1e-12);
            let b = cell_bounds(&inp[c], rate).unwrap();
            for j in 0..2 {
                assert!((b.lower[j] - cells[c].f_y[j]).abs() < 1e-9);
                assert!((b.upper[j] - cells[c].f_y[j]).abs() < 1e-9);
            }
        }
        let all = [&inp[0], &inp[1], &inp[2], &inp[3]];
        let feas = feasibility_check(&all, rate);
        assert!((feas.ratio - rate).abs() < 1e-9);
        assert!(feas.feasible);
        assert!(!feasibility_check(&all, feas.ratio - 1e-6).feasible);
        let b = raw_counterfactual([&inp[0], &inp[1], &inp[2]], rate).unwrap();
        let truth = dgp.cdf(1, 1);
        for j in 0..2 {
            assert!(b.lower[j] <= truth[j] + 1e-9 && truth[j] <= b.upper[j] + 1e-9);
        }
    }
}

#[test]
fn smooth_minmax_examples() {
    assert!((smooth_minmax(&[0.0, 0.0], 1.0, Side::Upper, Extremum::Max).unwrap() - 0.5).abs() < 1e-15);
    for side in [Side::Upper, Side::Lower] {
        for kind in [Extremum::Max, Extremum::Min] {
            assert_eq!(smooth_minmax(&[0.37], 5.0, side, kind).unwrap(), 0.37);
        }
    }
    let v = smooth_minmax(&[0.2, 0.8], 1e6, Side::Upper, Extremum::Max).unwrap();
    assert!((v - 0.8).abs() <= 5e-4);
    assert!(smooth_minmax(&[0.2, 0.8], 0.0, Side::Upper, Extremum::Max).is_err());
    assert!(smooth_minmax(&[0.2, 0.8], -1.0, Side::Lower, Extremum::Min).is_err());
    assert!(smooth_minmax(&[], 1.0, Side::Lower, Extremum::Min).is_err());
}

fn random_cell<R: Rng>(rng: &mut R) -> CellBoundInputs {
    let k = rng.gen_range(2..=4);
    let mut conds = Vec::new();
    for _ in 0..k {
        let a: f64 = rng.gen_range(0.05..0.95);
        let b: f64 = rng.gen_range(0.05..0.95);
        conds.push([a.min(b), a.max(b)]);
    }
    let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = w.iter().sum();
    let mut unc = [0.0; 2];
    for (c, wi) in conds.iter().zip(&w) {
        unc[0] += wi / total * c[0];
        unc[1] += wi / total * c[1];
    }
    inputs(unc, &conds)
}

fn envelope_holds(raw: &LevelBounds, smooth: &LevelBounds) -> bool {
    (0..3).all(|j| smooth.lower[j] <= raw.lower[j] + 1e-12 && raw.upper[j] <= smooth.upper[j] + 1e-12)
}

#[test]
fn smooth_envelopes_bracket_raw_bounds() {
    let mut rng = substream(9, 0);
    for _ in 0..500 {
        let cells: Vec<CellBoundInputs> = (0..4).map(|_| random_cell(&mut rng)).collect();
        let all = [&cells[0], &cells[1], &cells[2], &cells[3]];
        let alpha = (feasibility_check(&all, 0.0).ratio + rng.gen_range(0.0..0.3)).min(1.0);
        let raw = raw_counterfactual([&cells[0], &cells[1], &cells[2]], alpha).unwrap();
        let mut prev: Option<LevelBounds> = None;
        for kappa in [1e2, 1e3, 1e4, 1e6, 1e8] {
            for c in &cells {
                let rc = cell_bounds(c, alpha).unwrap();
                let sc = smooth_cell_bounds(c, alpha, kappa).unwrap();
                assert!(envelope_holds(&rc, &sc));
            }
            let s = smooth_envelope_bounds(all, alpha, kappa).unwrap();
            assert!(envelope_holds(&raw, &s), "kappa {kappa}: {raw:?} {s:?}");
            for j in 0..3 {
                assert!(s.lower[j] <= s.upper[j] + 1e-12);
            }
            if let Some(p) = prev {
                assert!(envelope_holds(&s, &p), "not tightening at kappa {kappa}: {p:?} -> {s:?} cells {:?}", cells.iter().map(|c| smooth_cell_bounds(c, alpha, kappa).unwrap()).collect::<Vec<_>>());
            }
            prev = Some(s);
        }
        let tight = prev.unwrap();
        for j in 0..3 {
            assert!((tight.lower[j] - raw.lower[j]).abs() < 1e-3 && (tight.upper[j] - raw.upper[j]).abs() < 1e-3);
        }
    }
}

#[test]
fn infeasible_alpha_is_an_error() {
    let cell = inputs([0.6, 0.8], &[[0.5, 0.8], [0.7, 0.8]]);
    let err = smooth_envelope_bounds([&cell, &cell, &cell, &cell], 0.1, 1e4).unwrap_err();
    assert!(err.to_string().contains("feasib"), "{err}");
}

fn sample_population(cells: &[PopulationCell; 4], n: usize, seed: u64) -> [CellSample; 4] {
    [0u8, 1, 2, 3].map(|c| {
        let mut rng = substream(seed, c as u64);
        cells[c as usize].sample(n, &mut rng).with_cell(c / 2, c % 2)
    })
}

fn band_cells() -> [PopulationCell; 4] {
    let mut rng = substream(10, 0);
    sharp_population(&mut rng, 0.05).1
}

#[test]
fn bootstrap_band_options_and_identities() {
    let cells = band_cells();
    let samples = sample_population(&cells, 2000, 3);
    let s = [&samples[0], &samples[1], &samples[2], &samples[3]];
    let inp: Vec<CellBoundInputs> = samples.iter().map(|x| CellBoundInputs::from_sample(x).unwrap()).collect();
    let alpha = feasibility_check(&[&inp[0], &inp[1], &inp[2], &inp[3]], 0.0).ratio + 0.1;
    let point = smooth_envelope_bounds([&inp[0], &inp[1], &inp[2], &inp[3]], alpha, 1e4).unwrap();
    let opts = BootstrapOptions {
        k: 0.0,
        ..BootstrapOptions::default()
    };
    let bands = bootstrap_bound_ci(s, alpha, 1e4, &opts).unwrap();
    assert_eq!(bands.lower, point.lower);
    assert_eq!(bands.upper, point.upper);
    assert_eq!(bands.used + bands.dropped, 200);
    let small = BootstrapOptions {
        replicates: 199,
        ..BootstrapOptions::default()
    };
    assert!(bootstrap_bound_ci(s, alpha, 1e4, &small).is_err());
    let bad_level = BootstrapOptions {
        level: 0.4,
        ..BootstrapOptions::default()
    };
    assert!(bootstrap_bound_ci(s, alpha, 1e4, &bad_level).is_err());
    let a = bootstrap_bound_ci(s, alpha, 1e4, &BootstrapOptions::default()).unwrap();
    let b = bootstrap_bound_ci(s, alpha, 1e4, &BootstrapOptions::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn too_many_infeasible_replicates_is_an_error() {
    let cells = band_cells();
    let samples = sample_population(&cells, 300, 4);
    let inp: Vec<CellBoundInputs> = samples.iter().map(|x| CellBoundInputs::from_sample(x).unwrap()).collect();
    // Exactly at the sample ratio, roughly half the replicates fall short.
    let alpha = feasibility_check(&[&inp[0], &inp[1], &inp[2], &inp[3]], 0.0).ratio;
    let err = bootstrap_bound_ci(
        [&samples[0], &samples[1], &samples[2], &samples[3]],
        alpha,
        1e4,
        &BootstrapOptions::default(),
    )
    .unwrap_err();
    assert!(err.to_string().contains("replicates"), "{err}");
}

#[test]
fn large_bootstrap_is_stable_across_seeds() {
    let cells = band_cells();
    let samples = sample_population(&cells, 2000, 5);
    let s = [&samples[0], &samples[1], &samples[2], &samples[3]];
    let inp: Vec<CellBoundInputs> = samples.iter().map(|x| CellBoundInputs::from_sample(x).unwrap()).collect();
    let alpha = feasibility_check(&[&inp[0], &inp[1], &inp[2], &inp[3]], 0.0).ratio + 0.1;
    let run = |seed| {
        let opts = BootstrapOptions {
            replicates: 2000,
            seed,
            ..BootstrapOptions::default()
        };
        bootstrap_bound_ci(s, alpha, 1e4, &opts).unwrap()
    };
    let (a, b) = (run(1), run(2));
    for j in 0..2 {
        assert!((a.lower[j] - b.lower[j]).abs() <= 0.01);
        assert!((a.upper[j] - b.upper[j]).abs() <= 0.01);
    }
}

fn arb_cell() -> impl Strategy<Value = CellBoundInputs> {
    (any::<u64>()).prop_map(|seed| random_cell(&mut substream(seed, 0)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn bounds_are_monotone_in_alpha(cells in prop::array::uniform3(arb_cell()), a1 in 0.0f64..0.9, a2 in 0.0f64..0.9) {
        let (lo, hi) = (a1.min(a2), a1.max(a2));
        for c in &cells {
            let (b_lo, b_hi) = (cell_bounds(c, lo).unwrap(), cell_bounds(c, hi).unwrap());
            for j in 0..3 {
                prop_assert!(b_hi.lower[j] <= b_lo.lower[j] + 1e-15);
                prop_assert_eq!(b_hi.upper[j], b_lo.upper[j]);
            }
            prop_assert!(b_lo.lower[0] <= b_lo.lower[1] && b_lo.upper[0] <= b_lo.upper[1]);
        }
        let cf_lo = raw_counterfactual([&cells[0], &cells[1], &cells[2]], lo).unwrap();
        let cf_hi = raw_counterfactual([&cells[0], &cells[1], &cells[2]], hi).unwrap();
        for j in 0..3 {
            prop_assert!(cf_hi.lower[j] <= cf_lo.lower[j] + 1e-15);
            prop_assert!(cf_hi.upper[j] >= cf_lo.upper[j] - 1e-15);
        }
        prop_assert_eq!((cf_lo.lower[2], cf_lo.upper[2]), (1.0, 1.0));
    }

    #[test]
    fn composition_of_point_identified_cells(p in prop::array::uniform3((0.01f64..0.99, 0.01f64..0.99))) {
        let lb: Vec<LevelBounds> = p.iter().map(|(a, b)| {
            let v = [a.min(*b), a.max(*b), 1.0];
            LevelBounds { lower: v, upper: v }
        }).collect();
        let out = counterfactual_bounds(&lb[0], &lb[1], &lb[2]);
        for j in 0..2 {
            let (lo, hi) = cic_interval(lb[0].lower, lb[1].lower, lb[2].lower, j);
            prop_assert_eq!(out.lower[j], lo);
            prop_assert_eq!(out.upper[j], hi);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn smooth_extrema_bracket_with_bounded_gap(values in prop::collection::vec(-2.0f64..2.0, 1..6), log_kappa in -2.0f64..10.0) {
        let kappa = 10f64.powf(log_kappa);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let gap = 0.5 * (values.len() - 1) as f64 / kappa.sqrt() + 1e-12;
        let up_max = smooth_minmax(&values, kappa, Side::Upper, Extremum::Max).unwrap();
        let lo_max = smooth_minmax(&values, kappa, Side::Lower, Extremum::Max).unwrap();
        let up_min = smooth_minmax(&values, kappa, Side::Upper, Extremum::Min).unwrap();
        let lo_min = smooth_minmax(&values, kappa, Side::Lower, Extremum::Min).unwrap();
        prop_assert!(up_max >= max - 1e-12 && up_max - max <= gap);
        prop_assert!(lo_max <= max + 1e-12 && max - lo_max <= gap);
        prop_assert!(up_min >= min - 1e-12 && up_min - min <= gap);
        prop_assert!(lo_min <= min + 1e-12 && min - lo_min <= gap);
    }
}
