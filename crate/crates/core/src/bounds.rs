//! Nonparametric bounds on the untreated outcome distribution of the
//! treated-after cell under one-sided misreporting.
//!
//! For each cell, `L(j) = (F_C(j) - min(F_C(j), alpha)) / (1 - min(F_C(j), alpha))`
//! and `U(j) = min_z F_{C|Z}(j | z)`. The counterfactual bounds compose the
//! cells as `L11 = L10(U00^{(-1)}(L01))` and `U11 = U10(L00^{-1}(U01))`. The
//! smoothed versions replace `min` and `max` by differentiable envelopes, and
//! bootstrap bands shift the smoothed bounds outward by a quantile of the
//! replicate deviations.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::substream;
use crate::stats_core::{
    cdf_at, empirical_cdf, left_inverse_values, right_inverse_values, sample_quantile, DiscreteCdf,
};
use crate::{Error, Result};

/// Outcome levels of the model.
pub const LEVELS: [usize; 3] = [0, 1, 2];

/// Default smoothing constant of the envelopes.
pub const DEFAULT_SMOOTH_KAPPA: f64 = 1e4;

/// Slack in the feasibility comparison.
pub const FEASIBILITY_TOL: f64 = 1e-12;

/// Distributional inputs of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellBoundInputs {
    pub unconditional: DiscreteCdf,
    /// CDF of the outcome given each instrument value.
    pub conditional: BTreeMap<i64, DiscreteCdf>,
    pub cell: Option<(u8, u8)>,
}

impl CellBoundInputs {
    /// Validates the CDFs: levels `0, 1, 2`, a nonempty instrument support and
    /// conditional CDFs strictly inside `(0, 1)` at levels 0 and 1.
    pub fn new(unconditional: DiscreteCdf, conditional: BTreeMap<i64, DiscreteCdf>, cell: Option<(u8, u8)>) -> Result<Self> {
        if conditional.is_empty() {
            return Err(Error::Input("instrument support is empty".into()));
        }
        for f in std::iter::once(&unconditional).chain(conditional.values()) {
            if f.levels() != LEVELS {
                return Err(Error::Input("bound inputs must be CDFs on levels 0, 1, 2".into()));
            }
        }
        for (z, f) in &conditional {
            for j in 0..2 {
                let v = f.cum_probs()[j];
                if !(v > 0.0 && v < 1.0) {
                    return Err(Error::Input(format!(
                        "conditional CDF at instrument value {z} equals {v} at level {j}; it must lie strictly inside (0,1)"
                    )));
                }
            }
        }
        Ok(Self {
            unconditional,
            conditional,
            cell,
        })
    }

    /// Empirical inputs from a cell sample.
    pub fn from_sample(sample: &CellSample) -> Result<Self> {
        let all: Vec<usize> = sample.outcomes.iter().map(|&c| c as usize).collect();
        let unconditional = empirical_cdf(&all, 2)?;
        let mut groups: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (&c, &z) in sample.outcomes.iter().zip(&sample.instrument) {
            groups.entry(z).or_default().push(c as usize);
        }
        let conditional = groups
            .into_iter()
            .map(|(z, ys)| Ok((z, empirical_cdf(&ys, 2)?)))
            .collect::<Result<_>>()?;
        Self::new(unconditional, conditional, sample.cell)
    }

    fn f(&self, j: usize) -> f64 {
        self.unconditional.cum_probs()[j]
    }

    fn conditional_at(&self, j: usize) -> Vec<f64> {
        self.conditional.values().map(|f| f.cum_probs()[j]).collect()
    }
}

/// Outcomes and integer instrument codes of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSample {
    pub outcomes: Vec<u8>,
    pub instrument: Vec<i64>,
    pub cell: Option<(u8, u8)>,
}

impl CellSample {
    pub fn new(outcomes: Vec<u8>, instrument: Vec<i64>) -> Result<Self> {
        if outcomes.len() != instrument.len() {
            return Err(Error::Input("outcome and instrument columns differ in length".into()));
        }
        if outcomes.is_empty() {
            return Err(Error::Input("empty cell sample".into()));
        }
        if let Some(i) = outcomes.iter().position(|&c| c > 2) {
            return Err(Error::Input(format!("row {i}: outcome {} outside levels 0..=2", outcomes[i])));
        }
        Ok(Self {
            outcomes,
            instrument,
            cell: None,
        })
    }

    pub fn with_cell(mut self, g: u8, t: u8) -> Self {
        self.cell = Some((g, t));
        self
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    /// I.i.d. resample of the rows.
    pub fn resample<R: Rng + ?Sized>(&self, rng: &mut R) -> Self {
        let n = self.len();
        let mut outcomes = Vec::with_capacity(n);
        let mut instrument = Vec::with_capacity(n);
        for _ in 0..n {
            let i = rng.gen_range(0..n);
            outcomes.push(self.outcomes[i]);
            instrument.push(self.instrument[i]);
        }
        Self {
            outcomes,
            instrument,
            cell: self.cell,
        }
    }
}

/// Lower and upper bound functions on levels `0, 1, 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelBounds {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha must lie in [0,1], got {alpha}")));
    }
    Ok(())
}

/// Per-cell bounds on the distribution of true consumption.
pub fn cell_bounds(inputs: &CellBoundInputs, alpha: f64) -> Result<LevelBounds> {
    check_alpha(alpha)?;
    let mut out = LevelBounds {
        lower: [1.0; 3],
        upper: [1.0; 3],
    };
    for j in 0..2 {
        let f = inputs.f(j);
        let m = f.min(alpha);
        if m >= 1.0 {
            return Err(Error::Input(format!(
                "degenerate lower bound at level {j}: min(F_C, alpha) equals 1"
            )));
        }
        out.lower[j] = (f - m) / (1.0 - m);
        out.upper[j] = inputs.conditional_at(j).into_iter().fold(f64::INFINITY, f64::min);
    }
    Ok(out)
}

/// Composes cell bounds into bounds for the untreated distribution of cell
/// `(1, 1)`. Works on raw or smoothed (possibly non-monotone) bound values.
pub fn counterfactual_bounds(b00: &LevelBounds, b01: &LevelBounds, b10: &LevelBounds) -> LevelBounds {
    let mut out = LevelBounds {
        lower: [1.0; 3],
        upper: [1.0; 3],
    };
    for j in 0..2 {
        out.lower[j] = cdf_at(&b10.lower, right_inverse_values(&LEVELS, &b00.upper, b01.lower[j]));
        out.upper[j] = cdf_at(&b10.upper, left_inverse_values(&LEVELS, &b00.lower, b01.upper[j]));
    }
    out
}

/// Where the feasibility ratio attains its maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BindingPoint {
    /// Position of the cell in the input list.
    pub cell_index: usize,
    pub cell: Option<(u8, u8)>,
    pub level: usize,
    pub instrument: i64,
}

/// Feasibility verdict for a misreporting level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    pub alpha: f64,
    /// Largest `(F_C(j) - F_{C|Z}(j|z)) / (1 - F_{C|Z}(j|z))`.
    pub ratio: f64,
    pub feasible: bool,
    pub binding: Option<BindingPoint>,
}

/// Smallest admissible misreporting level implied by the data, compared with
/// `alpha`.
pub fn feasibility_check(inputs: &[&CellBoundInputs], alpha: f64) -> Feasibility {
    let mut ratio = f64::NEG_INFINITY;
    let mut binding = None;
    for (c, cell) in inputs.iter().enumerate() {
        for j in 0..2 {
            let f = cell.f(j);
            for (z, fz) in &cell.conditional {
                let fz = fz.cum_probs()[j];
                let r = (f - fz) / (1.0 - fz);
                if r > ratio {
                    ratio = r;
                    binding = Some(BindingPoint {
                        cell_index: c,
                        cell: cell.cell,
                        level: j,
                        instrument: *z,
                    });
                }
            }
        }
    }
    let ratio = ratio.max(0.0);
    Feasibility {
        alpha,
        ratio,
        feasible: alpha >= ratio - FEASIBILITY_TOL,
        binding,
    }
}

/// Which envelope of a smoothed extremum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// Lies above the exact extremum.
    Upper,
    /// Lies below the exact extremum.
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extremum {
    Max,
    Min,
}

fn smooth_pair(f: f64, g: f64, kappa: f64, side: Side, kind: Extremum) -> f64 {
    let mean = 0.5 * (f + g);
    let d2 = (f - g) * (f - g);
    let root = (d2 + 1.0 / kappa).sqrt();
    match (kind, side) {
        (Extremum::Max, Side::Upper) => mean + 0.5 * root,
        (Extremum::Max, Side::Lower) => mean + 0.5 * d2 / root,
        (Extremum::Min, Side::Upper) => mean - 0.5 * d2 / root,
        (Extremum::Min, Side::Lower) => mean - 0.5 * root,
    }
}

/// Smooth approximation of the maximum or minimum of `values`, applied
/// pairwise from the left. The upper envelope never falls below the exact
/// extremum and the lower one never exceeds it; the gap is at most
/// `0.5 (n - 1) / sqrt(kappa)`.
pub fn smooth_minmax(values: &[f64], kappa: f64, side: Side, kind: Extremum) -> Result<f64> {
    if !(kappa > 0.0) {
        return Err(Error::Domain(format!("smoothing constant must be positive, got {kappa}")));
    }
    let (first, rest) = values
        .split_first()
        .ok_or_else(|| Error::Input("smooth extremum of an empty set".into()))?;
    Ok(rest.iter().fold(*first, |acc, v| smooth_pair(acc, *v, kappa, side, kind)))
}

/// Smoothed per-cell bounds: `U~ = psi_-^U` over instrument values and
/// `L~ = (F - psi_-^U(F, alpha)) / (1 - psi_-^L(F, alpha))`.
pub fn smooth_cell_bounds(inputs: &CellBoundInputs, alpha: f64, kappa: f64) -> Result<LevelBounds> {
    check_alpha(alpha)?;
    let mut out = LevelBounds {
        lower: [1.0; 3],
        upper: [1.0; 3],
    };
    for j in 0..2 {
        let f = inputs.f(j);
        let num = f - smooth_minmax(&[f, alpha], kappa, Side::Upper, Extremum::Min)?;
        let den = 1.0 - smooth_minmax(&[f, alpha], kappa, Side::Lower, Extremum::Min)?;
        if !(den > 0.0) {
            return Err(Error::Input(format!("degenerate smoothed lower bound at level {j}")));
        }
        out.lower[j] = num / den;
        out.upper[j] = smooth_minmax(&inputs.conditional_at(j), kappa, Side::Upper, Extremum::Min)?;
    }
    Ok(out)
}

fn require_feasible(cells: [&CellBoundInputs; 4], alpha: f64) -> Result<Feasibility> {
    let feas = feasibility_check(&cells, alpha);
    if feas.feasible {
        Ok(feas)
    } else {
        Err(Error::InfeasibleAlpha {
            alpha,
            ratio: feas.ratio,
        })
    }
}

/// Smoothed counterfactual bounds for cell `(1, 1)` from cells
/// `00, 01, 10, 11`; errors if `alpha` fails the feasibility check.
pub fn smooth_envelope_bounds(cells: [&CellBoundInputs; 4], alpha: f64, kappa: f64) -> Result<LevelBounds> {
    require_feasible(cells, alpha)?;
    smoothed_counterfactual(cells, alpha, kappa)
}

fn smoothed_counterfactual(cells: [&CellBoundInputs; 4], alpha: f64, kappa: f64) -> Result<LevelBounds> {
    let s00 = smooth_cell_bounds(cells[0], alpha, kappa)?;
    let s01 = smooth_cell_bounds(cells[1], alpha, kappa)?;
    let s10 = smooth_cell_bounds(cells[2], alpha, kappa)?;
    // Smoothed cell lower bounds can dip below 0, which would make the value
    // at an empty inverse (0) tighter than a nearby level; clamp to [0, 1].
    let mut out = counterfactual_bounds(&s00, &s01, &s10);
    for j in 0..2 {
        out.lower[j] = out.lower[j].clamp(0.0, 1.0);
        out.upper[j] = out.upper[j].clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Raw counterfactual bounds for cell `(1, 1)` from cells `00, 01, 10`.
pub fn raw_counterfactual(cells: [&CellBoundInputs; 3], alpha: f64) -> Result<LevelBounds> {
    let b00 = cell_bounds(cells[0], alpha)?;
    let b01 = cell_bounds(cells[1], alpha)?;
    let b10 = cell_bounds(cells[2], alpha)?;
    Ok(counterfactual_bounds(&b00, &b01, &b10))
}

/// Settings of the bootstrap bands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub replicates: usize,
    /// One-sided confidence level.
    pub level: f64,
    /// Multiplier of the bootstrap quantile.
    pub k: f64,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            replicates: 200,
            level: 0.95,
            k: 1.0,
            seed: 0,
        }
    }
}

/// One-sided bootstrap bands around the smoothed counterfactual bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapBands {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
    /// Quantiles of `L~* - L~` and `U~ - U~*` per level.
    pub lower_quantile: [f64; 3],
    pub upper_quantile: [f64; 3],
    pub used: usize,
    pub dropped: usize,
}

/// Bootstrap bands for the smoothed counterfactual bounds. Each replicate
/// resamples every cell independently; replicates that are degenerate or
/// infeasible at `alpha` are dropped, and more than 10% drops is an error.
pub fn bootstrap_bound_ci(
    samples: [&CellSample; 4],
    alpha: f64,
    kappa: f64,
    opts: &BootstrapOptions,
) -> Result<BootstrapBands> {
    if opts.replicates < 200 {
        return Err(Error::Input(format!(
            "bootstrap needs at least 200 replicates, got {}",
            opts.replicates
        )));
    }
    if !(opts.level > 0.5 && opts.level < 1.0) {
        return Err(Error::Domain(format!("band level must lie in (0.5, 1), got {}", opts.level)));
    }
    if !(opts.k >= 0.0 && opts.k.is_finite()) {
        return Err(Error::Domain(format!("band multiplier must be nonnegative, got {}", opts.k)));
    }
    let inputs: Vec<CellBoundInputs> = samples.iter().map(|s| CellBoundInputs::from_sample(s)).collect::<Result<_>>()?;
    let cells = [&inputs[0], &inputs[1], &inputs[2], &inputs[3]];
    let point = smooth_envelope_bounds(cells, alpha, kappa)?;
    let reps: Vec<Option<LevelBounds>> = (0..opts.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(opts.seed, b as u64);
            let boot: Vec<CellBoundInputs> = samples
                .iter()
                .map(|s| CellBoundInputs::from_sample(&s.resample(&mut rng)))
                .collect::<Result<_>>()
                .ok()?;
            smooth_envelope_bounds([&boot[0], &boot[1], &boot[2], &boot[3]], alpha, kappa).ok()
        })
        .collect();
    let used: Vec<LevelBounds> = reps.into_iter().flatten().collect();
    let dropped = opts.replicates - used.len();
    if dropped * 10 > opts.replicates {
        return Err(Error::Input(format!(
            "{dropped} of {} bootstrap replicates were degenerate or infeasible",
            opts.replicates
        )));
    }
    let mut bands = BootstrapBands {
        lower: [1.0; 3],
        upper: [1.0; 3],
        lower_quantile: [0.0; 3],
        upper_quantile: [0.0; 3],
        used: used.len(),
        dropped,
    };
    for j in 0..2 {
        let dl: Vec<f64> = used.iter().map(|b| b.lower[j] - point.lower[j]).collect();
        let du: Vec<f64> = used.iter().map(|b| point.upper[j] - b.upper[j]).collect();
        let ql = sample_quantile(&dl, opts.level)?;
        let qu = sample_quantile(&du, opts.level)?;
        bands.lower_quantile[j] = ql;
        bands.upper_quantile[j] = qu;
        bands.lower[j] = point.lower[j] - opts.k * ql;
        bands.upper[j] = point.upper[j] + opts.k * qu;
    }
    Ok(bands)
}

/// Full bounds report for cell `(1, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsResult {
    pub alpha: f64,
    pub smooth_kappa: f64,
    pub feasibility: Feasibility,
    /// Raw per-cell bounds in the order `00, 01, 10, 11`.
    pub cells: Vec<LevelBounds>,
    pub raw: LevelBounds,
    pub smoothed: LevelBounds,
    pub bands: Option<BootstrapBands>,
    pub bootstrap: Option<BootstrapOptions>,
}

/// Raw, smoothed and (optionally) bootstrap bounds from four cell samples.
pub fn compute_bounds(
    samples: [&CellSample; 4],
    alpha: f64,
    kappa: f64,
    bootstrap: Option<&BootstrapOptions>,
) -> Result<BoundsResult> {
    check_alpha(alpha)?;
    let inputs: Vec<CellBoundInputs> = samples.iter().map(|s| CellBoundInputs::from_sample(s)).collect::<Result<_>>()?;
    let cells4 = [&inputs[0], &inputs[1], &inputs[2], &inputs[3]];
    let feasibility = require_feasible(cells4, alpha)?;
    let cells = inputs.iter().map(|c| cell_bounds(c, alpha)).collect::<Result<Vec<_>>>()?;
    let raw = counterfactual_bounds(&cells[0], &cells[1], &cells[2]);
    let smoothed = smoothed_counterfactual(cells4, alpha, kappa)?;
    let bands = bootstrap
        .map(|o| bootstrap_bound_ci(samples, alpha, kappa, o))
        .transpose()?;
    Ok(BoundsResult {
        alpha,
        smooth_kappa: kappa,
        feasibility,
        cells,
        raw,
        smoothed,
        bands,
        bootstrap: bootstrap.copied(),
    })
}
