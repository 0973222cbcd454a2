//! Population-level data generating processes for the bounds: a latent
//! changes-in-changes structure for true consumption and one-sided
//! misreporting driven by a discrete instrument.

#![allow(dead_code)]

use std::collections::BTreeMap;

use ordcic::bounds::{CellBoundInputs, CellSample};
use ordcic::stats_core::{std_normal_cdf, DiscreteCdf};
use rand::Rng;

/// True consumption CDF at levels 0 and 1, instrument law, and
/// `r[z][j] = Pr(R <= j | Z = z)` for a reporting level `R` independent of
/// consumption given the instrument. Observed `C = min(Y, R)`.
#[derive(Debug, Clone)]
pub struct PopulationCell {
    pub f_y: [f64; 2],
    pub z_probs: Vec<f64>,
    pub r: Vec<[f64; 2]>,
}

impl PopulationCell {
    pub fn conditional(&self, z: usize) -> [f64; 2] {
        [0, 1].map(|j| 1.0 - (1.0 - self.f_y[j]) * (1.0 - self.r[z][j]))
    }

    pub fn unconditional(&self) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (z, p) in self.z_probs.iter().enumerate() {
            let c = self.conditional(z);
            out[0] += p * c[0];
            out[1] += p * c[1];
        }
        out
    }

    /// `Pr(C <= j | Y >= j + 1)`, the quantity capped by alpha.
    pub fn misreport_rate(&self, j: usize) -> f64 {
        self.z_probs.iter().zip(&self.r).map(|(p, r)| p * r[j]).sum()
    }

    pub fn inputs(&self) -> CellBoundInputs {
        let cdf = |v: [f64; 2]| DiscreteCdf::from_cum_probs(vec![v[0], v[1], 1.0]).unwrap();
        let conditional: BTreeMap<i64, DiscreteCdf> =
            (0..self.z_probs.len()).map(|z| (z as i64, cdf(self.conditional(z)))).collect();
        CellBoundInputs::new(cdf(self.unconditional()), conditional, None).unwrap()
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> CellSample {
        let mut outcomes = Vec::with_capacity(n);
        let mut instrument = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut z = self.z_probs.len() - 1;
            for (k, p) in self.z_probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    z = k;
                    break;
                }
            }
            let level = |cdf: [f64; 2], u: f64| if u < cdf[0] { 0u8 } else if u < cdf[1] { 1 } else { 2 };
            let y = level(self.f_y, rng.gen());
            let r = level(self.r[z], rng.gen());
            outcomes.push(y.min(r));
            instrument.push(z as i64);
        }
        CellSample::new(outcomes, instrument).unwrap()
    }
}

/// Latent index `Y* = a_t + b_t (mu_g + sigma_g eps)` with standard normal
/// `eps`, thresholded at 0 and 1. The untreated CDF of every cell, including
/// the counterfactual `(1, 1)`, follows from the same formula.
#[derive(Debug, Clone, Copy)]
pub struct LatentCic {
    pub mu: [f64; 2],
    pub sigma: [f64; 2],
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl LatentCic {
    pub fn cdf(&self, g: usize, t: usize) -> [f64; 2] {
        let m = self.a[t] + self.b[t] * self.mu[g];
        let s = self.b[t] * self.sigma[g];
        [std_normal_cdf(-m / s), std_normal_cdf((1.0 - m) / s)]
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            mu: [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)],
            sigma: [rng.gen_range(0.7..1.5), rng.gen_range(0.7..1.5)],
            a: [rng.gen_range(-0.3..0.8), rng.gen_range(-0.3..0.8)],
            b: [rng.gen_range(0.6..1.4), rng.gen_range(0.6..1.4)],
        }
    }
}

/// Random instrument law and reporting probabilities with the cumulative
/// misreporting probability at most `cap`.
pub fn random_reporting<R: Rng + ?Sized>(rng: &mut R, cap: f64) -> (Vec<f64>, Vec<[f64; 2]>) {
    let k = rng.gen_range(2..=4);
    let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = w.iter().sum();
    let probs = w.iter().map(|v| v / total).collect();
    let r = (0..k)
        .map(|_| {
            let r0 = rng.gen_range(0.0..cap);
            let r1 = rng.gen_range(r0..=cap);
            [r0, r1]
        })
        .collect();
    (probs, r)
}

/// Four cells `00, 01, 10, 11` with random reporting; the observed cell
/// `(1, 1)` carries a treatment shift of its latent mean.
pub fn random_population<R: Rng + ?Sized>(rng: &mut R) -> (LatentCic, [PopulationCell; 4]) {
    let dgp = LatentCic::random(rng);
    let cap = rng.gen_range(0.0..0.5);
    let shift = rng.gen_range(-0.5..0.5);
    let cells = [(0, 0), (0, 1), (1, 0), (1, 1)].map(|(g, t)| {
        let (z_probs, r) = random_reporting(rng, cap);
        let mut f_y = dgp.cdf(g, t);
        if (g, t) == (1, 1) {
            let treated = LatentCic {
                a: [dgp.a[0], dgp.a[1] + shift],
                ..dgp
            };
            f_y = treated.cdf(1, 1);
        }
        PopulationCell { f_y, z_probs, r }
    });
    (dgp, cells)
}

/// Cells built like the sharpness argument: misreporting only to level 0,
/// one instrument value that never misreports, and a common cumulative
/// misreporting rate `rate`. At `alpha = rate` each cell's bounds collapse
/// onto its true CDF.
pub fn sharp_population<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> (LatentCic, [PopulationCell; 4]) {
    let dgp = LatentCic::random(rng);
    let cells = [(0, 0), (0, 1), (1, 0), (1, 1)].map(|(g, t)| {
        // Redraw until every reporting probability is a probability.
        loop {
            let k = rng.gen_range(2..=4);
            let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.2..1.0)).collect();
            let total: f64 = w.iter().sum();
            let z_probs: Vec<f64> = w.iter().map(|v| v / total).collect();
            let mut shape: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
            shape[0] = 0.0;
            let mean: f64 = z_probs.iter().zip(&shape).map(|(p, s)| p * s).sum();
            let r: Vec<[f64; 2]> = shape.iter().map(|s| [rate * s / mean; 2]).collect();
            if r.iter().all(|v| v[0] < 0.9) {
                break PopulationCell {
                    f_y: dgp.cdf(g, t),
                    z_probs,
                    r,
                };
            }
        }
    });
    (dgp, cells)
}
