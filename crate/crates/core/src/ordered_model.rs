//! Bivariate threshold-crossing model for one group-time cell.
//!
//! Consumption is `Y = #{j in 1..=2 : x'eta - lambda * eps > kappa_j}` and the
//! reporting ceiling `R` is defined analogously with `(pi, zeta, nu, iota)`.
//! The observed outcome is `C = min(Y, R)`, so
//! `Pr(C >= j | x, z) = C(Phi(a_j), Phi(b_j))` with
//! `a_j = (x'eta - kappa_j) / lambda` and `b_j = (z'pi - iota_j) / zeta`, where
//! `C` is the copula of `(Phi(eps), Phi(nu))`.
//!
//! Covariate rows exclude the intercept; the first entry of `eta_bar` and
//! `pi_bar` is the intercept. An empty `pi_bar` encodes a reporting equation
//! that never binds (`R = 2` always).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::copula::{sample_pair, CopulaSpec};
use crate::rng::open_unit;
use crate::stats_core::{std_normal_cdf, std_normal_pdf, std_normal_quantile};
use crate::{Error, Result};

/// Number of outcome levels (0, 1, 2).
pub const N_LEVELS: usize = 3;
/// Floor applied to cell probabilities inside the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Interior cutoffs of the consumption and reporting equations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub kappa: [f64; 2],
    pub iota: [f64; 2],
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            kappa: [0.0, 1.0],
            iota: [0.0, 1.0],
        }
    }
}

/// Parameters of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    /// Intercept followed by consumption slopes.
    pub eta_bar: Vec<f64>,
    pub lambda: f64,
    /// Intercept followed by reporting slopes; empty if reporting never binds.
    pub pi_bar: Vec<f64>,
    pub zeta: f64,
    pub copula: CopulaSpec,
}

impl CellParams {
    pub fn validate(&self) -> Result<()> {
        if self.eta_bar.is_empty() {
            return Err(Error::Input("eta_bar needs at least an intercept".into()));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Domain(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.reports() && !(self.zeta > 0.0 && self.zeta.is_finite()) {
            return Err(Error::Domain(format!("zeta must be positive, got {}", self.zeta)));
        }
        if self.eta_bar.iter().chain(&self.pi_bar).any(|v| !v.is_finite()) {
            return Err(Error::Domain("index coefficients must be finite".into()));
        }
        self.copula.validate()
    }

    /// Whether the reporting equation is present.
    pub fn reports(&self) -> bool {
        !self.pi_bar.is_empty()
    }

    /// Consumption index `x'eta` for a row without intercept.
    pub fn consumption_index(&self, x_row: &[f64]) -> f64 {
        index(&self.eta_bar, x_row)
    }

    /// Reporting index `z'pi`; `+inf` if reporting never binds.
    pub fn reporting_index(&self, z_row: &[f64]) -> f64 {
        if self.reports() {
            index(&self.pi_bar, z_row)
        } else {
            f64::INFINITY
        }
    }
}

#[inline]
pub(crate) fn index(coef: &[f64], row: &[f64]) -> f64 {
    coef[0] + coef[1..].iter().zip(row).map(|(c, x)| c * x).sum::<f64>()
}

/// One cell's sample: outcomes with consumption and reporting covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub outcomes: Vec<u8>,
    kx: usize,
    kz: usize,
    x: Vec<f64>,
    z: Vec<f64>,
    /// `(g, t)` tag of the cell, if known.
    pub cell: Option<(u8, u8)>,
}

impl ObservationSet {
    /// Builds a set from per-row covariate vectors.
    pub fn new(outcomes: Vec<u8>, x_rows: &[Vec<f64>], z_rows: &[Vec<f64>]) -> Result<Self> {
        let n = outcomes.len();
        if x_rows.len() != n || z_rows.len() != n {
            return Err(Error::Input(format!(
                "row counts differ: {} outcomes, {} x rows, {} z rows",
                n,
                x_rows.len(),
                z_rows.len()
            )));
        }
        let kx = x_rows.first().map_or(0, Vec::len);
        let kz = z_rows.first().map_or(0, Vec::len);
        let mut x = Vec::with_capacity(n * kx);
        let mut z = Vec::with_capacity(n * kz);
        for (i, (xr, zr)) in x_rows.iter().zip(z_rows).enumerate() {
            if xr.len() != kx || zr.len() != kz {
                return Err(Error::Input(format!("row {i} has inconsistent covariate width")));
            }
            x.extend_from_slice(xr);
            z.extend_from_slice(zr);
        }
        Self::from_flat(outcomes, kx, x, kz, z)
    }

    /// Builds a set from row-major covariate buffers.
    pub fn from_flat(outcomes: Vec<u8>, kx: usize, x: Vec<f64>, kz: usize, z: Vec<f64>) -> Result<Self> {
        let n = outcomes.len();
        if x.len() != n * kx || z.len() != n * kz {
            return Err(Error::Input("covariate buffer sizes do not match the row count".into()));
        }
        if let Some(i) = outcomes.iter().position(|&c| c as usize >= N_LEVELS) {
            return Err(Error::Input(format!(
                "row {i}: outcome {} outside levels 0..=2",
                outcomes[i]
            )));
        }
        if x.iter().chain(&z).any(|v| !v.is_finite()) {
            return Err(Error::Input("covariates must be finite".into()));
        }
        Ok(Self {
            outcomes,
            kx,
            x,
            kz,
            z,
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

    pub fn kx(&self) -> usize {
        self.kx
    }

    pub fn kz(&self) -> usize {
        self.kz
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.kx..(i + 1) * self.kx]
    }

    pub fn z_row(&self, i: usize) -> &[f64] {
        &self.z[i * self.kz..(i + 1) * self.kz]
    }

    pub fn x_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.len()).map(move |i| self.x_row(i))
    }

    pub fn z_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.len()).map(move |i| self.z_row(i))
    }

    /// Rows concatenated after those of `other`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.kx != other.kx || self.kz != other.kz {
            return Err(Error::Input("cannot concatenate sets with different covariate widths".into()));
        }
        let mut out = self.clone();
        out.outcomes.extend_from_slice(&other.outcomes);
        out.x.extend_from_slice(&other.x);
        out.z.extend_from_slice(&other.z);
        Ok(out)
    }

    /// Subset of rows by index, in the given order.
    pub fn select(&self, rows: &[usize]) -> Self {
        let mut out = Self {
            outcomes: Vec::with_capacity(rows.len()),
            kx: self.kx,
            kz: self.kz,
            x: Vec::with_capacity(rows.len() * self.kx),
            z: Vec::with_capacity(rows.len() * self.kz),
            cell: self.cell,
        };
        for &i in rows {
            out.outcomes.push(self.outcomes[i]);
            out.x.extend_from_slice(self.x_row(i));
            out.z.extend_from_slice(self.z_row(i));
        }
        out
    }

    /// Count of each outcome level.
    pub fn level_counts(&self) -> [usize; N_LEVELS] {
        let mut counts = [0; N_LEVELS];
        for &c in &self.outcomes {
            counts[c as usize] += 1;
        }
        counts
    }

    /// Same covariates with new outcomes.
    pub fn with_outcomes(&self, outcomes: Vec<u8>) -> Result<Self> {
        if outcomes.len() != self.len() {
            return Err(Error::Input("outcome count does not match the row count".into()));
        }
        Ok(Self {
            outcomes,
            ..self.clone()
        })
    }
}

/// `Pr(C >= j | x, z)` for `j` in `0..=3`, with `S(0) = 1` and `S(3) = 0`.
pub fn cell_upper_tail(params: &CellParams, x_row: &[f64], z_row: &[f64], j: usize, th: &Thresholds) -> f64 {
    match j {
        0 => 1.0,
        1 | 2 => {
            let a = (params.consumption_index(x_row) - th.kappa[j - 1]) / params.lambda;
            let u = std_normal_cdf(a);
            if !params.reports() {
                return u;
            }
            let b = (params.reporting_index(z_row) - th.iota[j - 1]) / params.zeta;
            params.copula.cdf(u, std_normal_cdf(b))
        }
        _ => 0.0,
    }
}

/// Outcome probabilities `(p0, p1, p2)` at one covariate row.
pub fn outcome_pmf(params: &CellParams, x_row: &[f64], z_row: &[f64], th: &Thresholds) -> Result<[f64; 3]> {
    let s1 = cell_upper_tail(params, x_row, z_row, 1, th);
    let s2 = cell_upper_tail(params, x_row, z_row, 2, th);
    let p = [1.0 - s1, s1 - s2, s2];
    if let Some(bad) = p.iter().find(|v| **v < -1e-10) {
        return Err(Error::Internal(format!(
            "negative cell probability {bad}: copula is not 2-increasing at this point"
        )));
    }
    Ok(p.map(|v| v.max(0.0)))
}

/// Negative log-likelihood with the number of floored probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NllValue {
    pub value: f64,
    pub floor_hits: usize,
}

/// `-sum_i log p_{C_i}(x_i, z_i)` with probabilities floored at
/// [`PROB_FLOOR`].
pub fn neg_log_likelihood(params: &CellParams, data: &ObservationSet, th: &Thresholds) -> Result<f64> {
    Ok(neg_log_likelihood_detailed(params, data, th)?.value)
}

/// [`neg_log_likelihood`] plus the floor-hit counter.
pub fn neg_log_likelihood_detailed(params: &CellParams, data: &ObservationSet, th: &Thresholds) -> Result<NllValue> {
    check_dims(params, data)?;
    Ok(nll_core(params, data, th, None))
}

/// Negative log-likelihood and its gradient in the natural parameters, laid
/// out as `[eta_bar, lambda, pi_bar, zeta, theta]` (reporting entries omitted
/// when reporting never binds, `theta` omitted for independence).
pub fn nll_gradient(params: &CellParams, data: &ObservationSet, th: &Thresholds) -> Result<(NllValue, Vec<f64>)> {
    check_dims(params, data)?;
    let mut grad = vec![0.0; natural_dim(params)];
    let value = nll_core(params, data, th, Some(&mut grad));
    Ok((value, grad))
}

/// Length of the natural parameter vector used by [`nll_gradient`].
pub fn natural_dim(params: &CellParams) -> usize {
    let mut d = params.eta_bar.len() + 1;
    if params.reports() {
        d += params.pi_bar.len() + 1;
        if params.copula.has_theta() {
            d += 1;
        }
    }
    d
}

fn check_dims(params: &CellParams, data: &ObservationSet) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Input("empty observation set".into()));
    }
    if params.eta_bar.len() != data.kx() + 1 {
        return Err(Error::Input(format!(
            "eta_bar has {} entries but the data have {} consumption covariates",
            params.eta_bar.len(),
            data.kx()
        )));
    }
    if params.reports() && params.pi_bar.len() != data.kz() + 1 {
        return Err(Error::Input(format!(
            "pi_bar has {} entries but the data have {} reporting covariates",
            params.pi_bar.len(),
            data.kz()
        )));
    }
    Ok(())
}

fn nll_core(params: &CellParams, data: &ObservationSet, th: &Thresholds, mut grad: Option<&mut [f64]>) -> NllValue {
    let kx1 = params.eta_bar.len();
    let kz1 = params.pi_bar.len();
    let reports = params.reports();
    let has_theta = reports && params.copula.has_theta();
    let i_lambda = kx1;
    let i_pi = kx1 + 1;
    let i_zeta = i_pi + kz1;
    let i_theta = i_zeta + 1;
    let (lambda, zeta) = (params.lambda, params.zeta);
    let mut total = 0.0;
    let mut floor_hits = 0;
    // dS_j / d(x'eta), dS_j / d lambda, and analogues for the reporting side.
    let mut ds_idx = [0.0; 2];
    let mut ds_lam = [0.0; 2];
    let mut ds_pidx = [0.0; 2];
    let mut ds_zeta = [0.0; 2];
    let mut ds_theta = [0.0; 2];
    let mut s = [0.0; 2];
    for i in 0..data.len() {
        let x_row = data.x_row(i);
        let xb = index(&params.eta_bar, x_row);
        let zb = if reports { index(&params.pi_bar, data.z_row(i)) } else { 0.0 };
        for j in 0..2 {
            let a = (xb - th.kappa[j]) / lambda;
            let u = std_normal_cdf(a);
            let (sj, cu, cv, ct, b) = if reports {
                let b = (zb - th.iota[j]) / zeta;
                let e = params.copula.eval(u, std_normal_cdf(b));
                (e.c, e.du, e.dv, e.dtheta, b)
            } else {
                (u, 1.0, 0.0, 0.0, 0.0)
            };
            s[j] = sj;
            if grad.is_some() {
                let fa = cu * std_normal_pdf(a);
                ds_idx[j] = fa / lambda;
                ds_lam[j] = -fa * a / lambda;
                if reports {
                    let fb = cv * std_normal_pdf(b);
                    ds_pidx[j] = fb / zeta;
                    ds_zeta[j] = -fb * b / zeta;
                    ds_theta[j] = ct;
                }
            }
        }
        let c = data.outcomes[i] as usize;
        // p_c = w1 * S1 + w2 * S2 + const.
        let (p, w1, w2) = match c {
            0 => (1.0 - s[0], -1.0, 0.0),
            1 => (s[0] - s[1], 1.0, -1.0),
            _ => (s[1], 0.0, 1.0),
        };
        if p > PROB_FLOOR {
            total -= p.ln();
            if let Some(g) = grad.as_deref_mut() {
                let scale = -1.0 / p;
                let d_idx = scale * (w1 * ds_idx[0] + w2 * ds_idx[1]);
                g[0] += d_idx;
                for (gk, xk) in g[1..kx1].iter_mut().zip(x_row) {
                    *gk += d_idx * xk;
                }
                g[i_lambda] += scale * (w1 * ds_lam[0] + w2 * ds_lam[1]);
                if reports {
                    let d_pidx = scale * (w1 * ds_pidx[0] + w2 * ds_pidx[1]);
                    g[i_pi] += d_pidx;
                    for (gk, zk) in g[i_pi + 1..i_zeta].iter_mut().zip(data.z_row(i)) {
                        *gk += d_pidx * zk;
                    }
                    g[i_zeta] += scale * (w1 * ds_zeta[0] + w2 * ds_zeta[1]);
                    if has_theta {
                        g[i_theta] += scale * (w1 * ds_theta[0] + w2 * ds_theta[1]);
                    }
                }
            }
        } else {
            total -= PROB_FLOOR.ln();
            floor_hits += 1;
        }
    }
    NllValue {
        value: total,
        floor_hits,
    }
}

/// Law of the covariates: base variables drawn per row, and the columns of
/// `x` and `z` as indices into them. Shared columns model common regressors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateLaw {
    pub base: Vec<BaseVariable>,
    pub x_cols: Vec<usize>,
    pub z_cols: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BaseVariable {
    StdNormal,
    Uniform { low: f64, high: f64 },
    /// Discrete uniform on `0..levels`, for instruments with finite support.
    Categorical { levels: usize },
}

impl BaseVariable {
    /// Uniform on `(-sqrt 3, sqrt 3)`, which has unit variance.
    pub fn unit_uniform() -> Self {
        let h = 3f64.sqrt();
        Self::Uniform { low: -h, high: h }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::StdNormal => {
                let u = open_unit(rng);
                std_normal_quantile(u).unwrap_or(0.0)
            }
            Self::Uniform { low, high } => low + (high - low) * open_unit(rng),
            Self::Categorical { levels } => rng.gen_range(0..levels) as f64,
        }
    }
}

impl CovariateLaw {
    /// Covariate rows for `n` draws, row-major.
    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let mut x = Vec::with_capacity(n * self.x_cols.len());
        let mut z = Vec::with_capacity(n * self.z_cols.len());
        let mut base = vec![0.0; self.base.len()];
        for _ in 0..n {
            for (b, var) in base.iter_mut().zip(&self.base) {
                *b = var.draw(rng);
            }
            x.extend(self.x_cols.iter().map(|&k| base[k]));
            z.extend(self.z_cols.iter().map(|&k| base[k]));
        }
        (x, z)
    }
}

/// Latent outcomes of one simulated row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentDraw {
    pub y: u8,
    pub r: u8,
    pub c: u8,
}

/// Draws `(Y, R, C)` at one covariate row.
pub fn draw_outcome<R: Rng + ?Sized>(
    params: &CellParams,
    x_row: &[f64],
    z_row: &[f64],
    th: &Thresholds,
    rng: &mut R,
) -> LatentDraw {
    let (u1, u2) = sample_pair(&params.copula, rng);
    let eps = std_normal_quantile(u1).unwrap_or(0.0);
    let y_star = params.consumption_index(x_row) - params.lambda * eps;
    let y = th.kappa.iter().filter(|k| y_star > **k).count() as u8;
    let r = if params.reports() {
        let nu = std_normal_quantile(u2).unwrap_or(0.0);
        let r_star = params.reporting_index(z_row) - params.zeta * nu;
        th.iota.iter().filter(|k| r_star > **k).count() as u8
    } else {
        2
    };
    LatentDraw { y, r, c: y.min(r) }
}

/// Simulates `n` rows of one cell: covariates from `law`, unobservables from
/// the copula with normal margins, and `C = min(Y, R)`.
pub fn simulate_cell<R: Rng + ?Sized>(
    params: &CellParams,
    law: &CovariateLaw,
    n: usize,
    th: &Thresholds,
    rng: &mut R,
) -> Result<ObservationSet> {
    params.validate()?;
    if n == 0 {
        return Err(Error::Input("simulate_cell needs n >= 1".into()));
    }
    if params.eta_bar.len() != law.x_cols.len() + 1 || (params.reports() && params.pi_bar.len() != law.z_cols.len() + 1) {
        return Err(Error::Input("parameter dimensions do not match the covariate law".into()));
    }
    let (x, z) = law.draw(n, rng);
    let (kx, kz) = (law.x_cols.len(), law.z_cols.len());
    let outcomes = (0..n)
        .map(|i| draw_outcome(params, &x[i * kx..(i + 1) * kx], &z[i * kz..(i + 1) * kz], th, rng).c)
        .collect();
    ObservationSet::from_flat(outcomes, kx, x, kz, z)
}

/// Simulates new outcomes at the covariate rows of `data`.
pub fn resimulate_outcomes<R: Rng + ?Sized>(
    params: &CellParams,
    data: &ObservationSet,
    th: &Thresholds,
    rng: &mut R,
) -> Result<ObservationSet> {
    check_dims(params, data)?;
    let outcomes = (0..data.len())
        .map(|i| draw_outcome(params, data.x_row(i), data.z_row(i), th, rng).c)
        .collect();
    data.with_outcomes(outcomes)
}
