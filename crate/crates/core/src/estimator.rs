//! Per-cell maximum likelihood, counterfactual parameter maps, distributional
//! treatment effects with delta-method standard errors, the pre-trend
//! likelihood-ratio test, and the dependence/margin decomposition of the tail
//! difference.
//!
//! Cells are indexed `(g, t)` and passed in the order `00, 01, 10, 11`.
//! Optimization runs on a raw vector `[eta_bar, log lambda, pi_bar, log zeta,
//! s]`, where `s` maps to the copula parameter: identity for Frank,
//! `theta = exp(s)` on the positive Clayton branch and
//! `theta = -1 / (1 + exp(-s))` on the negative one.

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::copula::{CopulaFamily, CopulaSpec};
use crate::optim::{bfgs, nelder_mead, BfgsOptions, Minimum, NelderMeadOptions};
use crate::ordered_model::{
    index, neg_log_likelihood_detailed, nll_gradient, CellParams, ObservationSet, Thresholds, N_LEVELS,
};
use crate::rng::substream;
use crate::stats_core::{std_normal_cdf, std_normal_quantile};
use crate::{Error, Result};

/// Minimum number of observations per fitted cell.
pub const MIN_CELL_SIZE: usize = 50;

/// Map from the raw optimization coordinate to the copula parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaMap {
    /// No dependence parameter.
    Fixed,
    /// Frank: `theta = s`.
    Identity,
    /// Clayton on `(-1, 0)`: `theta = -1 / (1 + exp(-s))`.
    ClaytonNegative,
    /// Clayton on `(0, inf)`: `theta = exp(s)`.
    ClaytonPositive,
}

impl ThetaMap {
    fn forward(self, s: f64) -> f64 {
        match self {
            Self::Fixed => 0.0,
            Self::Identity => s,
            Self::ClaytonNegative => -1.0 / (1.0 + (-s).exp()),
            Self::ClaytonPositive => s.exp(),
        }
    }

    fn inverse(self, theta: f64) -> f64 {
        match self {
            Self::Fixed => 0.0,
            Self::Identity => theta,
            Self::ClaytonNegative => {
                let t = (-theta).clamp(1e-12, 1.0 - 1e-12);
                (t / (1.0 - t)).ln()
            }
            Self::ClaytonPositive => theta.max(1e-300).ln(),
        }
    }

    fn derivative(self, s: f64) -> f64 {
        match self {
            Self::Fixed => 0.0,
            Self::Identity => 1.0,
            Self::ClaytonNegative => {
                let sig = 1.0 / (1.0 + (-s).exp());
                -sig * (1.0 - sig)
            }
            Self::ClaytonPositive => s.exp(),
        }
    }

    fn for_theta(family: CopulaFamily, theta: f64) -> Self {
        match family {
            CopulaFamily::Independence => Self::Fixed,
            CopulaFamily::Frank => Self::Identity,
            CopulaFamily::Clayton if theta < 0.0 => Self::ClaytonNegative,
            CopulaFamily::Clayton => Self::ClaytonPositive,
        }
    }
}

/// Layout of the raw parameter vector of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    /// Length of `eta_bar` (intercept plus consumption slopes).
    pub kx1: usize,
    /// Length of `pi_bar`; zero when reporting never binds.
    pub kz1: usize,
    pub family: CopulaFamily,
    pub theta_map: ThetaMap,
}

impl ParamLayout {
    pub fn new(kx: usize, kz: usize, family: CopulaFamily, theta_map: ThetaMap, reports: bool) -> Self {
        if reports {
            Self {
                kx1: kx + 1,
                kz1: kz + 1,
                family,
                theta_map: if family == CopulaFamily::Independence {
                    ThetaMap::Fixed
                } else {
                    theta_map
                },
            }
        } else {
            Self {
                kx1: kx + 1,
                kz1: 0,
                family: CopulaFamily::Independence,
                theta_map: ThetaMap::Fixed,
            }
        }
    }

    pub fn reports(&self) -> bool {
        self.kz1 > 0
    }

    pub fn has_theta(&self) -> bool {
        self.theta_map != ThetaMap::Fixed
    }

    pub fn dim(&self) -> usize {
        let mut d = self.kx1 + 1;
        if self.reports() {
            d += self.kz1 + 1 + usize::from(self.has_theta());
        }
        d
    }

    pub fn lambda_index(&self) -> usize {
        self.kx1
    }

    pub fn pi_offset(&self) -> usize {
        self.kx1 + 1
    }

    pub fn zeta_index(&self) -> usize {
        self.kx1 + 1 + self.kz1
    }

    pub fn theta_index(&self) -> Option<usize> {
        (self.reports() && self.has_theta()).then(|| self.zeta_index() + 1)
    }

    /// Natural parameters from a raw vector.
    pub fn to_params(&self, raw: &[f64]) -> CellParams {
        let eta_bar = raw[..self.kx1].to_vec();
        let lambda = raw[self.lambda_index()].exp();
        let (pi_bar, zeta, copula) = if self.reports() {
            let pi = raw[self.pi_offset()..self.zeta_index()].to_vec();
            let zeta = raw[self.zeta_index()].exp();
            let copula = match self.theta_index() {
                Some(i) => CopulaSpec {
                    family: self.family,
                    theta: self.theta_map.forward(raw[i]),
                },
                None => CopulaSpec::independence(),
            };
            (pi, zeta, copula)
        } else {
            (Vec::new(), 1.0, CopulaSpec::independence())
        };
        CellParams {
            eta_bar,
            lambda,
            pi_bar,
            zeta,
            copula,
        }
    }

    /// Raw vector from natural parameters.
    pub fn to_raw(&self, p: &CellParams) -> Vec<f64> {
        let mut raw = p.eta_bar.clone();
        raw.push(p.lambda.ln());
        if self.reports() {
            raw.extend_from_slice(&p.pi_bar);
            raw.push(p.zeta.ln());
            if self.has_theta() {
                raw.push(self.theta_map.inverse(p.copula.theta));
            }
        }
        raw
    }

    /// Diagonal of `d natural / d raw`.
    pub fn jacobian_diag(&self, raw: &[f64]) -> Vec<f64> {
        let mut jac = vec![1.0; self.dim()];
        jac[self.lambda_index()] = raw[self.lambda_index()].exp();
        if self.reports() {
            jac[self.zeta_index()] = raw[self.zeta_index()].exp();
            if let Some(i) = self.theta_index() {
                jac[i] = self.theta_map.derivative(raw[i]);
            }
        }
        jac
    }

    /// Names of the natural parameters in raw order.
    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.kx1).map(|k| format!("eta{k}")).collect();
        names.push("lambda".into());
        if self.reports() {
            names.extend((0..self.kz1).map(|k| format!("pi{k}")));
            names.push("zeta".into());
            if self.has_theta() {
                names.push("theta".into());
            }
        }
        names
    }
}

/// Negative log-likelihood and its gradient in raw coordinates. Returns an
/// infinite value where the raw point maps outside the parameter space.
fn raw_objective(layout: &ParamLayout, data: &ObservationSet, th: &Thresholds, raw: &[f64]) -> (f64, Vec<f64>) {
    let bad = || (f64::INFINITY, vec![f64::NAN; raw.len()]);
    if raw.iter().any(|v| !v.is_finite()) {
        return bad();
    }
    let params = layout.to_params(raw);
    if params.validate().is_err() {
        return bad();
    }
    match nll_gradient(&params, data, th) {
        Ok((value, mut grad)) => {
            for (g, j) in grad.iter_mut().zip(layout.jacobian_diag(raw)) {
                *g *= j;
            }
            (value.value, grad)
        }
        Err(_) => bad(),
    }
}

/// Options for [`fit_cell`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Warm start; replaces the ordered-probit starting values.
    pub initial: Option<CellParams>,
    /// Random perturbations of the starting point tried after the first fit.
    pub n_random_starts: usize,
    /// Standard deviation of the random perturbations in raw coordinates.
    pub perturbation_sd: f64,
    pub seed: u64,
    /// Fit the consumption equation alone (`R = 2` always).
    pub reporting_never_binds: bool,
    pub max_iter: usize,
    /// Gradient tolerance per observation.
    pub gtol: f64,
    pub thresholds: Thresholds,
    /// Skip the observed-information covariance.
    pub skip_covariance: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            initial: None,
            n_random_starts: 4,
            perturbation_sd: 0.5,
            seed: 0,
            reporting_never_binds: false,
            max_iter: 500,
            gtol: 1e-7,
            thresholds: Thresholds::default(),
            skip_covariance: false,
        }
    }
}

/// Optimizer diagnostics of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    pub starts_tried: usize,
    /// Start that produced the reported optimum (0 is the deterministic start).
    pub best_start: usize,
    pub floor_hits: usize,
}

/// A fitted cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedCell {
    pub params: CellParams,
    pub layout: ParamLayout,
    /// Optimum in raw coordinates.
    pub raw: Vec<f64>,
    /// Inverse observed information on the raw coordinates; `None` when the
    /// Hessian is not positive definite.
    pub covariance: Option<Vec<Vec<f64>>>,
    pub nll: f64,
    pub n_obs: usize,
    pub diagnostics: FitDiagnostics,
}

impl FittedCell {
    /// Standard errors of the natural parameters in raw order.
    pub fn natural_standard_errors(&self) -> Option<Vec<f64>> {
        let cov = self.covariance.as_ref()?;
        let jac = self.layout.jacobian_diag(&self.raw);
        Some((0..jac.len()).map(|i| jac[i].abs() * cov[i][i].max(0.0).sqrt()).collect())
    }

    /// Covariance, or an input error naming the cell.
    pub fn require_covariance(&self) -> Result<&Vec<Vec<f64>>> {
        self.covariance
            .as_ref()
            .ok_or_else(|| Error::Input("covariance unavailable: observed information is singular".into()))
    }
}

fn check_fit_data(data: &ObservationSet) -> Result<()> {
    if data.len() < MIN_CELL_SIZE {
        return Err(Error::Input(format!(
            "cell has {} observations; at least {MIN_CELL_SIZE} are required",
            data.len()
        )));
    }
    let counts = data.level_counts();
    if let Some(j) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Input(format!("outcome level {j} is absent from the cell")));
    }
    Ok(())
}

/// Consumption-only start matching the marginal shares with zero slopes.
fn marginal_start(data: &ObservationSet, k: usize) -> Result<(Vec<f64>, f64)> {
    let counts = data.level_counts();
    let n = data.len() as f64;
    let s1 = (counts[1] + counts[2]) as f64 / n;
    let s2 = counts[2] as f64 / n;
    let q1 = std_normal_quantile(s1)?;
    let q2 = std_normal_quantile(s2)?;
    let lambda = 1.0 / (q1 - q2).max(1e-3);
    let mut eta = vec![0.0; k + 1];
    eta[0] = q1 * lambda;
    Ok((eta, lambda))
}

/// Single-equation ordered probit of `C` on the first `k` columns of `rows`.
fn probit_start(data: &ObservationSet, use_z: bool, opts: &FitOptions) -> Result<(Vec<f64>, f64)> {
    let probit_data = if use_z {
        let z: Vec<Vec<f64>> = data.z_rows().map(<[f64]>::to_vec).collect();
        ObservationSet::new(data.outcomes.clone(), &z, &z)?
    } else {
        data.clone()
    };
    let k = if use_z { data.kz() } else { data.kx() };
    let (eta, lambda) = marginal_start(&probit_data, k)?;
    let layout = ParamLayout::new(k, 0, CopulaFamily::Independence, ThetaMap::Fixed, false);
    let start = CellParams {
        eta_bar: eta,
        lambda,
        pi_bar: Vec::new(),
        zeta: 1.0,
        copula: CopulaSpec::independence(),
    };
    let m = local_fit(&layout, &probit_data, opts, &layout.to_raw(&start));
    let p = layout.to_params(&m.x);
    Ok((p.eta_bar, p.lambda))
}

fn converged_at(m: &Minimum, data: &ObservationSet, opts: &FitOptions) -> bool {
    m.f.is_finite() && m.grad_norm <= opts.gtol * data.len() as f64
}

/// BFGS from `x0`, falling back to a simplex polish and a second BFGS pass.
fn local_fit(layout: &ParamLayout, data: &ObservationSet, opts: &FitOptions, x0: &[f64]) -> Minimum {
    let th = opts.thresholds;
    let bopts = BfgsOptions {
        max_iter: opts.max_iter,
        gtol: opts.gtol * data.len() as f64,
        ftol: 1e-15,
    };
    let obj = |x: &[f64]| raw_objective(layout, data, &th, x);
    let mut m = bfgs(obj, x0, &bopts);
    if converged_at(&m, data, opts) || !m.f.is_finite() {
        return m;
    }
    let nm = nelder_mead(
        |x| raw_objective(layout, data, &th, x).0,
        &m.x,
        &NelderMeadOptions {
            max_evals: 150 * layout.dim(),
            ftol: 1e-12,
            initial_step: 0.05,
        },
    );
    if nm.f.is_finite() {
        let again = bfgs(obj, &nm.x, &bopts);
        let iterations = m.iterations + nm.iterations + again.iterations;
        if again.f <= m.f || converged_at(&again, data, opts) {
            m = again;
        }
        m.iterations = iterations;
    }
    m
}

/// Maximum likelihood fit of one cell with multi-start.
///
/// Starting values come from ordered-probit fits of `C` on the consumption
/// and reporting covariates (or from `opts.initial`), followed by
/// `opts.n_random_starts` seeded perturbations. For Clayton both sign
/// branches are tried from the deterministic start and the better one is
/// kept. Non-convergence of every start returns an error carrying the best
/// point found.
pub fn fit_cell(data: &ObservationSet, family: CopulaFamily, opts: &FitOptions) -> Result<FittedCell> {
    check_fit_data(data)?;
    let reports = !opts.reporting_never_binds;
    let base = match &opts.initial {
        Some(p) => {
            if p.eta_bar.len() != data.kx() + 1 || (reports && p.pi_bar.len() != data.kz() + 1) {
                return Err(Error::Input("initial parameters do not match the data layout".into()));
            }
            p.clone()
        }
        None => {
            let (eta_bar, lambda) = probit_start(data, false, opts)?;
            let (pi_bar, zeta) = if reports {
                probit_start(data, true, opts)?
            } else {
                (Vec::new(), 1.0)
            };
            CellParams {
                eta_bar,
                lambda,
                pi_bar,
                zeta,
                copula: CopulaSpec::independence(),
            }
        }
    };
    let warm = opts.initial.is_some() && base.copula.family == family;
    let branches: Vec<(ThetaMap, f64)> = match family {
        _ if !reports => vec![(ThetaMap::Fixed, 0.0)],
        CopulaFamily::Independence => vec![(ThetaMap::Fixed, 0.0)],
        CopulaFamily::Frank => vec![(ThetaMap::Identity, if warm { base.copula.theta } else { 0.0 })],
        CopulaFamily::Clayton if warm => vec![(ThetaMap::for_theta(family, base.copula.theta), base.copula.theta)],
        CopulaFamily::Clayton => vec![(ThetaMap::ClaytonNegative, -0.1), (ThetaMap::ClaytonPositive, 0.1)],
    };
    let mut best: Option<(Minimum, ParamLayout, usize)> = None;
    let mut starts = 0;
    for (map, theta0) in branches {
        let layout = ParamLayout::new(data.kx(), data.kz(), family, map, reports);
        let mut start = base.clone();
        start.copula = if layout.has_theta() {
            CopulaSpec { family, theta: theta0 }
        } else {
            CopulaSpec::independence()
        };
        if !reports {
            start.pi_bar.clear();
        }
        let m = local_fit(&layout, data, opts, &layout.to_raw(&start));
        starts += 1;
        if best.as_ref().map_or(true, |(b, _, _)| better(&m, b, data, opts)) {
            best = Some((m, layout, starts - 1));
        }
    }
    let (_, layout, _) = best.as_ref().expect("at least one branch");
    let layout = *layout;
    let raw0 = {
        let mut start = base.clone();
        if !reports {
            start.pi_bar.clear();
        }
        start.copula = match layout.theta_map {
            ThetaMap::Fixed => CopulaSpec::independence(),
            ThetaMap::Identity => CopulaSpec {
                family,
                theta: if warm { base.copula.theta } else { 0.0 },
            },
            ThetaMap::ClaytonNegative => CopulaSpec {
                family,
                theta: if warm { base.copula.theta } else { -0.1 },
            },
            ThetaMap::ClaytonPositive => CopulaSpec {
                family,
                theta: if warm { base.copula.theta } else { 0.1 },
            },
        };
        layout.to_raw(&start)
    };
    let normal = Normal::new(0.0, opts.perturbation_sd).map_err(|e| Error::Domain(e.to_string()))?;
    for k in 0..opts.n_random_starts {
        let mut rng = substream(opts.seed, k as u64);
        let x0: Vec<f64> = raw0.iter().map(|v| v + normal.sample(&mut rng)).collect();
        let m = local_fit(&layout, data, opts, &x0);
        starts += 1;
        if best.as_ref().map_or(true, |(b, _, _)| better(&m, b, data, opts)) {
            best = Some((m, layout, starts - 1));
        }
    }
    let (m, layout, best_start) = best.expect("at least one start");
    if !m.f.is_finite() {
        return Err(Error::Convergence {
            message: "no start produced a finite likelihood".into(),
            best: None,
        });
    }
    let params = layout.to_params(&m.x);
    let th = opts.thresholds;
    let floor_hits = neg_log_likelihood_detailed(&params, data, &th)?.floor_hits;
    let converged = converged_at(&m, data, opts);
    let covariance = if opts.skip_covariance {
        None
    } else {
        raw_covariance(&layout, data, &th, &m.x)
    };
    let fitted = FittedCell {
        params,
        layout,
        raw: m.x,
        covariance,
        nll: m.f,
        n_obs: data.len(),
        diagnostics: FitDiagnostics {
            converged,
            iterations: m.iterations,
            grad_norm: m.grad_norm,
            starts_tried: starts,
            best_start,
            floor_hits,
        },
    };
    if converged {
        Ok(fitted)
    } else {
        Err(Error::Convergence {
            message: format!(
                "gradient norm {:.3e} above tolerance after {starts} starts",
                fitted.diagnostics.grad_norm
            ),
            best: Some(Box::new(fitted)),
        })
    }
}

/// Converged optima beat non-converged ones; ties broken by likelihood.
fn better(cand: &Minimum, best: &Minimum, data: &ObservationSet, opts: &FitOptions) -> bool {
    let (cc, bc) = (converged_at(cand, data, opts), converged_at(best, data, opts));
    if cc != bc {
        return cc;
    }
    cand.f < best.f
}

/// Ordered-probit fit of the consumption equation alone.
pub fn fit_ordered_probit(data: &ObservationSet, opts: &FitOptions) -> Result<FittedCell> {
    let opts = FitOptions {
        reporting_never_binds: true,
        ..opts.clone()
    };
    fit_cell(data, CopulaFamily::Independence, &opts)
}

/// Hessian of the NLL in raw coordinates by central differences of the
/// analytic gradient.
pub fn raw_hessian(layout: &ParamLayout, data: &ObservationSet, th: &Thresholds, raw: &[f64]) -> DMatrix<f64> {
    let d = raw.len();
    let mut h = DMatrix::zeros(d, d);
    for k in 0..d {
        let step = 1e-4 * raw[k].abs().max(1.0);
        let mut xp = raw.to_vec();
        let mut xm = raw.to_vec();
        xp[k] += step;
        xm[k] -= step;
        let gp = raw_objective(layout, data, th, &xp).1;
        let gm = raw_objective(layout, data, th, &xm).1;
        for i in 0..d {
            h[(i, k)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    (&h + h.transpose()) * 0.5
}

fn raw_covariance(layout: &ParamLayout, data: &ObservationSet, th: &Thresholds, raw: &[f64]) -> Option<Vec<Vec<f64>>> {
    let h = raw_hessian(layout, data, th, raw);
    if h.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let inv = h.cholesky()?.inverse();
    let inv = (&inv + inv.transpose()) * 0.5;
    Some((0..inv.nrows()).map(|i| inv.row(i).iter().copied().collect()).collect())
}

/// Source of the copula parameter of the counterfactual cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterfactualCopula {
    /// Copy from cell `(1, 0)`.
    #[default]
    FromCell10,
    /// Copy from cell `(0, 1)`.
    FromCell01,
}

/// Untreated parameters of cell `(1, 1)` implied by cells `00`, `01`, `10`:
/// `eta11 = eta01 + (eta10 - eta00) * lambda01 / lambda00` and
/// `lambda11 = lambda01 * lambda10 / lambda00`, and likewise for the
/// reporting equation.
pub fn counterfactual_params(
    p00: &CellParams,
    p01: &CellParams,
    p10: &CellParams,
    copula: CounterfactualCopula,
) -> Result<CellParams> {
    for p in [p00, p01, p10] {
        if !(p.lambda > 0.0) || (p.reports() && !(p.zeta > 0.0)) {
            return Err(Error::Domain("counterfactual map needs positive scales".into()));
        }
    }
    let reports = p00.reports();
    if p01.reports() != reports || p10.reports() != reports {
        return Err(Error::Input("cells disagree on whether reporting binds".into()));
    }
    let (eta_bar, lambda) = cf_block(&p00.eta_bar, &p01.eta_bar, &p10.eta_bar, p00.lambda, p01.lambda, p10.lambda)?;
    let (pi_bar, zeta) = if reports {
        cf_block(&p00.pi_bar, &p01.pi_bar, &p10.pi_bar, p00.zeta, p01.zeta, p10.zeta)?
    } else {
        (Vec::new(), p10.zeta)
    };
    let copula = match copula {
        CounterfactualCopula::FromCell10 => p10.copula,
        CounterfactualCopula::FromCell01 => p01.copula,
    };
    Ok(CellParams {
        eta_bar,
        lambda,
        pi_bar,
        zeta,
        copula,
    })
}

fn cf_block(c00: &[f64], c01: &[f64], c10: &[f64], s00: f64, s01: f64, s10: f64) -> Result<(Vec<f64>, f64)> {
    if c00.len() != c01.len() || c00.len() != c10.len() {
        return Err(Error::Input("cells have different covariate layouts".into()));
    }
    let r = s01 / s00;
    let coef = c01.iter().zip(c00).zip(c10).map(|((a, b), c)| a + (c - b) * r).collect();
    Ok((coef, s01 * s10 / s00))
}

/// Marginal PMF of an ordered probit with index `idx`, scale `scale` and
/// cutoffs `cuts`. The last entry closes the sum exactly.
fn marginal_pmf(idx: f64, scale: f64, cuts: &[f64; 2]) -> [f64; 3] {
    let s1 = std_normal_cdf((idx - cuts[0]) / scale);
    let s2 = std_normal_cdf((idx - cuts[1]) / scale);
    [1.0 - s1, s1 - s2, s2]
}

fn pmf_difference(p1: [f64; 3], p0: [f64; 3]) -> [f64; 3] {
    let t0 = p1[0] - p0[0];
    let t1 = p1[1] - p0[1];
    [t0, t1, -(t0 + t1)]
}

/// Consumption DTT at one covariate row: `Pr(Y(1) = j | x) - Pr(Y(0) = j | x)`.
pub fn dtt_consumption(treated: &CellParams, counterfactual: &CellParams, x_row: &[f64], th: &Thresholds) -> [f64; 3] {
    pmf_difference(
        marginal_pmf(treated.consumption_index(x_row), treated.lambda, &th.kappa),
        marginal_pmf(counterfactual.consumption_index(x_row), counterfactual.lambda, &th.kappa),
    )
}

/// Reporting DTT at one covariate row: `Pr(R(1) = j | z) - Pr(R(0) = j | z)`.
pub fn dtt_reporting(
    treated: &CellParams,
    counterfactual: &CellParams,
    z_row: &[f64],
    th: &Thresholds,
) -> Result<[f64; 3]> {
    if !treated.reports() || !counterfactual.reports() {
        return Err(Error::Input("reporting DTT needs a reporting equation in both regimes".into()));
    }
    Ok(pmf_difference(
        marginal_pmf(index(&treated.pi_bar, z_row), treated.zeta, &th.iota),
        marginal_pmf(index(&counterfactual.pi_bar, z_row), counterfactual.zeta, &th.iota),
    ))
}

/// Average of a conditional DTT over covariate rows. The last level closes
/// the sum exactly.
pub fn marginalize_dtt<'a, F, I>(conditional: F, rows: I) -> Result<[f64; 3]>
where
    F: Fn(&[f64]) -> [f64; 3],
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut acc = [0.0; 2];
    let mut n = 0usize;
    for row in rows {
        let t = conditional(row);
        acc[0] += t[0];
        acc[1] += t[1];
        n += 1;
    }
    if n == 0 {
        return Err(Error::Input("cannot marginalize over an empty covariate set".into()));
    }
    let t0 = acc[0] / n as f64;
    let t1 = acc[1] / n as f64;
    Ok([t0, t1, -(t0 + t1)])
}

/// Delta-method standard errors of `map` evaluated at the fitted cells.
///
/// The cells are treated as independent, so the covariance is block
/// diagonal; the gradient is taken by central differences with step `1e-5`
/// in raw coordinates.
pub fn delta_method_se<F>(cells: &[&FittedCell], map: F) -> Result<Vec<f64>>
where
    F: Fn(&[CellParams]) -> Result<Vec<f64>>,
{
    const STEP: f64 = 1e-5;
    let covs: Vec<&Vec<Vec<f64>>> = cells.iter().map(|c| c.require_covariance()).collect::<Result<_>>()?;
    let base: Vec<CellParams> = cells.iter().map(|c| c.params.clone()).collect();
    let n_out = map(&base)?.len();
    let mut var = vec![0.0; n_out];
    for (c, cell) in cells.iter().enumerate() {
        let d = cell.raw.len();
        // Jacobian of the outputs with respect to this cell's raw parameters.
        let mut jac = vec![vec![0.0; d]; n_out];
        for k in 0..d {
            let eval = |delta: f64| -> Result<Vec<f64>> {
                let mut raw = cell.raw.clone();
                raw[k] += delta;
                let mut params = base.clone();
                params[c] = cell.layout.to_params(&raw);
                map(&params)
            };
            let up = eval(STEP)?;
            let down = eval(-STEP)?;
            for o in 0..n_out {
                jac[o][k] = (up[o] - down[o]) / (2.0 * STEP);
            }
        }
        let cov = covs[c];
        for o in 0..n_out {
            let g = &jac[o];
            let mut q = 0.0;
            for i in 0..d {
                for j in 0..d {
                    q += g[i] * cov[i][j] * g[j];
                }
            }
            var[o] += q;
        }
    }
    Ok(var.into_iter().map(|v| v.max(0.0).sqrt()).collect())
}

/// Distributional treatment effects for the treated-after cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DttResult {
    pub tau_c: [f64; 3],
    pub tau_r: Option<[f64; 3]>,
    pub se_c: Option<[f64; 3]>,
    pub se_r: Option<[f64; 3]>,
    /// Averaged over the cell's covariate rows rather than evaluated at a point.
    pub marginalized: bool,
}

/// Marginalized DTTs for cell `(1,1)` with delta-method standard errors.
///
/// `cells` are the fitted cells `00, 01, 10, 11`; the averages run over the
/// covariate rows of `data11`. Standard errors are omitted when any
/// covariance is unavailable.
pub fn dtt_with_standard_errors(
    cells: [&FittedCell; 4],
    data11: &ObservationSet,
    th: &Thresholds,
    copula: CounterfactualCopula,
) -> Result<DttResult> {
    let reports = cells.iter().all(|c| c.params.reports());
    let map = |p: &[CellParams]| -> Result<Vec<f64>> {
        let cf = counterfactual_params(&p[0], &p[1], &p[2], copula)?;
        let mut out = marginalize_dtt(|x| dtt_consumption(&p[3], &cf, x, th), data11.x_rows())?.to_vec();
        if reports {
            let r = marginalize_dtt(
                |z| dtt_reporting(&p[3], &cf, z, th).unwrap_or([f64::NAN; 3]),
                data11.z_rows(),
            )?;
            out.extend_from_slice(&r);
        }
        Ok(out)
    };
    let params: Vec<CellParams> = cells.iter().map(|c| c.params.clone()).collect();
    let point = map(&params)?;
    let se = if cells.iter().all(|c| c.covariance.is_some()) {
        Some(delta_method_se(&cells, map)?)
    } else {
        None
    };
    let take = |v: &[f64], o: usize| [v[o], v[o + 1], v[o + 2]];
    Ok(DttResult {
        tau_c: take(&point, 0),
        tau_r: reports.then(|| take(&point, 3)),
        se_c: se.as_ref().map(|s| take(s, 0)),
        se_r: se.as_ref().filter(|_| reports).map(|s| take(s, 3)),
        marginalized: true,
    })
}

/// Which blocks the pre-trend test restricts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrendRestriction {
    Consumption,
    ConsumptionAndReporting,
}

/// Result of the pre-trend likelihood-ratio test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub nll_unrestricted: f64,
    pub nll_restricted: f64,
    pub restriction: PretrendRestriction,
}

/// Likelihood-ratio test of the changes-in-changes restrictions between two
/// pre-treatment periods.
///
/// `data` holds cells `00, 01, 10, 11` of the two periods and `unrestricted`
/// their separate fits. The restricted model derives the consumption
/// parameters of cell `11` (and its reporting parameters under
/// [`PretrendRestriction::ConsumptionAndReporting`]) from the other three
/// cells and is maximized jointly, starting from the unrestricted estimates.
pub fn pretrend_lr_test(
    data: [&ObservationSet; 4],
    unrestricted: [&FittedCell; 4],
    restriction: PretrendRestriction,
    opts: &FitOptions,
) -> Result<LrTest> {
    let layouts: Vec<ParamLayout> = unrestricted.iter().map(|c| c.layout).collect();
    let l0 = layouts[0];
    if layouts.iter().any(|l| l.kx1 != l0.kx1 || l.kz1 != l0.kz1) {
        return Err(Error::Input("pre-trend cells have different covariate layouts".into()));
    }
    let restrict_r = restriction == PretrendRestriction::ConsumptionAndReporting;
    if restrict_r && !l0.reports() {
        return Err(Error::Input("reporting restrictions need a reporting equation".into()));
    }
    let th = opts.thresholds;
    let l3 = layouts[3];
    // Free raw entries of cell 11 in the restricted model.
    let free11: Vec<usize> = (0..l3.dim())
        .filter(|&i| {
            let in_c = i <= l3.lambda_index();
            let in_r = l3.reports() && i >= l3.pi_offset() && i <= l3.zeta_index();
            !(in_c || (restrict_r && in_r))
        })
        .collect();
    let offsets = [0, layouts[0].dim(), layouts[0].dim() + layouts[1].dim()];
    let n_joint = offsets[2] + layouts[2].dim() + free11.len();
    let split = |x: &[f64]| -> [Vec<f64>; 4] {
        let r00 = x[offsets[0]..offsets[1]].to_vec();
        let r01 = x[offsets[1]..offsets[2]].to_vec();
        let r10 = x[offsets[2]..offsets[2] + layouts[2].dim()].to_vec();
        let mut r11 = vec![0.0; l3.dim()];
        let tail = &x[offsets[2] + layouts[2].dim()..];
        for (k, &i) in free11.iter().enumerate() {
            r11[i] = tail[k];
        }
        let fill = |r11: &mut [f64], lo: usize, hi: usize, s: usize| {
            let r = (r01[s] - r00[s]).exp();
            for i in lo..hi {
                r11[i] = r01[i] + (r10[i] - r00[i]) * r;
            }
            r11[s] = r01[s] + r10[s] - r00[s];
        };
        fill(&mut r11, 0, l0.kx1, l0.lambda_index());
        if restrict_r {
            fill(&mut r11, l0.pi_offset(), l0.zeta_index(), l0.zeta_index());
        }
        [r00, r01, r10, r11]
    };
    let objective = |x: &[f64]| -> (f64, Vec<f64>) {
        let raws = split(x);
        let mut total = 0.0;
        let mut grads = Vec::with_capacity(4);
        for c in 0..4 {
            let (f, g) = raw_objective(&layouts[c], data[c], &th, &raws[c]);
            if !f.is_finite() {
                return (f64::INFINITY, vec![f64::NAN; x.len()]);
            }
            total += f;
            grads.push(g);
        }
        let mut out = vec![0.0; x.len()];
        for c in 0..3 {
            out[offsets[c]..offsets[c] + layouts[c].dim()].copy_from_slice(&grads[c]);
        }
        let g11 = &grads[3];
        let tail = offsets[2] + layouts[2].dim();
        for (k, &i) in free11.iter().enumerate() {
            out[tail + k] = g11[i];
        }
        let (r00, r01, r10) = (&raws[0], &raws[1], &raws[2]);
        let mut chain = |lo: usize, hi: usize, s: usize| {
            let r = (r01[s] - r00[s]).exp();
            let mut d_log_ratio = 0.0;
            for i in lo..hi {
                out[offsets[1] + i] += g11[i];
                out[offsets[2] + i] += r * g11[i];
                out[offsets[0] + i] -= r * g11[i];
                d_log_ratio += g11[i] * (r10[i] - r00[i]) * r;
            }
            out[offsets[1] + s] += d_log_ratio + g11[s];
            out[offsets[0] + s] += -d_log_ratio - g11[s];
            out[offsets[2] + s] += g11[s];
        };
        chain(0, l0.kx1, l0.lambda_index());
        if restrict_r {
            chain(l0.pi_offset(), l0.zeta_index(), l0.zeta_index());
        }
        (total, out)
    };
    let mut x0 = Vec::with_capacity(n_joint);
    for c in 0..3 {
        x0.extend_from_slice(&unrestricted[c].raw);
    }
    x0.extend(free11.iter().map(|&i| unrestricted[3].raw[i]));
    let n_total: usize = data.iter().map(|d| d.len()).sum();
    let bopts = BfgsOptions {
        max_iter: opts.max_iter.max(4 * n_joint),
        gtol: opts.gtol * n_total as f64,
        ftol: 1e-15,
    };
    let mut m = bfgs(objective, &x0, &bopts);
    if m.f.is_finite() && m.grad_norm > bopts.gtol {
        let again = bfgs(objective, &m.x, &bopts);
        if again.f <= m.f {
            m = again;
        }
    }
    if !m.f.is_finite() {
        return Err(Error::Convergence {
            message: "restricted pre-trend fit produced no finite likelihood".into(),
            best: None,
        });
    }
    if m.grad_norm > 1e3 * bopts.gtol {
        return Err(Error::Convergence {
            message: format!("restricted pre-trend fit stalled with gradient norm {:.3e}", m.grad_norm),
            best: None,
        });
    }
    let nll_u: f64 = unrestricted.iter().map(|c| c.nll).sum();
    let statistic = (2.0 * (m.f - nll_u)).max(0.0);
    let mut df = l0.kx1 + 1;
    if restrict_r {
        df += l0.kz1 + 1;
    }
    let chi = ChiSquared::new(df as f64).map_err(|e| Error::Internal(e.to_string()))?;
    Ok(LrTest {
        statistic,
        df,
        p_value: chi.sf(statistic),
        nll_unrestricted: nll_u,
        nll_restricted: m.f,
        restriction,
    })
}

/// Decomposition of `Pr(C(1) >= j) - Pr(C(0) >= j)` at one covariate point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailDecomposition {
    /// Change of copula at the treated margins.
    pub dependence: f64,
    /// Change of the consumption margin under the counterfactual copula.
    pub consumption_margin: f64,
    /// Change of the reporting margin under the counterfactual copula.
    pub reporting_margin: f64,
    /// Total tail difference.
    pub total: f64,
}

/// Splits the tail difference at level `j` into a dependence term and two
/// margin terms; each regime's copula uses its own parameter.
pub fn copula_decomposition(
    treated: &CellParams,
    counterfactual: &CellParams,
    x_row: &[f64],
    z_row: &[f64],
    j: usize,
    th: &Thresholds,
) -> Result<TailDecomposition> {
    if !(1..N_LEVELS).contains(&j) {
        return Err(Error::Domain(format!("decomposition level must be 1 or 2, got {j}")));
    }
    if !treated.reports() || !counterfactual.reports() {
        return Err(Error::Input("decomposition needs a reporting equation in both regimes".into()));
    }
    let margins = |p: &CellParams| {
        (
            std_normal_cdf((p.consumption_index(x_row) - th.kappa[j - 1]) / p.lambda),
            std_normal_cdf((p.reporting_index(z_row) - th.iota[j - 1]) / p.zeta),
        )
    };
    let (u1, v1) = margins(treated);
    let (u0, v0) = margins(counterfactual);
    let c1 = |u, v| treated.copula.cdf(u, v);
    let c0 = |u, v| counterfactual.copula.cdf(u, v);
    let dependence = c1(u1, v1) - c0(u1, v1);
    let consumption_margin = c0(u1, v1) - c0(u0, v1);
    let reporting_margin = c0(u0, v1) - c0(u0, v0);
    Ok(TailDecomposition {
        dependence,
        consumption_margin,
        reporting_margin,
        total: c1(u1, v1) - c0(u0, v0),
    })
}

/// Decomposition averaged over paired covariate rows.
pub fn average_decomposition(
    treated: &CellParams,
    counterfactual: &CellParams,
    data: &ObservationSet,
    j: usize,
    th: &Thresholds,
) -> Result<TailDecomposition> {
    if data.is_empty() {
        return Err(Error::Input("cannot average over an empty covariate set".into()));
    }
    let mut acc = [0.0; 4];
    for i in 0..data.len() {
        let d = copula_decomposition(treated, counterfactual, data.x_row(i), data.z_row(i), j, th)?;
        acc[0] += d.dependence;
        acc[1] += d.consumption_margin;
        acc[2] += d.reporting_margin;
        acc[3] += d.total;
    }
    let n = data.len() as f64;
    Ok(TailDecomposition {
        dependence: acc[0] / n,
        consumption_margin: acc[1] / n,
        reporting_margin: acc[2] / n,
        total: acc[3] / n,
    })
}
