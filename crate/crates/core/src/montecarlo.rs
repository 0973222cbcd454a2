//! Simulation designs for the estimator and a separable changes-in-changes
//! data generator.
//!
//! Design cases draw `W ~ N(0, 1)` and `X, Z ~ U(-sqrt 3, sqrt 3)`. Consumption
//! covariates are ordered `[X, W]` and reporting covariates `[Z, W]`, so the
//! coefficient names follow `beta0 + beta1 X + beta2 W`. Cases without `X`
//! keep `W` as the only consumption covariate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::copula::{calibrate_theta, spearman_rho, CopulaFamily, CopulaSpec};
use crate::estimator::{fit_cell, FitOptions, FittedCell};
use crate::ordered_model::{simulate_cell, BaseVariable, CellParams, CovariateLaw, ObservationSet, Thresholds};
use crate::rng::{substream, substream_seed};
use crate::stats_core::sample_quantile;
use crate::{Error, Result};

/// Exclusion-restriction designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DesignCase {
    /// No excluded variables.
    Case0,
    /// Excluded `Z` in the reporting equation only.
    Case1a,
    /// As `Case1a` with a smaller consumption index variance.
    Case1b,
    /// Excluded variables in both equations.
    Case2a,
    /// As `Case2a` with smaller index variances.
    Case2b,
}

const W: usize = 0;
const X: usize = 1;
const Z: usize = 2;

impl DesignCase {
    pub const ALL: [DesignCase; 5] = [Self::Case0, Self::Case1a, Self::Case1b, Self::Case2a, Self::Case2b];

    pub fn label(self) -> &'static str {
        match self {
            Self::Case0 => "0",
            Self::Case1a => "1a",
            Self::Case1b => "1b",
            Self::Case2a => "2a",
            Self::Case2b => "2b",
        }
    }

    /// Covariate law with base variables `[W, X, Z]`.
    pub fn covariate_law(self) -> CovariateLaw {
        let (x_cols, z_cols) = match self {
            Self::Case0 => (vec![W], vec![W]),
            Self::Case1a | Self::Case1b => (vec![W], vec![Z, W]),
            Self::Case2a | Self::Case2b => (vec![X, W], vec![Z, W]),
        };
        CovariateLaw {
            base: vec![BaseVariable::StdNormal, BaseVariable::unit_uniform(), BaseVariable::unit_uniform()],
            x_cols,
            z_cols,
        }
    }

    /// True parameters with the given copula; both scales equal 2.
    pub fn params(self, copula: CopulaSpec) -> CellParams {
        let r2 = std::f64::consts::SQRT_2;
        let (eta_bar, pi_bar) = match self {
            Self::Case0 => (vec![-1.0, 2.0], vec![1.5, -2.0]),
            Self::Case1a => (vec![-1.0, 2.0], vec![1.5, -r2, -r2]),
            Self::Case1b => (vec![-1.0, r2], vec![1.5, -1.0, -1.0]),
            Self::Case2a => (vec![-1.0, r2, r2], vec![1.5, -r2, -r2]),
            Self::Case2b => (vec![-1.0, 1.0, 1.0], vec![1.5, -1.0, -1.0]),
        };
        CellParams {
            eta_bar,
            lambda: 2.0,
            pi_bar,
            zeta: 2.0,
            copula,
        }
    }

    /// Names of the reported parameters, ending with Spearman's rho.
    pub fn parameter_names(self) -> Vec<String> {
        let p = self.params(CopulaSpec::independence());
        let mut names: Vec<String> = (0..p.eta_bar.len()).map(|k| format!("beta{k}")).collect();
        names.extend((0..p.pi_bar.len()).map(|k| format!("pi{k}")));
        names.extend(["lambda", "zeta", "rho"].map(String::from));
        names
    }
}

impl std::str::FromStr for DesignCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['-', '_', ' '], "");
        let key = key.trim_start_matches("case");
        Self::ALL
            .into_iter()
            .find(|c| c.label() == key)
            .ok_or_else(|| Error::Input(format!("unknown design case '{s}'")))
    }
}

impl std::fmt::Display for DesignCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "case{}", self.label())
    }
}

/// Parameter vector reported for a cell: `eta_bar`, `pi_bar`, `lambda`,
/// `zeta` and the Spearman's rho of the copula.
pub fn reported_values(p: &CellParams) -> Vec<f64> {
    let mut v = p.eta_bar.clone();
    v.extend_from_slice(&p.pi_bar);
    v.push(p.lambda);
    v.push(p.zeta);
    v.push(spearman_rho(&p.copula));
    v
}

/// Settings of a design run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignConfig {
    pub case: DesignCase,
    pub family: CopulaFamily,
    pub target_rho: f64,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub fit: FitOptions,
}

impl DesignConfig {
    pub fn new(case: DesignCase, family: CopulaFamily, target_rho: f64, n: usize, reps: usize, seed: u64) -> Self {
        Self {
            case,
            family,
            target_rho,
            n,
            reps,
            seed,
            fit: FitOptions::default(),
        }
    }
}

/// Summary statistics of one parameter across replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub truth: f64,
    pub mean_bias: f64,
    /// Monte Carlo standard error of the mean bias.
    pub mc_se: f64,
    pub rmse: f64,
    /// `sqrt(median_bias^2 + (1.4826 MAD)^2)`.
    pub robust_rmse: f64,
    pub n_used: usize,
}

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub index: usize,
    /// Reported parameter values, absent if the fit failed outright.
    pub estimate: Option<Vec<f64>>,
    pub converged: bool,
    pub error: Option<String>,
}

/// Mean bias and RMSE table of a design run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub config: DesignConfig,
    /// Copula parameter matching the target Spearman's rho.
    pub theta: f64,
    pub params: Vec<ParamSummary>,
    /// Replications whose optimizer did not meet the gradient tolerance; their
    /// best points are included in the statistics.
    pub non_converged: usize,
    /// Replications without any estimate (for example an empty outcome level).
    pub failed: usize,
    pub replications: Vec<Replication>,
}

/// Runs a design with default fit options.
pub fn run_design(
    case: DesignCase,
    family: CopulaFamily,
    target_rho: f64,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<DesignReport> {
    run_design_with(&DesignConfig::new(case, family, target_rho, n, reps, seed))
}

/// Simulates `reps` samples of size `n` from the design, fits each one and
/// aggregates the estimates. Replicate `r` uses substream `r` of the seed for
/// data and a derived seed for the fit's random starts.
pub fn run_design_with(cfg: &DesignConfig) -> Result<DesignReport> {
    if cfg.n < 500 {
        return Err(Error::Input(format!("design runs need n >= 500, got {}", cfg.n)));
    }
    if cfg.reps < 10 {
        return Err(Error::Input(format!("design runs need reps >= 10, got {}", cfg.reps)));
    }
    let copula = calibrate_theta(cfg.family, cfg.target_rho)?;
    let truth_params = cfg.case.params(copula);
    let truth = reported_values(&truth_params);
    let law = cfg.case.covariate_law();
    let th = cfg.fit.thresholds;
    let replications: Vec<Replication> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(cfg.seed, r as u64);
            let data = match simulate_cell(&truth_params, &law, cfg.n, &th, &mut rng) {
                Ok(d) => d,
                Err(e) => return failed_rep(r, e),
            };
            let opts = FitOptions {
                seed: substream_seed(cfg.seed ^ 0xF17, r as u64),
                skip_covariance: true,
                ..cfg.fit.clone()
            };
            match fit_cell(&data, cfg.family, &opts) {
                Ok(fit) => Replication {
                    index: r,
                    estimate: Some(reported_values(&fit.params)),
                    converged: true,
                    error: None,
                },
                Err(Error::Convergence { best: Some(best), message }) => Replication {
                    index: r,
                    estimate: Some(reported_values(&best.params)),
                    converged: false,
                    error: Some(message),
                },
                Err(e) => failed_rep(r, e),
            }
        })
        .collect();
    let names = cfg.case.parameter_names();
    let params = names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let errors: Vec<f64> = replications
                .iter()
                .filter_map(|r| r.estimate.as_ref().map(|e| e[k] - truth[k]))
                .collect();
            summarize(name, truth[k], &errors)
        })
        .collect();
    Ok(DesignReport {
        config: cfg.clone(),
        theta: copula.theta,
        params,
        non_converged: replications.iter().filter(|r| r.estimate.is_some() && !r.converged).count(),
        failed: replications.iter().filter(|r| r.estimate.is_none()).count(),
        replications,
    })
}

fn failed_rep(index: usize, e: Error) -> Replication {
    Replication {
        index,
        estimate: None,
        converged: false,
        error: Some(e.to_string()),
    }
}

/// Mean bias, its Monte Carlo standard error, RMSE and robust RMSE of a set of
/// estimation errors.
pub fn summarize(name: &str, truth: f64, errors: &[f64]) -> ParamSummary {
    let m = errors.len();
    if m == 0 {
        return ParamSummary {
            name: name.to_string(),
            truth,
            mean_bias: f64::NAN,
            mc_se: f64::NAN,
            rmse: f64::NAN,
            robust_rmse: f64::NAN,
            n_used: 0,
        };
    }
    let mf = m as f64;
    let mean = errors.iter().sum::<f64>() / mf;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / mf).sqrt();
    let sd = if m > 1 {
        (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (mf - 1.0)).sqrt()
    } else {
        0.0
    };
    let median = sample_quantile(errors, 0.5).unwrap_or(f64::NAN);
    let dev: Vec<f64> = errors.iter().map(|e| (e - median).abs()).collect();
    let mad = 1.4826 * sample_quantile(&dev, 0.5).unwrap_or(f64::NAN);
    ParamSummary {
        name: name.to_string(),
        truth,
        mean_bias: mean,
        mc_se: sd / mf.sqrt(),
        rmse,
        robust_rmse: (median * median + mad * mad).sqrt(),
        n_used: m,
    }
}

/// Separable index structure across groups and periods: `eta_gt = alpha_t +
/// beta_t mu_g` and `lambda_gt = beta_t sigma_g`, which satisfies the
/// changes-in-changes identities exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparableDgp {
    /// Time intercept vectors for periods 0 and 1.
    pub alpha: [Vec<f64>; 2],
    pub beta: [f64; 2],
    /// Group location vectors for groups 0 and 1.
    pub mu: [Vec<f64>; 2],
    pub sigma: [f64; 2],
}

impl SeparableDgp {
    pub fn validate(&self) -> Result<()> {
        let k = self.alpha[0].len();
        if k == 0 || self.alpha[1].len() != k || self.mu.iter().any(|m| m.len() != k) {
            return Err(Error::Input("separable components must share one nonempty length".into()));
        }
        for t in 0..2 {
            for g in 0..2 {
                let s = self.beta[t] * self.sigma[g];
                if !(s > 0.0 && s.is_finite()) {
                    return Err(Error::Domain(format!(
                        "beta_{t} * sigma_{g} = {s} must be positive"
                    )));
                }
            }
        }
        Ok(())
    }

    /// `(eta_gt, lambda_gt)`.
    pub fn cell(&self, g: usize, t: usize) -> Result<(Vec<f64>, f64)> {
        self.validate()?;
        let eta = self.alpha[t]
            .iter()
            .zip(&self.mu[g])
            .map(|(a, m)| a + self.beta[t] * m)
            .collect();
        Ok((eta, self.beta[t] * self.sigma[g]))
    }
}

/// Parameters of cells `00, 01, 10, 11` from separable consumption and
/// (optionally) reporting structures and one copula.
pub fn separable_cells(
    consumption: &SeparableDgp,
    reporting: Option<&SeparableDgp>,
    copula: CopulaSpec,
) -> Result<[CellParams; 4]> {
    let mut cells = Vec::with_capacity(4);
    for (g, t) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        let (eta_bar, lambda) = consumption.cell(g, t)?;
        let (pi_bar, zeta, copula) = match reporting {
            Some(r) => {
                let (pi, zeta) = r.cell(g, t)?;
                (pi, zeta, copula)
            }
            None => (Vec::new(), 1.0, CopulaSpec::independence()),
        };
        cells.push(CellParams {
            eta_bar,
            lambda,
            pi_bar,
            zeta,
            copula,
        });
    }
    Ok(cells.try_into().expect("four cells"))
}

/// Simulates `n` observations in each of the four cells; cell `c` uses
/// substream `c` of `seed`.
pub fn make_cic_cells(
    consumption: &SeparableDgp,
    reporting: Option<&SeparableDgp>,
    copula: CopulaSpec,
    law: &CovariateLaw,
    n: usize,
    seed: u64,
    th: &Thresholds,
) -> Result<[ObservationSet; 4]> {
    let params = separable_cells(consumption, reporting, copula)?;
    simulate_cells(&params, law, n, seed, th)
}

/// Simulates `n` observations from each of the given cell parameters.
pub fn simulate_cells(
    params: &[CellParams; 4],
    law: &CovariateLaw,
    n: usize,
    seed: u64,
    th: &Thresholds,
) -> Result<[ObservationSet; 4]> {
    let cells = [(0u8, 0u8), (0, 1), (1, 0), (1, 1)];
    let mut out = Vec::with_capacity(4);
    for (c, p) in params.iter().enumerate() {
        let mut rng = substream(seed, c as u64);
        let (g, t) = cells[c];
        out.push(simulate_cell(p, law, n, th, &mut rng)?.with_cell(g, t));
    }
    Ok(out.try_into().expect("four cells"))
}

/// Fits four cells in parallel with per-cell seeds.
pub fn fit_cells(data: &[ObservationSet; 4], family: CopulaFamily, opts: &FitOptions) -> Vec<Result<FittedCell>> {
    data.par_iter()
        .enumerate()
        .map(|(c, d)| {
            let o = FitOptions {
                seed: substream_seed(opts.seed, c as u64),
                ..opts.clone()
            };
            fit_cell(d, family, &o)
        })
        .collect()
}
