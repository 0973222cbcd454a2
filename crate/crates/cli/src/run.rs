//! The four workflows behind the subcommands.

use ordcic::bounds::{compute_bounds, smooth_envelope_bounds, BootstrapOptions, BoundsResult, CellBoundInputs, LevelBounds};
use ordcic::estimator::{
    average_decomposition, counterfactual_params, dtt_with_standard_errors, pretrend_lr_test, DttResult,
    FitOptions, FittedCell, LrTest, TailDecomposition,
};
use ordcic::montecarlo::{fit_cells, run_design_with, DesignConfig, DesignReport};
use ordcic::ordered_model::{CellParams, ObservationSet, Thresholds};
use ordcic::Error;
use serde::Serialize;

use crate::config::RunConfig;
use crate::ingest::{ingest, ColumnMap, Ingested, CELL_TAGS};
use crate::report::{num, opt_num, Table};
use crate::CliError;

fn column_map(cfg: &RunConfig) -> ColumnMap {
    ColumnMap {
        outcome: cfg.outcome.clone(),
        group: cfg.group.clone(),
        time: cfg.time.clone(),
        xcols: cfg.xcols.clone(),
        zcols: if cfg.reporting { cfg.zcols.clone() } else { Vec::new() },
        instrument: if cfg.command == "bounds" { cfg.instrument.clone() } else { None },
    }
}

fn load(cfg: &RunConfig) -> Result<Ingested, CliError> {
    let path = cfg.input.as_ref().ok_or_else(|| CliError::Config("missing --input".into()))?;
    let data = ingest(path, &column_map(cfg))?;
    data.require_nonempty()?;
    Ok(data)
}

fn fit_options(cfg: &RunConfig) -> FitOptions {
    FitOptions {
        n_random_starts: cfg.random_starts,
        seed: cfg.seed,
        reporting_never_binds: !cfg.reporting,
        ..FitOptions::default()
    }
}

fn cell_name(c: usize) -> String {
    let (g, t) = CELL_TAGS[c];
    format!("{g}{t}")
}

fn fit_all(cfg: &RunConfig, sets: &[ObservationSet; 4]) -> Result<[FittedCell; 4], CliError> {
    let fits = fit_cells(sets, cfg.copula, &fit_options(cfg));
    let mut out = Vec::with_capacity(4);
    for (c, f) in fits.into_iter().enumerate() {
        match f {
            Ok(f) => out.push(f),
            Err(Error::Convergence { message, .. }) => {
                return Err(CliError::Core(Error::Convergence {
                    message: format!("cell {}: {message}", cell_name(c)),
                    best: None,
                }))
            }
            Err(e) => return Err(CliError::Core(prefix_error(e, &cell_name(c)))),
        }
    }
    Ok(out.try_into().expect("four cells"))
}

fn prefix_error(e: Error, cell: &str) -> Error {
    match e {
        Error::Input(m) => Error::Input(format!("cell {cell}: {m}")),
        Error::Domain(m) => Error::Domain(format!("cell {cell}: {m}")),
        Error::Internal(m) => Error::Internal(format!("cell {cell}: {m}")),
        other => other,
    }
}

#[derive(Debug, Serialize)]
pub struct CellReport {
    pub cell: String,
    pub n: usize,
    pub names: Vec<String>,
    pub params: CellParams,
    pub natural: Vec<f64>,
    pub standard_errors: Option<Vec<f64>>,
    pub nll: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    pub floor_hits: usize,
}

fn natural_values(p: &CellParams) -> Vec<f64> {
    let mut v = p.eta_bar.clone();
    v.push(p.lambda);
    if p.reports() {
        v.extend_from_slice(&p.pi_bar);
        v.push(p.zeta);
        if p.copula.has_theta() {
            v.push(p.copula.theta);
        }
    }
    v
}

fn cell_report(c: usize, f: &FittedCell) -> CellReport {
    CellReport {
        cell: cell_name(c),
        n: f.n_obs,
        names: f.layout.names(),
        params: f.params.clone(),
        natural: natural_values(&f.params),
        standard_errors: f.natural_standard_errors(),
        nll: f.nll,
        converged: f.diagnostics.converged,
        iterations: f.diagnostics.iterations,
        grad_norm: f.diagnostics.grad_norm,
        floor_hits: f.diagnostics.floor_hits,
    }
}

#[derive(Debug, Serialize)]
pub struct LevelDecomposition {
    pub level: usize,
    pub decomposition: TailDecomposition,
}

#[derive(Debug, Serialize)]
pub struct EstimateResult {
    pub cell_counts: [usize; 4],
    pub cells: Vec<CellReport>,
    pub counterfactual: CellParams,
    pub dtt: DttResult,
    pub decomposition: Vec<LevelDecomposition>,
}

pub fn estimate(cfg: &RunConfig) -> Result<(EstimateResult, String), CliError> {
    let data = load(cfg)?;
    let sets = data.observation_sets()?;
    let fits = fit_all(cfg, &sets)?;
    let th = Thresholds::default();
    let cf = counterfactual_params(&fits[0].params, &fits[1].params, &fits[2].params, cfg.counterfactual_copula)?;
    let dtt = dtt_with_standard_errors([&fits[0], &fits[1], &fits[2], &fits[3]], &sets[3], &th, cfg.counterfactual_copula)?;
    let decomposition = if cfg.reporting {
        (1..=2)
            .map(|j| {
                Ok(LevelDecomposition {
                    level: j,
                    decomposition: average_decomposition(&fits[3].params, &cf, &sets[3], j, &th)?,
                })
            })
            .collect::<Result<Vec<_>, Error>>()?
    } else {
        Vec::new()
    };
    let result = EstimateResult {
        cell_counts: data.counts(),
        cells: fits.iter().enumerate().map(|(c, f)| cell_report(c, f)).collect(),
        counterfactual: cf,
        dtt,
        decomposition,
    };
    let text = estimate_text(&result);
    Ok((result, text))
}

fn estimate_text(r: &EstimateResult) -> String {
    let mut out = String::new();
    for c in &r.cells {
        let mut t = Table::new(
            &format!("cell {} (n = {}, nll = {})", c.cell, c.n, num(c.nll)),
            &["parameter", "estimate", "std.err"],
        );
        for (i, name) in c.names.iter().enumerate() {
            t.row(vec![
                name.clone(),
                num(c.natural[i]),
                opt_num(c.standard_errors.as_ref().map(|s| s[i])),
            ]);
        }
        out.push_str(&t.render());
        out.push('\n');
    }
    let mut t = Table::new("treatment effects on the treated", &["level", "tau_c", "se_c", "tau_r", "se_r"]);
    for j in 0..3 {
        t.row(vec![
            j.to_string(),
            num(r.dtt.tau_c[j]),
            opt_num(r.dtt.se_c.map(|s| s[j])),
            opt_num(r.dtt.tau_r.map(|s| s[j])),
            opt_num(r.dtt.se_r.map(|s| s[j])),
        ]);
    }
    out.push_str(&t.render());
    if !r.decomposition.is_empty() {
        out.push('\n');
        let mut t = Table::new(
            "tail difference decomposition",
            &["level", "dependence", "consumption", "reporting", "total"],
        );
        for d in &r.decomposition {
            let x = d.decomposition;
            t.row(vec![
                d.level.to_string(),
                num(x.dependence),
                num(x.consumption_margin),
                num(x.reporting_margin),
                num(x.total),
            ]);
        }
        out.push_str(&t.render());
    }
    out
}

#[derive(Debug, Serialize)]
pub struct KappaPoint {
    pub smooth_kappa: f64,
    pub smoothed: LevelBounds,
}

#[derive(Debug, Serialize)]
pub struct BoundsReport {
    pub cell_counts: [usize; 4],
    pub bounds: BoundsResult,
    pub kappa_sweep: Vec<KappaPoint>,
}

pub fn bounds(cfg: &RunConfig) -> Result<(BoundsReport, String), CliError> {
    let data = load(cfg)?;
    let samples = data.cell_samples()?;
    let alpha = cfg.alpha.ok_or_else(|| CliError::Config("'bounds' requires --alpha".into()))?;
    let boot = (cfg.b > 0).then_some(BootstrapOptions {
        replicates: cfg.b,
        level: cfg.level,
        k: cfg.k,
        seed: cfg.seed,
    });
    let refs = [&samples[0], &samples[1], &samples[2], &samples[3]];
    let result = compute_bounds(refs, alpha, cfg.smooth_kappa, boot.as_ref())?;
    let inputs: Vec<CellBoundInputs> = samples
        .iter()
        .map(CellBoundInputs::from_sample)
        .collect::<Result<_, _>>()?;
    let kappa_sweep = cfg
        .kappa_sweep
        .iter()
        .map(|&k| {
            Ok(KappaPoint {
                smooth_kappa: k,
                smoothed: smooth_envelope_bounds([&inputs[0], &inputs[1], &inputs[2], &inputs[3]], alpha, k)?,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let report = BoundsReport {
        cell_counts: data.counts(),
        bounds: result,
        kappa_sweep,
    };
    let text = bounds_text(&report);
    Ok((report, text))
}

fn bounds_text(r: &BoundsReport) -> String {
    let b = &r.bounds;
    let f = &b.feasibility;
    let mut out = format!(
        "alpha = {}, feasibility ratio = {} ({}), smooth_kappa = {}\n\n",
        num(b.alpha),
        num(f.ratio),
        if f.feasible { "feasible" } else { "infeasible" },
        b.smooth_kappa
    );
    let mut t = Table::new(
        "counterfactual CDF bounds for cell 11",
        &["level", "lower", "upper", "lower_smooth", "upper_smooth", "lower_band", "upper_band"],
    );
    for j in 0..3 {
        t.row(vec![
            j.to_string(),
            num(b.raw.lower[j]),
            num(b.raw.upper[j]),
            num(b.smoothed.lower[j]),
            num(b.smoothed.upper[j]),
            opt_num(b.bands.as_ref().map(|x| x.lower[j])),
            opt_num(b.bands.as_ref().map(|x| x.upper[j])),
        ]);
    }
    out.push_str(&t.render());
    out.push('\n');
    let mut t = Table::new("per-cell bounds", &["cell", "L0", "U0", "L1", "U1"]);
    for (c, cb) in b.cells.iter().enumerate() {
        t.row(vec![
            cell_name(c),
            num(cb.lower[0]),
            num(cb.upper[0]),
            num(cb.lower[1]),
            num(cb.upper[1]),
        ]);
    }
    out.push_str(&t.render());
    if let Some(bands) = &b.bands {
        out.push_str(&format!("bootstrap replicates used = {}, dropped = {}\n", bands.used, bands.dropped));
    }
    if !r.kappa_sweep.is_empty() {
        out.push('\n');
        let mut t = Table::new("smoothing sweep", &["smooth_kappa", "lower0", "upper0", "lower1", "upper1"]);
        for p in &r.kappa_sweep {
            t.row(vec![
                format!("{}", p.smooth_kappa),
                num(p.smoothed.lower[0]),
                num(p.smoothed.upper[0]),
                num(p.smoothed.lower[1]),
                num(p.smoothed.upper[1]),
            ]);
        }
        out.push_str(&t.render());
    }
    out
}

pub fn simulate(cfg: &RunConfig) -> Result<(DesignReport, String), CliError> {
    let mut design = DesignConfig::new(cfg.case, cfg.copula, cfg.rho, cfg.n, cfg.reps, cfg.seed);
    design.fit.n_random_starts = cfg.random_starts;
    let report = run_design_with(&design)?;
    let mut t = Table::new(
        &format!(
            "{} {} copula, spearman rho = {}, theta = {}, n = {}, reps = {} (non-converged {}, failed {})",
            cfg.case,
            cfg.copula,
            cfg.rho,
            num(report.theta),
            cfg.n,
            cfg.reps,
            report.non_converged,
            report.failed
        ),
        &["parameter", "truth", "mean_bias", "mc_se", "rmse", "robust_rmse"],
    );
    for p in &report.params {
        t.row(vec![
            p.name.clone(),
            num(p.truth),
            num(p.mean_bias),
            num(p.mc_se),
            num(p.rmse),
            num(p.robust_rmse),
        ]);
    }
    let text = t.render();
    Ok((report, text))
}

#[derive(Debug, Serialize)]
pub struct PretestReport {
    pub cell_counts: [usize; 4],
    pub tests: Vec<LrTest>,
}

pub fn pretest(cfg: &RunConfig) -> Result<(PretestReport, String), CliError> {
    let data = load(cfg)?;
    let sets = data.observation_sets()?;
    let fits = fit_all(cfg, &sets)?;
    let opts = fit_options(cfg);
    let mut tests = Vec::new();
    for &r in &cfg.restrictions {
        if r == ordcic::estimator::PretrendRestriction::ConsumptionAndReporting && !cfg.reporting {
            continue;
        }
        tests.push(pretrend_lr_test(
            [&sets[0], &sets[1], &sets[2], &sets[3]],
            [&fits[0], &fits[1], &fits[2], &fits[3]],
            r,
            &opts,
        )?);
    }
    let mut t = Table::new("pre-trend likelihood-ratio tests", &["restriction", "statistic", "df", "p_value"]);
    for x in &tests {
        let name = match x.restriction {
            ordcic::estimator::PretrendRestriction::Consumption => "consumption",
            ordcic::estimator::PretrendRestriction::ConsumptionAndReporting => "consumption+reporting",
        };
        t.row(vec![name.into(), num(x.statistic), x.df.to_string(), num(x.p_value)]);
    }
    let report = PretestReport {
        cell_counts: data.counts(),
        tests,
    };
    Ok((report, t.render()))
}
