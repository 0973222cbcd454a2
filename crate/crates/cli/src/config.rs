//! Command-line flags, the optional TOML config file, and their resolution
//! into one [`RunConfig`]. Flags override the file, which overrides defaults.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ordcic::bounds::DEFAULT_SMOOTH_KAPPA;
use ordcic::copula::CopulaFamily;
use ordcic::estimator::{CounterfactualCopula, PretrendRestriction};
use ordcic::montecarlo::DesignCase;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "ordcic", version, about = "Changes-in-changes for ordered outcomes with underreporting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the four cells and report treatment effects on the treated.
    Estimate(Flags),
    /// Nonparametric bounds on the counterfactual distribution.
    Bounds(Flags),
    /// Monte Carlo bias and RMSE for a simulation design.
    Simulate(Flags),
    /// Likelihood-ratio test of the changes-in-changes restrictions between two pre-periods.
    Pretest(Flags),
}

impl Command {
    pub fn flags(&self) -> &Flags {
        match self {
            Command::Estimate(f) | Command::Bounds(f) | Command::Simulate(f) | Command::Pretest(f) => f,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Estimate(_) => "estimate",
            Command::Bounds(_) => "bounds",
            Command::Simulate(_) => "simulate",
            Command::Pretest(_) => "pretest",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopulaArg {
    Frank,
    Clayton,
    Independence,
}

impl From<CopulaArg> for CopulaFamily {
    fn from(c: CopulaArg) -> Self {
        match c {
            CopulaArg::Frank => CopulaFamily::Frank,
            CopulaArg::Clayton => CopulaFamily::Clayton,
            CopulaArg::Independence => CopulaFamily::Independence,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CfCopulaArg {
    /// Copy the dependence parameter of cell (1,0).
    Cell10,
    /// Copy the dependence parameter of cell (0,1).
    Cell01,
}

impl From<CfCopulaArg> for CounterfactualCopula {
    fn from(c: CfCopulaArg) -> Self {
        match c {
            CfCopulaArg::Cell10 => CounterfactualCopula::FromCell10,
            CfCopulaArg::Cell01 => CounterfactualCopula::FromCell01,
        }
    }
}

/// Flags shared by all subcommands; each is optional so that the config file
/// and defaults can fill the gaps.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Flags {
    /// Comma-delimited input file with a header row.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Outcome column (levels 0, 1, 2).
    #[arg(long)]
    pub outcome: Option<String>,
    /// Group column (0 or 1).
    #[arg(long)]
    pub group: Option<String>,
    /// Time column (0 or 1).
    #[arg(long)]
    pub time: Option<String>,
    /// Consumption covariate columns.
    #[arg(long, value_delimiter = ',')]
    pub xcols: Option<Vec<String>>,
    /// Reporting covariate columns.
    #[arg(long, value_delimiter = ',')]
    pub zcols: Option<Vec<String>>,
    /// Instrument column with integer codes (bounds).
    #[arg(long)]
    pub instrument: Option<String>,
    /// Copula family.
    #[arg(long, value_enum)]
    pub copula: Option<CopulaArg>,
    /// Target Spearman's rho of the simulated copula.
    #[arg(long, allow_hyphen_values = true)]
    pub rho: Option<f64>,
    /// Source of the counterfactual copula parameter.
    #[arg(long, value_enum)]
    pub counterfactual_copula: Option<CfCopulaArg>,
    /// Fit the consumption equation only.
    #[arg(long)]
    #[serde(default)]
    pub no_reporting: bool,
    /// Random restarts per cell fit.
    #[arg(long)]
    pub random_starts: Option<usize>,
    /// Upper bound on the misreporting probability (bounds).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Smoothing constant of the envelope bounds.
    #[arg(long)]
    pub smooth_kappa: Option<f64>,
    /// Additional smoothing constants to report.
    #[arg(long, value_delimiter = ',')]
    pub kappa_sweep: Option<Vec<f64>>,
    /// Bootstrap replicates; 0 disables the bands.
    #[arg(long = "B", alias = "b")]
    #[serde(rename = "B", alias = "b")]
    pub b: Option<usize>,
    /// One-sided confidence level of the bands.
    #[arg(long)]
    pub level: Option<f64>,
    /// Multiplier of the bootstrap quantile.
    #[arg(long)]
    pub k: Option<f64>,
    /// Simulation design case (0, 1a, 1b, 2a, 2b).
    #[arg(long)]
    pub case: Option<String>,
    /// Observations per replication.
    #[arg(long)]
    pub n: Option<usize>,
    /// Monte Carlo replications.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Master random seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, env = "ORDCIC_THREADS")]
    pub threads: Option<usize>,
    /// TOML file with any of these settings.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Write the structured report to this file.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Print the structured report instead of the text table.
    #[arg(long)]
    #[serde(default)]
    pub json: bool,
}

/// Fully resolved settings, echoed in every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub input: Option<PathBuf>,
    pub outcome: String,
    pub group: String,
    pub time: String,
    pub xcols: Vec<String>,
    pub zcols: Vec<String>,
    pub instrument: Option<String>,
    pub copula: CopulaFamily,
    pub rho: f64,
    pub counterfactual_copula: CounterfactualCopula,
    pub reporting: bool,
    pub random_starts: usize,
    pub alpha: Option<f64>,
    pub smooth_kappa: f64,
    pub kappa_sweep: Vec<f64>,
    #[serde(rename = "B")]
    pub b: usize,
    pub level: f64,
    pub k: f64,
    pub case: DesignCase,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub threads: usize,
    pub output: Option<PathBuf>,
    pub json: bool,
    pub restrictions: Vec<PretrendRestriction>,
}

fn read_file_config(path: &PathBuf) -> Result<Flags, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config file {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("invalid config file {}: {e}", path.display())))
}

/// Merges flags over the config file over defaults and validates the result.
pub fn resolve(command: &Command) -> Result<RunConfig, CliError> {
    let flags = command.flags();
    let file = match &flags.config {
        Some(p) => read_file_config(p)?,
        None => Flags::default(),
    };
    macro_rules! pick {
        ($field:ident) => {
            flags.$field.clone().or_else(|| file.$field.clone())
        };
    }
    let case_text = pick!(case).unwrap_or_else(|| "2a".to_string());
    let case: DesignCase = case_text
        .parse()
        .map_err(|_| CliError::Config(format!("unknown design case '{case_text}'")))?;
    let threads = pick!(threads).unwrap_or(1);
    let cfg = RunConfig {
        command: command.name().to_string(),
        input: pick!(input),
        outcome: pick!(outcome).unwrap_or_else(|| "outcome".into()),
        group: pick!(group).unwrap_or_else(|| "group".into()),
        time: pick!(time).unwrap_or_else(|| "time".into()),
        xcols: pick!(xcols).unwrap_or_default(),
        zcols: pick!(zcols).unwrap_or_default(),
        instrument: pick!(instrument),
        copula: pick!(copula).unwrap_or(CopulaArg::Frank).into(),
        rho: pick!(rho).unwrap_or(-0.5),
        counterfactual_copula: pick!(counterfactual_copula).unwrap_or(CfCopulaArg::Cell10).into(),
        reporting: !(flags.no_reporting || file.no_reporting),
        random_starts: pick!(random_starts).unwrap_or(4),
        alpha: pick!(alpha),
        smooth_kappa: pick!(smooth_kappa).unwrap_or(DEFAULT_SMOOTH_KAPPA),
        kappa_sweep: pick!(kappa_sweep).unwrap_or_default(),
        b: pick!(b).unwrap_or(200),
        level: pick!(level).unwrap_or(0.95),
        k: pick!(k).unwrap_or(1.0),
        case,
        n: pick!(n).unwrap_or(2000),
        reps: pick!(reps).unwrap_or(100),
        seed: pick!(seed).unwrap_or(0),
        threads,
        output: pick!(output),
        json: flags.json || file.json,
        restrictions: vec![PretrendRestriction::Consumption, PretrendRestriction::ConsumptionAndReporting],
    };
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    let data_command = cfg.command != "simulate";
    if data_command && cfg.input.is_none() {
        return Err(CliError::Config(format!("'{}' requires --input", cfg.command)));
    }
    let mut names: Vec<&str> = vec![&cfg.outcome, &cfg.group, &cfg.time];
    names.extend(cfg.xcols.iter().map(String::as_str));
    if cfg.command == "bounds" {
        names.extend(cfg.instrument.as_deref());
    }
    for (i, a) in names.iter().enumerate() {
        if names[..i].contains(a) {
            return Err(CliError::Config(format!("column '{a}' is mapped to more than one role")));
        }
    }
    for z in &cfg.zcols {
        if [&cfg.outcome, &cfg.group, &cfg.time].contains(&z) {
            return Err(CliError::Config(format!("column '{z}' is mapped to more than one role")));
        }
    }
    if cfg.command == "bounds" {
        match cfg.alpha {
            None => return Err(CliError::Config("'bounds' requires --alpha".into())),
            Some(a) if !(0.0..=1.0).contains(&a) => {
                return Err(CliError::Config(format!("--alpha must lie in [0,1], got {a}")))
            }
            _ => {}
        }
        if cfg.instrument.is_none() {
            return Err(CliError::Config("'bounds' requires --instrument".into()));
        }
        if cfg.b != 0 && cfg.b < 200 {
            return Err(CliError::Config(format!("--B must be 0 or at least 200, got {}", cfg.b)));
        }
        if !(cfg.level > 0.5 && cfg.level < 1.0) {
            return Err(CliError::Config(format!("--level must lie in (0.5, 1), got {}", cfg.level)));
        }
        if !(cfg.k >= 0.0) {
            return Err(CliError::Config(format!("--k must be nonnegative, got {}", cfg.k)));
        }
    }
    if !(cfg.smooth_kappa > 0.0) || cfg.kappa_sweep.iter().any(|k| !(*k > 0.0)) {
        return Err(CliError::Config("smoothing constants must be positive".into()));
    }
    if cfg.threads == 0 {
        return Err(CliError::Config("--threads must be at least 1".into()));
    }
    if !(cfg.rho > -1.0 && cfg.rho < 1.0) {
        return Err(CliError::Config(format!("--rho must lie in (-1, 1), got {}", cfg.rho)));
    }
    Ok(())
}
