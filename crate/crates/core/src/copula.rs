//! Bivariate copulas: Frank, Clayton and independence.
//!
//! Clayton is used on `theta in [-1, inf) \ {0}`; the negative branch is the
//! plain generator with a zero region below the curve `u^-theta + v^-theta = 1`
//! rather than a rotated copula. Frank switches to a third-order series in
//! `theta` for `|theta| < 1e-4`, where the closed form loses precision.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::open_unit;
use crate::{Error, Result};

const FRANK_SERIES_CUTOFF: f64 = 1e-4;
/// Below this magnitude the Frank copula is evaluated as independence.
const FRANK_INDEPENDENCE_CUTOFF: f64 = 1e-8;
const CLAYTON_SERIES_CUTOFF: f64 = 1e-7;
/// Quadrature nodes per axis used by [`spearman_rho`].
pub const SPEARMAN_NODES: usize = 160;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopulaFamily {
    Frank,
    Clayton,
    Independence,
}

impl std::str::FromStr for CopulaFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "frank" => Ok(Self::Frank),
            "clayton" => Ok(Self::Clayton),
            "independence" | "indep" => Ok(Self::Independence),
            other => Err(Error::Domain(format!("unknown copula family '{other}'"))),
        }
    }
}

impl std::fmt::Display for CopulaFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Self::Frank => "frank",
            Self::Clayton => "clayton",
            Self::Independence => "independence",
        };
        f.write_str(name)
    }
}

/// Copula family plus dependence parameter. `theta` is ignored for
/// independence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CopulaSpec {
    pub family: CopulaFamily,
    pub theta: f64,
}

/// Copula value and its partial derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CopulaEval {
    pub c: f64,
    pub du: f64,
    pub dv: f64,
    pub dtheta: f64,
}

impl CopulaSpec {
    pub fn new(family: CopulaFamily, theta: f64) -> Result<Self> {
        let spec = Self { family, theta };
        spec.validate()?;
        Ok(spec)
    }

    pub fn independence() -> Self {
        Self {
            family: CopulaFamily::Independence,
            theta: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.family {
            CopulaFamily::Independence => Ok(()),
            CopulaFamily::Frank if self.theta.is_finite() => Ok(()),
            CopulaFamily::Clayton if self.theta.is_finite() && self.theta >= -1.0 && self.theta != 0.0 => {
                Ok(())
            }
            _ => Err(Error::Domain(format!(
                "theta {} outside the admissible range of the {} copula",
                self.theta, self.family
            ))),
        }
    }

    /// Whether the family carries a free dependence parameter.
    pub fn has_theta(&self) -> bool {
        self.family != CopulaFamily::Independence
    }

    /// `C(u, v)` for a validated spec.
    pub fn cdf(&self, u: f64, v: f64) -> f64 {
        self.eval(u, v).c
    }

    /// `C(u, v)` with derivatives in `u`, `v` and `theta`.
    pub fn eval(&self, u: f64, v: f64) -> CopulaEval {
        let u = u.clamp(0.0, 1.0);
        let v = v.clamp(0.0, 1.0);
        match self.family {
            CopulaFamily::Independence => CopulaEval {
                c: u * v,
                du: v,
                dv: u,
                dtheta: 0.0,
            },
            CopulaFamily::Frank => frank_eval(self.theta, u, v),
            CopulaFamily::Clayton => clayton_eval(self.theta, u, v),
        }
    }

    /// Solves `dC/du(u, v) = w` for `v`: the conditional quantile of the
    /// second coordinate given the first.
    pub fn conditional_inverse(&self, u: f64, w: f64) -> f64 {
        match self.family {
            CopulaFamily::Independence => w,
            CopulaFamily::Frank => frank_cond_inverse(self.theta, u, w),
            CopulaFamily::Clayton => {
                let v = clayton_cond_inverse(self.theta, u, w);
                if v.is_finite() && (0.0..=1.0).contains(&v) {
                    v
                } else {
                    self.bisect_conditional(u, w)
                }
            }
        }
    }

    fn bisect_conditional(&self, u: f64, w: f64) -> f64 {
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if self.eval(u, mid).du < w {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// `C(u, v)` with range checks on the spec and arguments.
pub fn copula_cdf(spec: &CopulaSpec, u: f64, v: f64) -> Result<f64> {
    spec.validate()?;
    if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
        return Err(Error::Domain(format!(
            "copula arguments must lie in [0,1], got ({u}, {v})"
        )));
    }
    Ok(spec.cdf(u, v))
}

fn frank_eval(theta: f64, u: f64, v: f64) -> CopulaEval {
    if theta.abs() < FRANK_SERIES_CUTOFF {
        let mut out = frank_series(theta, u, v);
        if theta.abs() <= FRANK_INDEPENDENCE_CUTOFF {
            out.c = u * v;
        }
        return out;
    }
    let t = theta;
    let eu = (-t * u).exp();
    let ev = (-t * v).exp();
    let a = (-t * u).exp_m1();
    let b = (-t * v).exp_m1();
    let c = (-t).exp_m1();
    // c + a*b as a sum of two same-signed terms, free of cancellation when
    // a*b/c approaches -1.
    let d = -(eu * -b + ev * -(-t * (1.0 - v)).exp_m1());
    let ratio = a * b / c;
    let log_ratio = if ratio.abs() < 0.5 { ratio.ln_1p() } else { (d / c).ln() };
    let value = -log_ratio / t;
    let du = eu * b / d;
    let dv = ev * a / d;
    let da = -u * eu;
    let db = -v * ev;
    let dc = -(-t).exp();
    let dtheta = log_ratio / (t * t) - ((da * b + a * db) - a * b * dc / c) / (d * t);
    CopulaEval {
        c: value.clamp(0.0, u.min(v)),
        du,
        dv,
        dtheta,
    }
}

fn frank_series(t: f64, u: f64, v: f64) -> CopulaEval {
    let (u1, v1) = (u - 1.0, v - 1.0);
    let (u2, v2) = (2.0 * u - 1.0, 2.0 * v - 1.0);
    let uv = u * v;
    let p3 = 6.0 * u * u * v * v - 6.0 * u * u * v + u * u - 6.0 * u * v * v + 6.0 * u * v - u + v * v - v;
    let c1 = uv * u1 * v1 / 2.0;
    let c2 = uv * u1 * u2 * v1 * v2 / 12.0;
    let c3 = uv * u1 * v1 * p3 / 24.0;
    let value = uv + t * (c1 + t * (c2 + t * c3));
    let dtheta = c1 + t * (2.0 * c2 + t * 3.0 * c3);
    let du = frank_series_du(t, u, v);
    let dv = frank_series_du(t, v, u);
    CopulaEval {
        c: value,
        du,
        dv,
        dtheta,
    }
}

fn frank_series_du(t: f64, u: f64, v: f64) -> f64 {
    let v1 = v - 1.0;
    let v2 = 2.0 * v - 1.0;
    let u2 = 2.0 * u - 1.0;
    let d1 = v * u2 * v1 / 2.0;
    let d2 = v * v1 * v2 * (6.0 * u * u - 6.0 * u + 1.0) / 12.0;
    let q = 12.0 * u * u * v * v - 12.0 * u * u * v + 2.0 * u * u - 12.0 * u * v * v + 12.0 * u * v - 2.0 * u
        + v * v
        - v;
    let d3 = v * u2 * v1 * q / 24.0;
    v + t * (d1 + t * (d2 + t * d3))
}

fn frank_cond_inverse(theta: f64, u: f64, w: f64) -> f64 {
    if theta.abs() < 1e-12 {
        return w;
    }
    let t = theta;
    if t.abs() < 1.0 {
        let num = w * (-t).exp_m1();
        let den = w + (1.0 - w) * (-t * u).exp();
        return (-(num / den).ln_1p() / t).clamp(0.0, 1.0);
    }
    // 1 + num/den = ((1-w) e^{-tu} + w e^{-t}) / (w + (1-w) e^{-tu}), on the
    // log scale so that neither side cancels for large |t|.
    let log_add = |a: f64, b: f64| {
        let m = a.max(b);
        m + ((a - m).exp() + (b - m).exp()).ln()
    };
    let (lw, l1w) = (w.ln(), (-w).ln_1p());
    let top = log_add(l1w - t * u, lw - t);
    let bottom = log_add(lw, l1w - t * u);
    ((bottom - top) / t).clamp(0.0, 1.0)
}

fn clayton_eval(theta: f64, u: f64, v: f64) -> CopulaEval {
    if u <= 0.0 || v <= 0.0 {
        return CopulaEval {
            c: 0.0,
            du: if u <= 0.0 && theta > 0.0 && v > 0.0 { 1.0 } else { 0.0 },
            dv: if v <= 0.0 && theta > 0.0 && u > 0.0 { 1.0 } else { 0.0 },
            dtheta: 0.0,
        };
    }
    if theta.abs() < CLAYTON_SERIES_CUTOFF {
        let (a, b) = (u.ln(), v.ln());
        let uv = u * v;
        return CopulaEval {
            c: uv * (1.0 + theta * a * b),
            du: v * (1.0 + theta * b * (a + 1.0)),
            dv: u * (1.0 + theta * a * (b + 1.0)),
            dtheta: uv * a * b,
        };
    }
    let (lnu, lnv) = (u.ln(), v.ln());
    let lu = -theta * lnu;
    let lv = -theta * lnv;
    // S = u^-theta + v^-theta - 1, evaluated on a shifted log scale to avoid
    // overflow for large positive theta.
    let m = lu.max(lv).max(0.0);
    let scaled = (lu - m).exp() + (lv - m).exp() - (-m).exp();
    if scaled <= 0.0 {
        return CopulaEval {
            c: 0.0,
            du: 0.0,
            dv: 0.0,
            dtheta: 0.0,
        };
    }
    let ln_s = m + scaled.ln();
    let value = (-ln_s / theta).exp();
    let du = ((-theta - 1.0) * lnu + (-1.0 / theta - 1.0) * ln_s).exp();
    let dv = ((-theta - 1.0) * lnv + (-1.0 / theta - 1.0) * ln_s).exp();
    let ds_over_s = (-(lu - m).exp() * lnu - (lv - m).exp() * lnv) / scaled;
    let dlog = ln_s / (theta * theta) - ds_over_s / theta;
    CopulaEval {
        c: value.min(u.min(v)),
        du,
        dv,
        dtheta: value * dlog,
    }
}

fn clayton_cond_inverse(theta: f64, u: f64, w: f64) -> f64 {
    if theta.abs() < 1e-12 {
        return w;
    }
    if theta <= -1.0 + 1e-12 {
        return (1.0 - u).clamp(0.0, 1.0);
    }
    let a = (w.ln() * (-theta / (1.0 + theta))).exp() - 1.0;
    let lu = -theta * u.ln();
    // ln T with T = a * u^-theta + 1.
    let ln_t = if theta > 0.0 && lu > 30.0 {
        let x = a.ln() + lu;
        x + (-x).exp().ln_1p()
    } else {
        (a * lu.exp()).ln_1p()
    };
    (-ln_t / theta).exp()
}

/// Gauss-Legendre nodes and weights on [0, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z_new = z - p1 / dp;
            let done = (z_new - z).abs() < 1e-15;
            z = z_new;
            if done {
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = 0.5 * (1.0 - z);
        nodes[n - 1 - i] = 0.5 * (1.0 + z);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

/// Spearman's rho, `12 * int C - 3`, by tensor-product Gauss-Legendre
/// quadrature with [`SPEARMAN_NODES`] nodes per axis.
pub fn spearman_rho(spec: &CopulaSpec) -> f64 {
    spearman_rho_with_nodes(spec, SPEARMAN_NODES)
}

/// Spearman's rho with a caller-chosen number of nodes per axis.
pub fn spearman_rho_with_nodes(spec: &CopulaSpec, n: usize) -> f64 {
    if spec.family == CopulaFamily::Independence {
        return 0.0;
    }
    let (x, w) = gauss_legendre(n);
    let mut total = 0.0;
    let negative_clayton = spec.family == CopulaFamily::Clayton && spec.theta < 0.0;
    for (ui, wi) in x.iter().zip(&w) {
        // The negative Clayton copula vanishes below v0(u); integrate only
        // where it is smooth.
        let v0 = if negative_clayton {
            let t = -spec.theta;
            (1.0 - ui.powf(t)).max(0.0).powf(1.0 / t)
        } else {
            0.0
        };
        let span = 1.0 - v0;
        let mut inner = 0.0;
        for (vj, wj) in x.iter().zip(&w) {
            inner += wj * spec.cdf(*ui, v0 + span * vj);
        }
        total += wi * span * inner;
    }
    (12.0 * total - 3.0).clamp(-1.0, 1.0)
}

/// Dependence parameter whose Spearman's rho equals `target_rho`.
///
/// A zero target yields the independence copula.
pub fn calibrate_theta(family: CopulaFamily, target_rho: f64) -> Result<CopulaSpec> {
    if !target_rho.is_finite() || target_rho <= -1.0 || target_rho >= 1.0 {
        return Err(Error::Domain(format!(
            "target Spearman rho {target_rho} outside (-1, 1)"
        )));
    }
    if target_rho == 0.0 {
        return Ok(CopulaSpec::independence());
    }
    let rho = |theta: f64| spearman_rho(&CopulaSpec { family, theta });
    let (mut lo, mut hi) = match family {
        CopulaFamily::Independence => {
            return Err(Error::Domain(
                "the independence copula only attains Spearman rho 0".into(),
            ))
        }
        CopulaFamily::Frank => {
            let limit = 300.0;
            let mut edge = if target_rho > 0.0 { 1.0 } else { -1.0 };
            while (rho(edge) - target_rho) * target_rho.signum() < 0.0 {
                edge *= 2.0;
                if edge.abs() > limit {
                    return Err(Error::Domain(format!(
                        "Spearman rho {target_rho} not attainable by the Frank copula with |theta| <= {limit}"
                    )));
                }
            }
            if edge > 0.0 {
                (0.0, edge)
            } else {
                (edge, 0.0)
            }
        }
        CopulaFamily::Clayton => {
            if target_rho < 0.0 {
                (-1.0, 0.0)
            } else {
                let limit = 500.0;
                let mut edge = 1.0;
                while rho(edge) < target_rho {
                    edge *= 2.0;
                    if edge > limit {
                        return Err(Error::Domain(format!(
                            "Spearman rho {target_rho} not attainable by the Clayton copula with theta <= {limit}"
                        )));
                    }
                }
                (0.0, edge)
            }
        }
    };
    // Spearman's rho is increasing in theta for both families.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi || hi - lo < 1e-13 {
            break;
        }
        if mid == 0.0 || rho(mid) < target_rho {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    CopulaSpec::new(family, 0.5 * (lo + hi))
}

/// One draw `(u, v)` from the copula by the conditional-distribution method.
pub fn sample_pair<R: Rng + ?Sized>(spec: &CopulaSpec, rng: &mut R) -> (f64, f64) {
    let u = open_unit(rng);
    let w = open_unit(rng);
    let v = spec.conditional_inverse(u, w);
    (u, v.clamp(1e-300, 1.0 - 1e-16))
}
