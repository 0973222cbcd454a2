//! Scalar distribution functions and discrete CDFs with their generalized
//! inverses.
//!
//! The left inverse is `F^{-1}(q) = inf{y : q <= F(y)}` with `inf {} = +inf`;
//! the right inverse is `F^{(-1)}(q) = sup{y : q >= F(y)}` with
//! `sup {} = -inf`. Both return an [`ExtLevel`], and [`cdf_at`] evaluates a CDF
//! at such a level using `F(-inf) = 0` and `F(+inf) = 1`.

use serde::{Deserialize, Serialize};
use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::{Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal distribution function.
pub fn std_normal_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> f64 {
    if x.is_infinite() {
        return 0.0;
    }
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal quantile for `p` in (0, 1).
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "normal quantile requires p in (0,1), got {p}"
        )));
    }
    let mut x = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    // Halley refinement against the CDF; work in the tail closest to p.
    for _ in 0..3 {
        let pdf = std_normal_pdf(x);
        if pdf <= 0.0 || !x.is_finite() {
            break;
        }
        let err = if p < 0.5 {
            std_normal_cdf(x) - p
        } else {
            (1.0 - p) - std_normal_cdf(-x)
        };
        let step = err / pdf;
        x -= step / (1.0 + 0.5 * x * step);
    }
    Ok(x)
}

/// A level of the extended support `{-inf} ∪ levels ∪ {+inf}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExtLevel {
    NegInf,
    Level(usize),
    PosInf,
}

/// Finite-support cumulative distribution function on ordered integer levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteCdf {
    levels: Vec<usize>,
    cum_probs: Vec<f64>,
}

impl DiscreteCdf {
    /// Validates that levels increase strictly and `cum_probs` is a CDF.
    pub fn new(levels: Vec<usize>, cum_probs: Vec<f64>) -> Result<Self> {
        if levels.is_empty() || levels.len() != cum_probs.len() {
            return Err(Error::Input(
                "levels and cumulative probabilities must be nonempty and of equal length".into(),
            ));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Input("levels must be strictly increasing".into()));
        }
        if cum_probs.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0 + 1e-12) {
            return Err(Error::Input("cumulative probabilities must lie in [0,1]".into()));
        }
        if cum_probs.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Input("cumulative probabilities must be nondecreasing".into()));
        }
        let last = cum_probs[cum_probs.len() - 1];
        if (last - 1.0).abs() > 1e-12 {
            return Err(Error::Input(format!(
                "final cumulative probability must equal 1, got {last}"
            )));
        }
        Ok(Self { levels, cum_probs })
    }

    /// CDF on the consecutive levels `0..cum_probs.len()`.
    pub fn from_cum_probs(cum_probs: Vec<f64>) -> Result<Self> {
        Self::new((0..cum_probs.len()).collect(), cum_probs)
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn cum_probs(&self) -> &[f64] {
        &self.cum_probs
    }

    /// `F(y)` for any integer `y`, including values off the support.
    pub fn eval(&self, y: i64) -> f64 {
        let mut value = 0.0;
        for (l, p) in self.levels.iter().zip(&self.cum_probs) {
            if (*l as i64) <= y {
                value = *p;
            } else {
                break;
            }
        }
        value
    }

    /// `F` evaluated at an extended level.
    pub fn eval_ext(&self, y: ExtLevel) -> f64 {
        match y {
            ExtLevel::NegInf => 0.0,
            ExtLevel::PosInf => 1.0,
            ExtLevel::Level(l) => self.eval(l as i64),
        }
    }
}

/// Left generalized inverse `inf{y : q <= F(y)}`.
pub fn gen_inverse_left(f: &DiscreteCdf, q: f64) -> ExtLevel {
    left_inverse_values(&f.levels, &f.cum_probs, q)
}

/// Right generalized inverse `sup{y : q >= F(y)}`.
pub fn gen_inverse_right(f: &DiscreteCdf, q: f64) -> ExtLevel {
    right_inverse_values(&f.levels, &f.cum_probs, q)
}

/// Left inverse of an arbitrary value sequence indexed by `levels`.
///
/// The values need not be monotone; smoothed bound functions use this form.
pub fn left_inverse_values(levels: &[usize], values: &[f64], q: f64) -> ExtLevel {
    levels
        .iter()
        .zip(values)
        .filter(|(_, v)| q <= **v)
        .map(|(l, _)| ExtLevel::Level(*l))
        .next()
        .unwrap_or(ExtLevel::PosInf)
}

/// Right inverse of an arbitrary value sequence indexed by `levels`.
pub fn right_inverse_values(levels: &[usize], values: &[f64], q: f64) -> ExtLevel {
    levels
        .iter()
        .zip(values)
        .filter(|(_, v)| q >= **v)
        .map(|(l, _)| ExtLevel::Level(*l))
        .last()
        .unwrap_or(ExtLevel::NegInf)
}

/// Value sequence on consecutive levels `0..values.len()` evaluated at an
/// extended level, with `-inf -> 0` and `+inf -> 1`.
pub fn cdf_at(values: &[f64], y: ExtLevel) -> f64 {
    match y {
        ExtLevel::NegInf => 0.0,
        ExtLevel::PosInf => 1.0,
        ExtLevel::Level(l) => values[l],
    }
}

/// Empirical CDF of a sample of levels in `0..=max_level`.
pub fn empirical_cdf(sample: &[usize], max_level: usize) -> Result<DiscreteCdf> {
    if sample.is_empty() {
        return Err(Error::Input("empirical CDF of an empty sample".into()));
    }
    let mut counts = vec![0usize; max_level + 1];
    for &y in sample {
        if y > max_level {
            return Err(Error::Input(format!(
                "sample value {y} outside levels 0..={max_level}"
            )));
        }
        counts[y] += 1;
    }
    let n = sample.len() as f64;
    let mut acc = 0usize;
    let cum: Vec<f64> = counts
        .iter()
        .map(|c| {
            acc += c;
            acc as f64 / n
        })
        .collect();
    DiscreteCdf::from_cum_probs(cum)
}

/// Sample quantile by linear interpolation between order statistics
/// (Hyndman-Fan type 7). NaN values are ignored.
pub fn sample_quantile(values: &[f64], p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("quantile level {p} outside [0,1]")));
    }
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
    if sorted.is_empty() {
        return Err(Error::Input("quantile of an empty sample".into()));
    }
    sorted.sort_by(f64::total_cmp);
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_limits_and_symmetry() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        assert_eq!(std_normal_cdf(f64::INFINITY), 1.0);
        assert_eq!(std_normal_cdf(f64::NEG_INFINITY), 0.0);
        for x in [0.3, 1.1, 2.7, 5.0] {
            assert!((std_normal_cdf(x) + std_normal_cdf(-x) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn type7_quantiles() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(sample_quantile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(sample_quantile(&v, 0.5).unwrap(), 2.5);
        assert!((sample_quantile(&v, 0.9).unwrap() - 3.7).abs() < 1e-12);
        assert!(sample_quantile(&[], 0.5).is_err());
    }

    #[test]
    fn quantile_domain() {
        assert!(std_normal_quantile(0.0).is_err());
        assert!(std_normal_quantile(1.0).is_err());
        assert!(std_normal_quantile(f64::NAN).is_err());
        assert_eq!(std_normal_quantile(0.5).unwrap(), 0.0);
    }

    #[test]
    fn eval_off_support() {
        let f = DiscreteCdf::new(vec![1, 3], vec![0.4, 1.0]).unwrap();
        assert_eq!(f.eval(0), 0.0);
        assert_eq!(f.eval(2), 0.4);
        assert_eq!(f.eval(7), 1.0);
    }

    #[test]
    fn rejects_invalid_cdfs() {
        assert!(DiscreteCdf::from_cum_probs(vec![0.5, 0.4, 1.0]).is_err());
        assert!(DiscreteCdf::from_cum_probs(vec![0.5, 0.9]).is_err());
        assert!(DiscreteCdf::new(vec![0, 0], vec![0.5, 1.0]).is_err());
    }
}
