//! The scale-invariant log loss family.
//!
//! Both implementation styles are provided: the mean-style form
//! `E[d^2] - lambda * (E[d])^2` and the var-style form
//! `Var[d] + (1 - lambda) * (E[d])^2`, the latter with either the biased
//! (divide by n) or the Bessel-corrected (divide by n-1) variance estimator.
//! The two styles agree only under the biased estimator; the unbiased
//! estimator yields a different loss for small n and NaN at n = 1.
//!
//! The reproduction path computes in binary32; reductions use Kahan
//! compensation over a fixed left-to-right order, with the compensation
//! dropped once the running sum leaves the finite range so inf/NaN propagate
//! exactly as in a plain sum. Binary64 reference routes live in [`oracle`]
//! and back `estimator_gap` plus the verification tests; they never feed the
//! binary32 path. Empty input is an explicit error at this boundary, never a
//! silent NaN; runners treat it as a skipped batch.

mod metrics;
pub mod oracle;

pub use metrics::{eval_metrics, Metrics};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fp32lab::log32_shifted;
use crate::grid::{Grid, Mask};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("no valid pixels (n = 0)")]
    EmptyInput,
    #[error("need at least {needed} valid pixels, got {got}")]
    TooFewPixels { needed: usize, got: usize },
    #[error("{what} shapes differ: {a_h}x{a_w} vs {b_h}x{b_w}")]
    ShapeMismatch { what: &'static str, a_h: usize, a_w: usize, b_h: usize, b_w: usize },
    #[error("lambda must lie in [0, 1], got {0}")]
    InvalidLambda(f32),
    #[error("epsilon must be a finite value >= 0, got {0}")]
    InvalidEpsilon(f32),
    #[error("log-diff count {diffs} does not match valid-pixel count {valid}")]
    DiffCountMismatch { diffs: usize, valid: usize },
}

/// Which algebraic form of the loss is evaluated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossStyle {
    /// `E[d^2] - lambda * (E[d])^2`
    #[default]
    Mean,
    /// `Var[d] + (1 - lambda) * (E[d])^2`
    Var,
}

/// Divisor used by the var-style variance computation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceEstimator {
    /// Sum of squared deviations divided by n.
    #[default]
    Biased,
    /// Bessel-corrected: divided by n - 1. NaN at n = 1.
    Unbiased,
}

/// Full configuration of one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f32,
    pub style: LossStyle,
    /// Only consulted when `style` is var-style.
    pub estimator: VarianceEstimator,
    /// Evaluate sqrt(D) instead of D.
    pub sqrt_wrap: bool,
    /// Shift added inside both logarithms of the log-diff.
    pub epsilon: f32,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.85,
            style: LossStyle::Mean,
            estimator: VarianceEstimator::Biased,
            sqrt_wrap: false,
            epsilon: 0.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.lambda >= 0.0 && self.lambda <= 1.0) {
            return Err(LossError::InvalidLambda(self.lambda));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(LossError::InvalidEpsilon(self.epsilon));
        }
        Ok(())
    }
}

/// Per-pixel log differences `d_i = log(y_i + eps) - log(y*_i + eps)` over the
/// valid pixels of a map, in row-major mask order. `n()` is the valid count.
///
/// Entries may be infinite (propagated from a log of zero); construction from
/// finite inputs with `y + eps > 0` yields finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct LogDiffs {
    values: Vec<f32>,
}

impl LogDiffs {
    pub fn new(values: Vec<f32>) -> Self {
        LogDiffs { values }
    }

    pub fn from_slice(values: &[f32]) -> Self {
        LogDiffs { values: values.to_vec() }
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Append another block of diffs (used to join the maps of a mini-batch
    /// into one loss input).
    pub fn extend_from(&mut self, other: &LogDiffs) {
        self.values.extend_from_slice(&other.values);
    }
}

/// Result of one loss evaluation. `is_nan` is true iff `value` is NaN;
/// infinities propagate without setting it, so log-of-zero saturation stays
/// distinguishable from inf - inf cancellation.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f32,
    pub is_nan: bool,
    /// Optional d-level gradient, length n when present.
    pub grad_d: Option<Vec<f32>>,
}

fn check_same_shape(what: &'static str, a: &Grid, b: &Grid) -> Result<(), LossError> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(LossError::ShapeMismatch {
            what,
            a_h: a.n_h(),
            a_w: a.n_w(),
            b_h: b.n_h(),
            b_w: b.n_w(),
        })
    }
}

/// Masked per-pixel log differences between a prediction and its ground truth.
///
/// Both logarithms go through [`log32_shifted`], so a zero prediction with
/// `epsilon = 0` contributes a -inf entry. n = 0 is allowed here and rejected
/// by the loss itself.
pub fn log_diff(pred: &Grid, gt: &Grid, mask: &Mask, epsilon: f32) -> Result<LogDiffs, LossError> {
    check_same_shape("pred/gt", pred, gt)?;
    if !mask.matches_grid(pred) {
        return Err(LossError::ShapeMismatch {
            what: "pred/mask",
            a_h: pred.n_h(),
            a_w: pred.n_w(),
            b_h: mask.n_h(),
            b_w: mask.n_w(),
        });
    }
    let mut values = Vec::new();
    for idx in 0..pred.len() {
        if mask.bit(idx) {
            let d = log32_shifted(pred.at(idx), epsilon) - log32_shifted(gt.at(idx), epsilon);
            values.push(d);
        }
    }
    Ok(LogDiffs::new(values))
}

// Kahan-compensated binary32 sum over a fixed left-to-right order. The
// compensation is dropped as soon as the running sum leaves the finite range
// so that inf/NaN propagate exactly as in a plain sequential sum.
fn kahan32(values: impl Iterator<Item = f32>) -> f32 {
    let mut sum = 0.0f32;
    let mut c = 0.0f32;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = if t.is_finite() { (t - sum) - y } else { 0.0 };
        sum = t;
    }
    sum
}

fn sum32(values: &[f32]) -> f32 {
    kahan32(values.iter().copied())
}

/// Binary32 variance of the log-diffs with the chosen estimator.
///
/// The unbiased estimator divides by n - 1 and therefore returns NaN (0/0)
/// at n = 1. n = 0 is an error for both.
pub fn variance(d: &LogDiffs, estimator: VarianceEstimator) -> Result<f32, LossError> {
    let n = d.n();
    if n == 0 {
        return Err(LossError::EmptyInput);
    }
    let nf = n as f32;
    let mean = sum32(d.values()) / nf;
    let ss = kahan32(d.values().iter().map(|&v| {
        let dev = v - mean;
        dev * dev
    }));
    let denom = match estimator {
        VarianceEstimator::Biased => nf,
        VarianceEstimator::Unbiased => nf - 1.0,
    };
    Ok(ss / denom)
}

fn silog_value(d: &LogDiffs, cfg: &LossConfig) -> f32 {
    let nf = d.n() as f32;
    let vals = d.values();
    let mean = sum32(vals) / nf;
    let base = match cfg.style {
        LossStyle::Mean => {
            let mean_sq = kahan32(vals.iter().map(|&v| v * v)) / nf;
            mean_sq - cfg.lambda * (mean * mean)
        }
        LossStyle::Var => {
            let var = variance(d, cfg.estimator).expect("n >= 1 checked by caller");
            var + (1.0 - cfg.lambda) * (mean * mean)
        }
    };
    if cfg.sqrt_wrap {
        base.sqrt()
    } else {
        base
    }
}

/// Scale-invariant log loss over the given log-diffs.
///
/// NaN and infinity propagate into the output (with `is_nan` set for NaN
/// only); an empty input is an error, never a silent NaN.
pub fn silog(d: &LogDiffs, cfg: &LossConfig) -> Result<LossOutput, LossError> {
    cfg.validate()?;
    if d.is_empty() {
        return Err(LossError::EmptyInput);
    }
    let value = silog_value(d, cfg);
    Ok(LossOutput { value, is_nan: value.is_nan(), grad_d: None })
}

/// Analytic gradient of the configured loss with respect to each d_i,
/// computed in binary32.
///
/// For the plain loss, dD/dd_i = (2/n) d_i - (2 lambda / n^2) sum_j d_j; the
/// var-style biased form takes the identical code path, so the two equivalent
/// formulations produce bit-identical gradients. The sqrt wrapper multiplies
/// by 1/(2 sqrt(D)); at D = 0 the entries become NaN/inf and are reported,
/// not masked.
pub fn grad_silog(d: &LogDiffs, cfg: &LossConfig) -> Result<Vec<f32>, LossError> {
    cfg.validate()?;
    let n = d.n();
    if n == 0 {
        return Err(LossError::EmptyInput);
    }
    let nf = n as f32;
    let vals = d.values();
    let sum = sum32(vals);
    let mut grad: Vec<f32> = match (cfg.style, cfg.estimator) {
        (LossStyle::Mean, _) | (LossStyle::Var, VarianceEstimator::Biased) => {
            let mean_term = 2.0 * cfg.lambda / (nf * nf) * sum;
            vals.iter().map(|&v| 2.0 / nf * v - mean_term).collect()
        }
        (LossStyle::Var, VarianceEstimator::Unbiased) => {
            // d/dd_i [ Var'[d] + (1-lambda) mean^2 ]
            let mean = sum / nf;
            let mean_term = 2.0 * (1.0 - cfg.lambda) / nf * mean;
            vals.iter()
                .map(|&v| 2.0 / (nf - 1.0) * (v - mean) + mean_term)
                .collect()
        }
    };
    if cfg.sqrt_wrap {
        let plain = LossConfig { sqrt_wrap: false, ..*cfg };
        let base = silog_value(d, &plain);
        let scale = 0.5 / base.sqrt();
        for g in &mut grad {
            *g *= scale;
        }
    }
    Ok(grad)
}

/// Binary64 gap between the var-style unbiased loss and the mean-style loss,
/// which equals `Var_biased[d] / (n - 1)` in exact arithmetic.
pub fn estimator_gap(d: &LogDiffs, lambda: f64) -> Result<f64, LossError> {
    if d.n() < 2 {
        return Err(LossError::TooFewPixels { needed: 2, got: d.n() });
    }
    let vals: Vec<f64> = d.values().iter().map(|&v| f64::from(v)).collect();
    let unbiased = oracle::var_style_f64(&vals, lambda, VarianceEstimator::Unbiased);
    let mean_style = oracle::mean_style_f64(&vals, lambda);
    Ok(unbiased - mean_style)
}
