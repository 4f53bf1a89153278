//! Standard depth-estimation evaluation metrics.
//!
//! These are evaluation-side quantities, not part of the stability
//! reproduction, so they compute in binary64. Threshold metrics use strict
//! inequality `delta < thr`.

use super::LossError;
use crate::grid::{Grid, Mask};

/// The six standard metric families over valid pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// Fraction with max(y/y*, y*/y) < 1.25
    pub delta1: f64,
    /// Fraction with max(y/y*, y*/y) < 1.25^2
    pub delta2: f64,
    /// Fraction with max(y/y*, y*/y) < 1.25^3
    pub delta3: f64,
    /// mean |y - y*| / y*
    pub abs_rel: f64,
    /// mean (y - y*)^2 / y*
    pub sq_rel: f64,
    /// sqrt(mean (y - y*)^2)
    pub rmse: f64,
    /// sqrt(mean (ln y - ln y*)^2)
    pub rmse_log: f64,
    /// mean |log10 y - log10 y*|
    pub log10: f64,
}

/// Evaluates all metrics over the masked pixels. Requires at least one valid
/// pixel and positive ground truth on the mask.
pub fn eval_metrics(pred: &Grid, gt: &Grid, mask: &Mask) -> Result<Metrics, LossError> {
    if !pred.same_shape(gt) || !mask.matches_grid(pred) {
        return Err(LossError::ShapeMismatch {
            what: "pred/gt/mask",
            a_h: pred.n_h(),
            a_w: pred.n_w(),
            b_h: gt.n_h(),
            b_w: gt.n_w(),
        });
    }
    let n = mask.count();
    if n == 0 {
        return Err(LossError::EmptyInput);
    }
    let thr1 = 1.25f64;
    let thr2 = thr1 * thr1;
    let thr3 = thr2 * thr1;

    let (mut c1, mut c2, mut c3) = (0usize, 0usize, 0usize);
    let mut abs_rel = 0.0;
    let mut sq_rel = 0.0;
    let mut sq = 0.0;
    let mut sq_log = 0.0;
    let mut log10 = 0.0;
    for idx in 0..pred.len() {
        if !mask.bit(idx) {
            continue;
        }
        let y = f64::from(pred.at(idx));
        let t = f64::from(gt.at(idx));
        let ratio = (y / t).max(t / y);
        if ratio < thr1 {
            c1 += 1;
        }
        if ratio < thr2 {
            c2 += 1;
        }
        if ratio < thr3 {
            c3 += 1;
        }
        let err = y - t;
        abs_rel += err.abs() / t;
        sq_rel += err * err / t;
        sq += err * err;
        let log_err = y.ln() - t.ln();
        sq_log += log_err * log_err;
        log10 += (y.log10() - t.log10()).abs();
    }
    let nf = n as f64;
    Ok(Metrics {
        delta1: c1 as f64 / nf,
        delta2: c2 as f64 / nf,
        delta3: c3 as f64 / nf,
        abs_rel: abs_rel / nf,
        sq_rel: sq_rel / nf,
        rmse: (sq / nf).sqrt(),
        rmse_log: (sq_log / nf).sqrt(),
        log10: log10 / nf,
    })
}
