//! NaN counting under sparse validity masks, for both variance estimators.
//!
//! Each trial draws a Bernoulli mask over the map, draws ground-truth and
//! predicted depths on the masked pixels (draws off the mask never influence
//! the result, so they are skipped), and evaluates the var-style loss once
//! per estimator. A pixel is valid when the mask bit is set and both depths
//! are positive, so the valid count n is Binomial(pixels, rate * P(gt > 0) *
//! P(pred > 0)) exactly.
//!
//! With the skip guard off (the default), n = 0 trials count as NaN for both
//! estimators, mirroring a variance call on an empty tensor. The runner also
//! cross-checks the structural NaN conditions per trial — unbiased NaN iff
//! n <= 1, biased NaN iff n = 0 — and reports any violation.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use stablab::losskit::{silog, LogDiffs, LossConfig, LossStyle, VarianceEstimator};
use stablab::fp32lab::log32_shifted;
use stablab::simgen::{dataset_stats, gen_sparse_mask, RngStream};

use crate::config::{ConfigError, VarianceTableConfig};
use crate::report::{Manifest, RateRow, VarianceTableReport};
use crate::RunError;

#[derive(Default, Clone, Copy)]
struct RateAccumulator {
    nan_unbiased: u64,
    nan_biased: u64,
    n0: u64,
    n1: u64,
    skipped: u64,
    violations: u64,
}

impl RateAccumulator {
    fn merge(mut self, other: RateAccumulator) -> RateAccumulator {
        self.nan_unbiased += other.nan_unbiased;
        self.nan_biased += other.nan_biased;
        self.n0 += other.n0;
        self.n1 += other.n1;
        self.skipped += other.skipped;
        self.violations += other.violations;
        self
    }
}

pub fn run_variance_nan_table(
    cfg: &VarianceTableConfig,
    seed: u64,
) -> Result<VarianceTableReport, RunError> {
    cfg.validate()?;
    let stats = dataset_stats(&cfg.dataset).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let epsilon = cfg.epsilon.resolve()?;
    let depth = Normal::new(stats.mean, stats.std).expect("registry stats are finite");
    let unbiased_cfg = LossConfig {
        lambda: cfg.lambda,
        style: LossStyle::Var,
        estimator: VarianceEstimator::Unbiased,
        sqrt_wrap: false,
        epsilon,
    };
    let biased_cfg = LossConfig { estimator: VarianceEstimator::Biased, ..unbiased_cfg };

    let mut rows = Vec::with_capacity(cfg.valid_rates.len());
    for (rate_idx, &rate) in cfg.valid_rates.iter().enumerate() {
        let acc = (0..cfg.trials)
            .into_par_iter()
            .map(|trial| {
                let stream = rate_idx as u64 * cfg.trials + trial;
                let mut rng = RngStream::new(seed, stream).rng();
                let sparse = gen_sparse_mask(cfg.map_size, cfg.map_size, rate, &mut rng);

                let mut diffs = Vec::new();
                for idx in 0..sparse.mask.len() {
                    if !sparse.mask.bit(idx) {
                        continue;
                    }
                    let gt = depth.sample(&mut rng) as f32;
                    let pred = depth.sample(&mut rng) as f32;
                    if gt > 0.0 && pred > 0.0 {
                        diffs.push(log32_shifted(pred, epsilon) - log32_shifted(gt, epsilon));
                    }
                }
                let n = diffs.len();

                let mut acc = RateAccumulator::default();
                if n == 0 {
                    acc.n0 = 1;
                } else if n == 1 {
                    acc.n1 = 1;
                }
                if n == 0 && cfg.skip_guard {
                    acc.skipped = 1;
                    return acc;
                }
                let d = LogDiffs::new(diffs);
                let (unb_nan, bia_nan) = if n == 0 {
                    // no guard: an empty variance evaluates to NaN for both
                    (true, true)
                } else {
                    let unb = silog(&d, &unbiased_cfg).expect("n >= 1");
                    let bia = silog(&d, &biased_cfg).expect("n >= 1");
                    (unb.is_nan, bia.is_nan)
                };
                acc.nan_unbiased = u64::from(unb_nan);
                acc.nan_biased = u64::from(bia_nan);
                if unb_nan != (n <= 1) || bia_nan != (n == 0) {
                    acc.violations = 1;
                }
                acc
            })
            .reduce(RateAccumulator::default, RateAccumulator::merge);

        rows.push(RateRow {
            valid_rate: rate,
            trials: cfg.trials,
            nan_unbiased: acc.nan_unbiased,
            nan_biased: acc.nan_biased,
            n0_trials: acc.n0,
            n1_trials: acc.n1,
            skipped: acc.skipped,
            structural_violations: acc.violations,
        });
    }

    let manifest = Manifest::new("sim-variance-nan", seed, cfg);
    Ok(VarianceTableReport { manifest, rows })
}

/// Per-pixel probability that a drawn pixel is valid: the mask bit times the
/// probability that both depth draws land positive. Used by the binomial
/// oracle in the verification suites.
pub fn effective_valid_probability(rate: f64, mean: f64, std: f64) -> f64 {
    let p_positive = normal_cdf(mean / std);
    rate * p_positive * p_positive
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc_scalar(-x / std::f64::consts::SQRT_2)
}

// erfc via the Numerical-Recipes Chebyshev fit, |relative error| < 1.2e-7 —
// ample for 3-sigma bands on counts of order 10^3.
fn erfc_scalar(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let ans = t
        * (-z * z - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398
                                    + t * (1.48851587
                                        + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        ans
    } else {
        2.0 - ans
    }
}
