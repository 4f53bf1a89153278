//! Full-pipeline gradient verification.
//!
//! The binary32 analytic backward pass (convolution -> sigmoid head ->
//! log-diff -> loss) is compared against central finite differences of an
//! independent binary64 forward evaluation. The binary64 pipeline here is a
//! separate nested-loop implementation and must stay independent of the
//! binary32 path it checks.

use rand::Rng;
use serde::Serialize;

use stablab::grid::{Grid, Mask};
use stablab::headnet::{init_weights, ConvDims, FeatureMap, InitScheme};
use stablab::losskit::{oracle, LossConfig, LossStyle, VarianceEstimator};
use stablab::simgen::{dataset_stats, RngStream};

use crate::config::ConfigError;
use crate::pipeline::{loss_and_backward, Batch, LossReduction};
use crate::RunError;

/// Weight-level agreement threshold on the worst relative error.
pub const WEIGHT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub trials: usize,
    pub seed: u64,
    /// Worst relative error over all trials and weight entries, normalized by
    /// the finite-difference gradient's infinity norm.
    pub worst_rel_error: f64,
    pub worst_trial: usize,
    pub tolerance: f64,
    pub pass: bool,
}

/// Binary64 reference loss of the full pipeline for one map.
fn ref_loss_f64(
    weights: &[f64],
    bias: f64,
    dims: ConvDims,
    max_depth: f64,
    x: &FeatureMap,
    gt: &Grid,
    mask: &Mask,
    cfg: &LossConfig,
) -> f64 {
    let (k_h, k_w, n_in) = (dims.k_h, dims.k_w, dims.n_in);
    let pad_h = (k_h as i64 - 1) / 2;
    let pad_w = (k_w as i64 - 1) / 2;
    let (n_h, n_w) = (x.n_h() as i64, x.n_w() as i64);
    let eps = f64::from(cfg.epsilon);
    let mut diffs = Vec::new();
    for oi in 0..n_h {
        for oj in 0..n_w {
            if !mask.get(oi as usize, oj as usize) {
                continue;
            }
            let mut z = bias;
            for ki in 0..k_h as i64 {
                for kj in 0..k_w as i64 {
                    let ii = oi + ki - pad_h;
                    let jj = oj + kj - pad_w;
                    if ii < 0 || jj < 0 || ii >= n_h || jj >= n_w {
                        continue;
                    }
                    for c in 0..n_in {
                        z += weights[((ki as usize) * k_w + kj as usize) * n_in + c]
                            * f64::from(x.get(ii as usize, jj as usize, c));
                    }
                }
            }
            let y = max_depth / (1.0 + (-z).exp());
            let t = f64::from(gt.get(oi as usize, oj as usize));
            diffs.push((y + eps).ln() - (t + eps).ln());
        }
    }
    oracle::silog_f64(&diffs, f64::from(cfg.lambda), cfg.style, cfg.estimator, cfg.sqrt_wrap)
}

/// Runs `trials` random small head configurations and reports the worst
/// relative disagreement between the analytic binary32 gradient and binary64
/// central finite differences. Deterministic in the seed.
pub fn run_gradient_check(trials: usize, seed: u64) -> Result<GradCheckReport, RunError> {
    if trials == 0 {
        return Err(RunError::Config(ConfigError::Invalid(
            "grad-check needs trials >= 1".to_string(),
        )));
    }
    let dims = ConvDims::square(3, 4);
    let stats = dataset_stats("KITTI").expect("registry entry");
    let max_depth = 80.0f32;
    let mut worst = 0.0f64;
    let mut worst_trial = 0usize;

    for trial in 0..trials {
        let mut rng = RngStream::new(seed, trial as u64).rng();
        // redraw until the loss is bounded away from zero so the sqrt factor
        // stays well conditioned for differencing
        let (head, x, gt, mask, cfg) = loop {
            let head = init_weights(InitScheme::Normal { sigma: 0.3 }, dims, max_depth, &mut rng);
            let x = stablab::simgen::gen_features(3, 3, 4, &mut rng);
            let (gt, mask) = stablab::simgen::gen_ground_truth(&stats, 3, 3, &mut rng);
            let style = if rng.gen_bool(0.5) { LossStyle::Mean } else { LossStyle::Var };
            let estimator = if style == LossStyle::Var && rng.gen_bool(0.5) {
                VarianceEstimator::Unbiased
            } else {
                VarianceEstimator::Biased
            };
            let cfg = LossConfig {
                lambda: rng.gen_range(0.0..=1.0),
                style,
                estimator,
                sqrt_wrap: rng.gen_bool(0.5),
                epsilon: 1e-6,
            };
            if mask.count() < 2 {
                continue;
            }
            let w64: Vec<f64> = head.weights.iter().map(|&w| f64::from(w)).collect();
            let plain = LossConfig { sqrt_wrap: false, ..cfg };
            let d = ref_loss_f64(&w64, f64::from(head.bias), dims, f64::from(max_depth), &x, &gt, &mask, &plain);
            if d > 0.05 {
                break (head, x, gt, mask, cfg);
            }
        };

        let batch = Batch {
            features: vec![x.clone()],
            gt: vec![gt.clone()],
            masks: vec![mask.clone()],
        };
        let analytic = loss_and_backward(&head, &batch, &cfg, LossReduction::Joint, trial as u64)
            .expect("mask has valid pixels")
            .grads;

        let w64: Vec<f64> = head.weights.iter().map(|&w| f64::from(w)).collect();
        let b64 = f64::from(head.bias);
        let h = 1e-5;
        let mut fd = Vec::with_capacity(w64.len() + 1);
        for idx in 0..w64.len() {
            let mut plus = w64.clone();
            plus[idx] += h;
            let mut minus = w64.clone();
            minus[idx] -= h;
            let lp = ref_loss_f64(&plus, b64, dims, f64::from(max_depth), &x, &gt, &mask, &cfg);
            let lm = ref_loss_f64(&minus, b64, dims, f64::from(max_depth), &x, &gt, &mask, &cfg);
            fd.push((lp - lm) / (2.0 * h));
        }
        let lp = ref_loss_f64(&w64, b64 + h, dims, f64::from(max_depth), &x, &gt, &mask, &cfg);
        let lm = ref_loss_f64(&w64, b64 - h, dims, f64::from(max_depth), &x, &gt, &mask, &cfg);
        fd.push((lp - lm) / (2.0 * h));

        let scale = fd.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1e-12);
        let analytic_flat: Vec<f64> = analytic
            .weights
            .iter()
            .chain(std::iter::once(&analytic.bias))
            .map(|&v| f64::from(v))
            .collect();
        for (a, f) in analytic_flat.iter().zip(&fd) {
            let rel = (a - f).abs() / scale;
            if rel > worst {
                worst = rel;
                worst_trial = trial;
            }
        }
    }

    Ok(GradCheckReport {
        trials,
        seed,
        worst_rel_error: worst,
        worst_trial,
        tolerance: WEIGHT_TOLERANCE,
        pass: worst < WEIGHT_TOLERANCE,
    })
}
