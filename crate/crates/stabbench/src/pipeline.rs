//! Shared forward/backward plumbing for the runners: one mini-batch step of
//! the sigmoid head under the scale-invariant log loss, with nonfinite-value
//! scanning in pipeline order.
//!
//! Two batch reductions exist in the wild and both are implemented. `Joint`
//! pools every valid pixel of the batch into one loss (n sums across the
//! mini-batch), the way the loss is applied to a flattened batch tensor.
//! `ImageMean` evaluates the loss per image and averages, the per-sample
//! reduction of ordinary training loops; under the sqrt wrapper it is the
//! more fragile one, since a single image reaching exactly zero loss already
//! divides by zero in the gradient.

use thiserror::Error;

use stablab::grid::{Grid, Mask};
use stablab::headnet::{
    conv_backward_weights, conv_forward, scale_sigmoid, scatter_logit_grad, FeatureMap,
    HeadError, HeadGradient, SigmoidHead,
};
use stablab::losskit::{self, LogDiffs, LossConfig, LossError, LossOutput};
use stablab::simgen::{gen_features, gen_ground_truth, ChaCha8Rng, DatasetStats};

use crate::monitor::{self, NanEvent};

#[derive(Debug, Error)]
pub enum StepError {
    /// No valid pixels anywhere in the batch; callers skip such batches.
    #[error("batch has no valid pixels")]
    EmptyBatch,
    #[error(transparent)]
    Head(#[from] HeadError),
}

impl From<LossError> for StepError {
    fn from(e: LossError) -> Self {
        match e {
            LossError::EmptyInput => StepError::EmptyBatch,
            other => StepError::Head(HeadError::Loss(other)),
        }
    }
}

/// How per-image losses combine across the mini-batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossReduction {
    /// One loss over every valid pixel of the batch.
    #[default]
    Joint,
    /// Mean of per-image losses; images with no valid pixels are skipped.
    ImageMean,
}

/// Geometry of the synthetic batches drawn by the runners.
#[derive(Debug, Clone, Copy)]
pub struct BatchSpec {
    pub map_size: usize,
    pub channels: usize,
    pub batch_size: usize,
}

/// A fixed mini-batch of post-ReLU features and ground-truth depth maps.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Vec<FeatureMap>,
    pub gt: Vec<Grid>,
    pub masks: Vec<Mask>,
}

/// Draws a batch element by element: features first, then the ground truth
/// with its validity mask. The draw order is part of the per-build
/// determinism contract.
pub fn draw_batch(stats: &DatasetStats, spec: &BatchSpec, rng: &mut ChaCha8Rng) -> Batch {
    let mut features = Vec::with_capacity(spec.batch_size);
    let mut gt = Vec::with_capacity(spec.batch_size);
    let mut masks = Vec::with_capacity(spec.batch_size);
    for _ in 0..spec.batch_size {
        features.push(gen_features(spec.map_size, spec.map_size, spec.channels, rng));
        let (depth, mask) = gen_ground_truth(stats, spec.map_size, spec.map_size, rng);
        gt.push(depth);
        masks.push(mask);
    }
    Batch { features, gt, masks }
}

/// Everything measured in one loss + backward evaluation.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub loss: LossOutput,
    pub grads: HeadGradient,
    /// Biased variance of the weight-gradient entries, in binary64; NaN when
    /// the gradient went nonfinite.
    pub grad_var: f64,
    /// Valid pixels that entered the loss.
    pub valid_pixels: usize,
    /// First nonfinite value in pipeline order, if any.
    pub event: Option<NanEvent>,
}

/// Biased binary64 variance of a binary32 slice.
pub fn variance_f64(values: &[f32]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    values.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n
}

/// One forward + loss + backward pass over the batch, entirely in binary32.
///
/// `iteration` only labels any NaN event. Tensors are scanned for nonfinite
/// values in pipeline order: log-diffs, loss, d-level gradient, logit
/// gradients, weight gradient, bias gradient.
pub fn loss_and_backward(
    head: &SigmoidHead,
    batch: &Batch,
    cfg: &LossConfig,
    reduction: LossReduction,
    iteration: u64,
) -> Result<StepOutput, StepError> {
    let mut depth_maps = Vec::with_capacity(batch.features.len());
    let mut diffs = Vec::with_capacity(batch.features.len());
    for (x, (gt, mask)) in batch.features.iter().zip(batch.gt.iter().zip(&batch.masks)) {
        let z = conv_forward(head, x)?;
        let y = scale_sigmoid(&z, head.max_depth);
        diffs.push(losskit::log_diff(&y, gt, mask, cfg.epsilon).map_err(HeadError::Loss)?);
        depth_maps.push(y);
    }
    let total_n: usize = diffs.iter().map(LogDiffs::n).sum();
    if total_n == 0 {
        return Err(StepError::EmptyBatch);
    }

    let (loss, grad_d_by_elem) = match reduction {
        LossReduction::Joint => {
            let mut joint = LogDiffs::new(Vec::new());
            for d in &diffs {
                joint.extend_from(d);
            }
            let loss = losskit::silog(&joint, cfg)?;
            let grad_d = losskit::grad_silog(&joint, cfg)?;
            let mut by_elem = Vec::with_capacity(diffs.len());
            let mut offset = 0;
            for d in &diffs {
                by_elem.push(grad_d[offset..offset + d.n()].to_vec());
                offset += d.n();
            }
            (loss, by_elem)
        }
        LossReduction::ImageMean => {
            // images without valid pixels are skipped; the mean runs over the
            // rest (total_n > 0 guarantees at least one)
            let used = diffs.iter().filter(|d| !d.is_empty()).count() as f32;
            let mut value_sum = 0.0f32;
            let mut by_elem = Vec::with_capacity(diffs.len());
            for d in &diffs {
                if d.is_empty() {
                    by_elem.push(Vec::new());
                    continue;
                }
                value_sum += losskit::silog(d, cfg)?.value;
                let mut grad = losskit::grad_silog(d, cfg)?;
                for g in &mut grad {
                    *g /= used;
                }
                by_elem.push(grad);
            }
            let value = value_sum / used;
            (losskit::LossOutput { value, is_nan: value.is_nan(), grad_d: None }, by_elem)
        }
    };

    let mut grads = HeadGradient::zeros(head.dims);
    let mut grad_logits = Vec::with_capacity(batch.features.len());
    for (elem, x) in batch.features.iter().enumerate() {
        let grad_z = scatter_logit_grad(
            &grad_d_by_elem[elem],
            &depth_maps[elem],
            &batch.masks[elem],
            cfg.epsilon,
            head.max_depth,
        );
        grads.accumulate(&conv_backward_weights(head.dims, x, &grad_z));
        grad_logits.push(grad_z);
    }

    let grad_var = variance_f64(&grads.weights);
    let all_d: Vec<f32> = diffs.iter().flat_map(|d| d.values().iter().copied()).collect();
    let all_grad_d: Vec<f32> = grad_d_by_elem.iter().flatten().copied().collect();
    let loss_slice = [loss.value];
    let bias_slice = [grads.bias];
    let mut tensors: Vec<(&'static str, &[f32])> = vec![
        ("log_diffs", &all_d),
        ("loss", &loss_slice),
        ("grad_log_diffs", &all_grad_d),
    ];
    for gz in &grad_logits {
        tensors.push(("grad_logits", gz.values()));
    }
    tensors.push(("grad_weights", &grads.weights));
    tensors.push(("grad_bias", &bias_slice));
    let event = monitor::first_event(iteration, tensors);

    Ok(StepOutput { loss, grads, grad_var, valid_pixels: total_n, event })
}

#[cfg(test)]
mod tests {
    use super::*;
    use stablab::headnet::{init_weights, ConvDims, InitScheme};
    use stablab::losskit::LossStyle;
    use stablab::simgen::{dataset_stats, RngStream};

    fn small_batch(seed: u64) -> (SigmoidHead, Batch) {
        let mut rng = RngStream::new(seed, 0).rng();
        let dims = ConvDims::square(3, 8);
        let head = init_weights(InitScheme::Normal { sigma: 0.1 }, dims, 80.0, &mut rng);
        let stats = dataset_stats("KITTI").unwrap();
        let spec = BatchSpec { map_size: 4, channels: 8, batch_size: 3 };
        let batch = draw_batch(&stats, &spec, &mut rng);
        (head, batch)
    }

    #[test]
    fn healthy_step_has_no_event() {
        let (head, batch) = small_batch(5);
        let cfg = LossConfig { lambda: 0.85, ..LossConfig::default() };
        let out = loss_and_backward(&head, &batch, &cfg, LossReduction::Joint, 0).unwrap();
        assert!(out.loss.value.is_finite());
        assert!(out.event.is_none());
        assert!(out.grad_var.is_finite());
        assert!(out.valid_pixels > 0 && out.valid_pixels <= 48);
        assert_eq!(out.grads.weights.len(), head.dims.weight_count());
    }

    #[test]
    fn empty_masks_surface_as_empty_batch() {
        let (head, mut batch) = small_batch(6);
        for mask in &mut batch.masks {
            *mask = Mask::none_valid(4, 4);
        }
        let cfg = LossConfig { lambda: 0.85, ..LossConfig::default() };
        assert!(matches!(
            loss_and_backward(&head, &batch, &cfg, LossReduction::Joint, 0),
            Err(StepError::EmptyBatch)
        ));
    }

    #[test]
    fn saturated_head_reports_a_log_diff_event() {
        let (mut head, batch) = small_batch(7);
        // drive every logit far into the saturated tail: y = 0, log -> -inf
        head.bias = -2000.0;
        for w in &mut head.weights {
            *w = 0.0;
        }
        let cfg = LossConfig { lambda: 0.85, epsilon: 0.0, ..LossConfig::default() };
        let out = loss_and_backward(&head, &batch, &cfg, LossReduction::Joint, 3).unwrap();
        let event = out.event.expect("log of zero must be detected");
        assert_eq!(event.tensor, "log_diffs");
        assert_eq!(event.iteration, 3);
        assert!(out.loss.is_nan || !out.loss.value.is_finite());
        // epsilon rescues the same configuration
        let cfg = LossConfig { lambda: 0.85, epsilon: 1e-24, ..LossConfig::default() };
        let out = loss_and_backward(&head, &batch, &cfg, LossReduction::Joint, 3).unwrap();
        assert!(out.event.is_none(), "epsilon = 1e-24 must remove the NaN");
    }

    #[test]
    fn joint_loss_matches_manual_concatenation() {
        let (head, batch) = small_batch(8);
        let cfg = LossConfig { lambda: 0.6, style: LossStyle::Mean, ..LossConfig::default() };
        let out = loss_and_backward(&head, &batch, &cfg, LossReduction::Joint, 0).unwrap();

        let mut joint = LogDiffs::new(Vec::new());
        for (x, (gt, mask)) in batch.features.iter().zip(batch.gt.iter().zip(&batch.masks)) {
            let y = stablab::headnet::head_forward(&head, x).unwrap();
            let d = losskit::log_diff(&y, gt, mask, cfg.epsilon).unwrap();
            joint.extend_from(&d);
        }
        let expected = losskit::silog(&joint, &cfg).unwrap();
        assert_eq!(out.loss.value.to_bits(), expected.value.to_bits());
    }

    #[test]
    fn step_is_deterministic() {
        let run = || {
            let (head, batch) = small_batch(9);
            let cfg = LossConfig { lambda: 0.85, ..LossConfig::default() };
            let out = loss_and_backward(&head, &batch, &cfg, LossReduction::Joint, 0).unwrap();
            (out.loss.value.to_bits(), out.grads.weights.iter().map(|w| w.to_bits()).collect::<Vec<_>>())
        };
        assert_eq!(run(), run());
    }
}
