//! Sigmoid depth head: the last convolution of a decoder, max-depth scaling,
//! weight initializers, and the analytic backward pass to the head weights.
//!
//! The convolution is a 2-D cross-correlation with stride 1 and zero 'same'
//! padding (output aligned with the input map). n_out is fixed at 1: this is
//! a depth head, not a general convolution. Accumulation order is fixed
//! (kernel rows, kernel columns, then channels; pixel loops row-major)
//! because binary32 summation order affects the reproducibility of NaN-onset
//! statistics.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fp32lab::sigmoid32;
use crate::grid::{Grid, Mask};
use crate::losskit::{self, LogDiffs, LossConfig, LossError};

#[derive(Debug, Error, PartialEq)]
pub enum HeadError {
    #[error("feature map has {got} channels, head expects {expected}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("map is {got_h}x{got_w}, expected {expected_h}x{expected_w}")]
    ShapeMismatch { expected_h: usize, expected_w: usize, got_h: usize, got_w: usize },
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// Kernel geometry of the head convolution (n_out is always 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvDims {
    pub k_h: usize,
    pub k_w: usize,
    pub n_in: usize,
}

impl ConvDims {
    pub fn square(k: usize, n_in: usize) -> Self {
        ConvDims { k_h: k, k_w: k, n_in }
    }

    pub fn weight_count(&self) -> usize {
        self.k_h * self.k_w * self.n_in
    }
}

/// Weight initialization schemes for the head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitScheme {
    /// i.i.d. N(0, sigma^2)
    Normal { sigma: f32 },
    /// sigma = sqrt(2 / (k_h * k_w * (n_in + n_out)))
    Xavier,
    /// sigma = sqrt(2 / (k_h * k_w * n_out))
    He,
    Zero,
}

impl InitScheme {
    /// Weight standard deviation implied by the scheme for a 1-output head.
    pub fn sigma(&self, dims: ConvDims) -> f32 {
        let k = (dims.k_h * dims.k_w) as f64;
        match self {
            InitScheme::Normal { sigma } => *sigma,
            InitScheme::Xavier => (2.0 / (k * (dims.n_in as f64 + 1.0))).sqrt() as f32,
            InitScheme::He => (2.0 / k).sqrt() as f32,
            InitScheme::Zero => 0.0,
        }
    }
}

/// Post-ReLU decoder features: an `n_h x n_w` map with `n_in` channels,
/// entries nonnegative by construction. Layout is row-major with channels
/// innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    data: Vec<f32>,
    n_h: usize,
    n_w: usize,
    n_in: usize,
}

impl FeatureMap {
    pub fn zeros(n_h: usize, n_w: usize, n_in: usize) -> Self {
        FeatureMap { data: vec![0.0; n_h * n_w * n_in], n_h, n_w, n_in }
    }

    pub fn from_vec(n_h: usize, n_w: usize, n_in: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), n_h * n_w * n_in, "feature data must be n_h * n_w * n_in long");
        FeatureMap { data, n_h, n_w, n_in }
    }

    pub fn from_fn(n_h: usize, n_w: usize, n_in: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(n_h * n_w * n_in);
        for i in 0..n_h {
            for j in 0..n_w {
                for c in 0..n_in {
                    data.push(f(i, j, c));
                }
            }
        }
        FeatureMap { data, n_h, n_w, n_in }
    }

    pub fn n_h(&self) -> usize {
        self.n_h
    }

    pub fn n_w(&self) -> usize {
        self.n_w
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, c: usize) -> f32 {
        self.data[(i * self.n_w + j) * self.n_in + c]
    }

    /// All channels of one pixel as a contiguous slice.
    #[inline]
    pub fn channels(&self, i: usize, j: usize) -> &[f32] {
        let base = (i * self.n_w + j) * self.n_in;
        &self.data[base..base + self.n_in]
    }

    pub fn values(&self) -> &[f32] {
        &self.data
    }
}

/// The trainable head: kernel weights, scalar bias, and the max-depth scaler.
/// Weight layout is `[k_h][k_w][n_in]`, matching the accumulation order of
/// the convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmoidHead {
    pub weights: Vec<f32>,
    pub bias: f32,
    pub dims: ConvDims,
    /// Maximum representable depth M in meters; outputs lie in [0, M].
    pub max_depth: f32,
}

impl SigmoidHead {
    pub fn param_count(&self) -> usize {
        self.weights.len() + 1
    }

    #[inline]
    pub fn weight(&self, ki: usize, kj: usize, c: usize) -> f32 {
        self.weights[(ki * self.dims.k_w + kj) * self.dims.n_in + c]
    }

    /// Copies weights-then-bias into a flat parameter slice.
    pub fn write_params(&self, out: &mut [f32]) {
        let nw = self.weights.len();
        out[..nw].copy_from_slice(&self.weights);
        out[nw] = self.bias;
    }

    /// Reads weights-then-bias back from a flat parameter slice.
    pub fn read_params(&mut self, params: &[f32]) {
        let nw = self.weights.len();
        self.weights.copy_from_slice(&params[..nw]);
        self.bias = params[nw];
    }
}

/// Samples head weights i.i.d. normal with the scheme's sigma; the bias is
/// zero-initialized. Draws happen in binary64 and round to binary32.
pub fn init_weights<R: Rng + ?Sized>(
    scheme: InitScheme,
    dims: ConvDims,
    max_depth: f32,
    rng: &mut R,
) -> SigmoidHead {
    let sigma = f64::from(scheme.sigma(dims));
    let normal = Normal::new(0.0, sigma).expect("scheme sigma is finite and nonnegative");
    let weights = (0..dims.weight_count()).map(|_| normal.sample(rng) as f32).collect();
    SigmoidHead { weights, bias: 0.0, dims, max_depth }
}

/// Logit map z = W * x + b: 2-D cross-correlation, stride 1, zero 'same'
/// padding preserving the n_h x n_w shape.
pub fn conv_forward(head: &SigmoidHead, x: &FeatureMap) -> Result<Grid, HeadError> {
    if x.n_in() != head.dims.n_in {
        return Err(HeadError::ChannelMismatch { expected: head.dims.n_in, got: x.n_in() });
    }
    let (k_h, k_w, n_in) = (head.dims.k_h, head.dims.k_w, head.dims.n_in);
    let (n_h, n_w) = (x.n_h(), x.n_w());
    let pad_h = (k_h - 1) / 2;
    let pad_w = (k_w - 1) / 2;
    let mut z = Grid::zeros(n_h, n_w);
    for oi in 0..n_h {
        for oj in 0..n_w {
            let mut acc = 0.0f32;
            for ki in 0..k_h {
                let ii = oi + ki;
                if ii < pad_h || ii - pad_h >= n_h {
                    continue;
                }
                let ii = ii - pad_h;
                for kj in 0..k_w {
                    let jj = oj + kj;
                    if jj < pad_w || jj - pad_w >= n_w {
                        continue;
                    }
                    let jj = jj - pad_w;
                    let wrow = {
                        let base = (ki * k_w + kj) * n_in;
                        &head.weights[base..base + n_in]
                    };
                    let xrow = x.channels(ii, jj);
                    for c in 0..n_in {
                        acc += wrow[c] * xrow[c];
                    }
                }
            }
            z.set(oi, oj, acc + head.bias);
        }
    }
    Ok(z)
}

/// Elementwise y = M * s(z).
pub fn scale_sigmoid(z: &Grid, max_depth: f32) -> Grid {
    z.map(|v| max_depth * sigmoid32(v))
}

/// Depth map y = M * s(W * x + b); outputs lie in [0, M].
pub fn head_forward(head: &SigmoidHead, x: &FeatureMap) -> Result<Grid, HeadError> {
    Ok(scale_sigmoid(&conv_forward(head, x)?, head.max_depth))
}

/// Gradients of the loss with respect to the head parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradient {
    pub weights: Vec<f32>,
    pub bias: f32,
}

impl HeadGradient {
    pub fn zeros(dims: ConvDims) -> Self {
        HeadGradient { weights: vec![0.0; dims.weight_count()], bias: 0.0 }
    }

    /// Binary32 accumulation of another gradient (mini-batch summation).
    pub fn accumulate(&mut self, other: &HeadGradient) {
        assert_eq!(self.weights.len(), other.weights.len());
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += *b;
        }
        self.bias += other.bias;
    }

    /// Copies weights-then-bias into a flat gradient slice.
    pub fn write_flat(&self, out: &mut [f32]) {
        let nw = self.weights.len();
        out[..nw].copy_from_slice(&self.weights);
        out[nw] = self.bias;
    }
}

/// Transposed convolution of a logit-level gradient map back to the weights:
/// grad_w[ki, kj, c] = sum over pixels of grad_z * x at the shifted position,
/// grad_b = sum of grad_z. Per-weight accumulation runs over pixels in
/// row-major order.
pub fn conv_backward_weights(dims: ConvDims, x: &FeatureMap, grad_z: &Grid) -> HeadGradient {
    let (k_h, k_w, n_in) = (dims.k_h, dims.k_w, dims.n_in);
    let (n_h, n_w) = (x.n_h(), x.n_w());
    let pad_h = (k_h - 1) / 2;
    let pad_w = (k_w - 1) / 2;
    let mut grad = HeadGradient::zeros(dims);
    for oi in 0..n_h {
        for oj in 0..n_w {
            let g = grad_z.get(oi, oj);
            grad.bias += g;
            for ki in 0..k_h {
                let ii = oi + ki;
                if ii < pad_h || ii - pad_h >= n_h {
                    continue;
                }
                let ii = ii - pad_h;
                for kj in 0..k_w {
                    let jj = oj + kj;
                    if jj < pad_w || jj - pad_w >= n_w {
                        continue;
                    }
                    let jj = jj - pad_w;
                    let base = (ki * k_w + kj) * n_in;
                    let wrow = &mut grad.weights[base..base + n_in];
                    let xrow = x.channels(ii, jj);
                    for c in 0..n_in {
                        wrow[c] += g * xrow[c];
                    }
                }
            }
        }
    }
    grad
}

/// Backward pass from a depth-level gradient: chains dy/dz = M * s(z)(1 - s(z))
/// and the convolution transpose to the weights, all in binary32.
pub fn head_backward(
    head: &SigmoidHead,
    x: &FeatureMap,
    grad_y: &Grid,
) -> Result<HeadGradient, HeadError> {
    if grad_y.n_h() != x.n_h() || grad_y.n_w() != x.n_w() {
        return Err(HeadError::ShapeMismatch {
            expected_h: x.n_h(),
            expected_w: x.n_w(),
            got_h: grad_y.n_h(),
            got_w: grad_y.n_w(),
        });
    }
    let z = conv_forward(head, x)?;
    let m = head.max_depth;
    let grad_z = Grid::from_fn(z.n_h(), z.n_w(), |i, j| {
        let s = sigmoid32(z.get(i, j));
        grad_y.get(i, j) * (m * s * (1.0 - s))
    });
    Ok(conv_backward_weights(head.dims, x, &grad_z))
}

/// Distributes per-pixel loss gradients back onto the logit map through
/// dd_i/dz_i = M * s(1 - s) / (y + eps), with s recovered as y / M.
///
/// `grad_d` must hold one entry per valid pixel in row-major mask order.
/// Invalid pixels receive zero gradient. A pixel with y = 0 and eps = 0
/// produces a nonfinite entry; that propagation is deliberate.
pub fn scatter_logit_grad(
    grad_d: &[f32],
    y: &Grid,
    mask: &Mask,
    epsilon: f32,
    max_depth: f32,
) -> Grid {
    assert_eq!(grad_d.len(), mask.count(), "one gradient entry per valid pixel");
    let mut k = 0;
    Grid::from_fn(y.n_h(), y.n_w(), |i, j| {
        if mask.get(i, j) {
            let yv = y.get(i, j);
            let s = yv / max_depth;
            let chain = max_depth * s * (1.0 - s) / (yv + epsilon);
            let g = grad_d[k] * chain;
            k += 1;
            g
        } else {
            0.0
        }
    })
}

/// Loss gradient at the logit level for one map: composes
/// `losskit::grad_silog` over the given log-diffs with the sigmoid-head chain
/// factor. `d` must come from `log_diff(y, gt, mask, cfg.epsilon)` so its
/// entries align with the mask.
pub fn grad_loss_wrt_logits(
    d: &LogDiffs,
    y: &Grid,
    mask: &Mask,
    cfg: &LossConfig,
    max_depth: f32,
) -> Result<Grid, HeadError> {
    if d.n() != mask.count() {
        return Err(HeadError::Loss(LossError::DiffCountMismatch {
            diffs: d.n(),
            valid: mask.count(),
        }));
    }
    if !mask.matches_grid(y) {
        return Err(HeadError::ShapeMismatch {
            expected_h: mask.n_h(),
            expected_w: mask.n_w(),
            got_h: y.n_h(),
            got_w: y.n_w(),
        });
    }
    let grad_d = losskit::grad_silog(d, cfg)?;
    Ok(scatter_logit_grad(&grad_d, y, mask, cfg.epsilon, max_depth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fp32lab::sigmoid32;
    use crate::losskit::{log_diff, LossStyle, VarianceEstimator};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn initializer_sigma_constants() {
        let dims = ConvDims::square(3, 128);
        let xavier = InitScheme::Xavier.sigma(dims);
        let he = InitScheme::He.sigma(dims);
        assert!((f64::from(xavier) - 0.0415).abs() < 1e-4, "xavier sigma = {xavier}");
        assert!((f64::from(he) - 0.4714).abs() < 1e-4, "he sigma = {he}");
        assert_eq!(InitScheme::Zero.sigma(dims), 0.0);
        assert_eq!(InitScheme::Normal { sigma: 0.1 }.sigma(dims), 0.1);
    }

    #[test]
    fn init_weights_sample_statistics() {
        // 10^5 draws: sample std within 3% of the target
        let dims = ConvDims { k_h: 1, k_w: 1, n_in: 100_000 };
        let head = init_weights(InitScheme::Normal { sigma: 0.1 }, dims, 80.0, &mut rng(7));
        assert_eq!(head.bias, 0.0);
        let n = head.weights.len() as f64;
        let mean: f64 = head.weights.iter().map(|&w| f64::from(w)).sum::<f64>() / n;
        let var: f64 = head
            .weights
            .iter()
            .map(|&w| (f64::from(w) - mean).powi(2))
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        assert!((std - 0.1).abs() / 0.1 < 0.03, "sample std = {std}");
    }

    #[test]
    fn conv_zero_features_give_bias() {
        let dims = ConvDims::square(3, 4);
        let head = SigmoidHead {
            weights: vec![0.25; dims.weight_count()],
            bias: -1.5,
            dims,
            max_depth: 80.0,
        };
        let x = FeatureMap::zeros(5, 4, 4);
        let z = conv_forward(&head, &x).unwrap();
        assert!(z.values().iter().all(|&v| v == -1.5));
    }

    #[test]
    fn conv_1x1_is_elementwise_scaling() {
        let dims = ConvDims::square(1, 1);
        let head = SigmoidHead { weights: vec![2.5], bias: 0.0, dims, max_depth: 80.0 };
        let x = FeatureMap::from_fn(3, 3, 1, |i, j, _| (i * 3 + j) as f32);
        let z = conv_forward(&head, &x).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(z.get(i, j), 2.5 * x.get(i, j, 0));
            }
        }
    }

    #[test]
    fn conv_channel_mismatch_is_an_error() {
        let dims = ConvDims::square(3, 4);
        let head = SigmoidHead { weights: vec![0.0; dims.weight_count()], bias: 0.0, dims, max_depth: 80.0 };
        let x = FeatureMap::zeros(3, 3, 5);
        assert!(matches!(
            conv_forward(&head, &x),
            Err(HeadError::ChannelMismatch { expected: 4, got: 5 })
        ));
    }

    // Independent nested-loop binary64 cross-correlation used as the test oracle.
    fn conv_oracle_f64(head: &SigmoidHead, x: &FeatureMap) -> Vec<f64> {
        let (k_h, k_w, n_in) = (head.dims.k_h, head.dims.k_w, head.dims.n_in);
        let pad_h = (k_h as i64 - 1) / 2;
        let pad_w = (k_w as i64 - 1) / 2;
        let mut out = Vec::new();
        for oi in 0..x.n_h() as i64 {
            for oj in 0..x.n_w() as i64 {
                let mut acc = f64::from(head.bias);
                for ki in 0..k_h as i64 {
                    for kj in 0..k_w as i64 {
                        let ii = oi + ki - pad_h;
                        let jj = oj + kj - pad_w;
                        if ii < 0 || jj < 0 || ii >= x.n_h() as i64 || jj >= x.n_w() as i64 {
                            continue;
                        }
                        for c in 0..n_in {
                            acc += f64::from(head.weight(ki as usize, kj as usize, c))
                                * f64::from(x.get(ii as usize, jj as usize, c));
                        }
                    }
                }
                out.push(acc);
            }
        }
        out
    }

    #[test]
    fn conv_matches_f64_oracle_on_random_shapes() {
        let mut r = rng(11);
        for trial in 0..100 {
            let k = [1usize, 3, 5][trial % 3];
            let n_in = 1 + trial % 7;
            let n_h = 1 + trial % 5;
            let n_w = 1 + (trial / 2) % 6;
            let dims = ConvDims::square(k, n_in);
            let head = init_weights(InitScheme::Normal { sigma: 0.5 }, dims, 80.0, &mut r);
            let x = FeatureMap::from_fn(n_h, n_w, n_in, |_, _, _| r.gen_range(-2.0f32..2.0));
            let z = conv_forward(&head, &x).unwrap();
            let oracle = conv_oracle_f64(&head, &x);
            // relative to the logit-map scale: per-entry ratios blow up at
            // cancellation zeros without saying anything about accuracy
            let scale = oracle.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1e-12);
            for (got, want) in z.values().iter().zip(&oracle) {
                assert!(
                    (f64::from(*got) - want).abs() / scale < 1e-5,
                    "trial {trial}: conv {got} vs oracle {want} (map scale {scale})"
                );
            }
        }
    }

    #[test]
    fn forward_saturation_and_range() {
        let dims = ConvDims::square(1, 1);
        let x = FeatureMap::zeros(2, 2, 1);
        for (bias, expected) in [(0.0f32, 40.0f32), (-89.0, 0.0)] {
            let head = SigmoidHead { weights: vec![0.0], bias, dims, max_depth: 80.0 };
            let y = head_forward(&head, &x).unwrap();
            assert!(y.values().iter().all(|&v| v == expected));
        }
        // z = -88: product of the max scaler and a subnormal sigmoid
        let head = SigmoidHead { weights: vec![0.0], bias: -88.0, dims, max_depth: 80.0 };
        let y = head_forward(&head, &x).unwrap();
        let expected = 80.0f32 * sigmoid32(-88.0);
        assert!(y.values().iter().all(|&v| v == expected));
        assert!((f64::from(expected) - 4.8437e-37).abs() / 4.8437e-37 < 1e-4);
    }

    #[test]
    fn forward_stays_in_range_on_random_heads() {
        let mut r = rng(13);
        for _ in 0..20 {
            let dims = ConvDims::square(3, 8);
            let head = init_weights(InitScheme::Normal { sigma: 2.0 }, dims, 80.0, &mut r);
            let x = FeatureMap::from_fn(4, 4, 8, |_, _, _| r.gen_range(0.0f32..3.0));
            let y = head_forward(&head, &x).unwrap();
            for &v in y.values() {
                assert!((0.0..=80.0).contains(&v));
                assert!(!v.is_nan());
            }
        }
    }

    #[test]
    fn backward_zero_gradient() {
        let dims = ConvDims::square(3, 2);
        let head = SigmoidHead { weights: vec![0.3; dims.weight_count()], bias: 0.1, dims, max_depth: 80.0 };
        let x = FeatureMap::from_fn(3, 3, 2, |i, j, c| (i + j + c) as f32 * 0.1);
        let g = head_backward(&head, &x, &Grid::zeros(3, 3)).unwrap();
        assert!(g.weights.iter().all(|&v| v == 0.0));
        assert_eq!(g.bias, 0.0);
    }

    #[test]
    fn backward_single_pixel_scalar_chain() {
        let dims = ConvDims::square(1, 1);
        let head = SigmoidHead { weights: vec![0.7], bias: 0.2, dims, max_depth: 80.0 };
        let x = FeatureMap::from_vec(1, 1, 1, vec![1.3]);
        let mut grad_y = Grid::zeros(1, 1);
        grad_y.set(0, 0, 0.5);
        let g = head_backward(&head, &x, &grad_y).unwrap();
        let z = 0.7f32 * 1.3 + 0.2;
        let s = sigmoid32(z);
        let expected = 0.5f32 * (80.0 * s * (1.0 - s)) * 1.3;
        assert!((g.weights[0] - expected).abs() <= f32::EPSILON * expected.abs());
        let expected_b = 0.5f32 * (80.0 * s * (1.0 - s));
        assert!((g.bias - expected_b).abs() <= f32::EPSILON * expected_b.abs());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut r = rng(17);
        let dims = ConvDims::square(3, 3);
        let head = init_weights(InitScheme::Normal { sigma: 0.4 }, dims, 80.0, &mut r);
        let x = FeatureMap::from_fn(3, 3, 3, |_, _, _| r.gen_range(0.0f32..2.0));
        let grad_y = Grid::from_fn(3, 3, |_, _| r.gen_range(-1.0f32..1.0));
        let analytic = head_backward(&head, &x, &grad_y).unwrap();

        // binary64 objective: sum(grad_y * y(w)) so dO/dw matches head_backward
        let objective = |weights: &[f64], bias: f64| -> f64 {
            let mut total = 0.0;
            for oi in 0..3i64 {
                for oj in 0..3i64 {
                    let mut z = bias;
                    for ki in 0..3i64 {
                        for kj in 0..3i64 {
                            let ii = oi + ki - 1;
                            let jj = oj + kj - 1;
                            if ii < 0 || jj < 0 || ii >= 3 || jj >= 3 {
                                continue;
                            }
                            for c in 0..3usize {
                                z += weights[((ki * 3 + kj) as usize) * 3 + c]
                                    * f64::from(x.get(ii as usize, jj as usize, c));
                            }
                        }
                    }
                    let s = 1.0 / (1.0 + (-z).exp());
                    total += f64::from(grad_y.get(oi as usize, oj as usize)) * 80.0 * s;
                }
            }
            total
        };

        let w64: Vec<f64> = head.weights.iter().map(|&w| f64::from(w)).collect();
        let h = 1e-5;
        let mut worst = 0.0f64;
        let scale = analytic
            .weights
            .iter()
            .map(|&v| f64::from(v).abs())
            .fold(0.0, f64::max);
        for idx in 0..w64.len() {
            let mut plus = w64.clone();
            plus[idx] += h;
            let mut minus = w64.clone();
            minus[idx] -= h;
            let fd = (objective(&plus, f64::from(head.bias)) - objective(&minus, f64::from(head.bias))) / (2.0 * h);
            let err = (f64::from(analytic.weights[idx]) - fd).abs() / scale.max(1e-12);
            worst = worst.max(err);
        }
        assert!(worst < 1e-5, "worst relative weight-gradient error {worst}");
    }

    #[test]
    fn logit_grad_zero_at_matching_depths() {
        let y = Grid::filled(2, 2, 16.0);
        let mask = Mask::all_valid(2, 2);
        let d = log_diff(&y, &y, &mask, 0.0).unwrap();
        let cfg = LossConfig { lambda: 1.0, ..LossConfig::default() };
        let g = grad_loss_wrt_logits(&d, &y, &mask, &cfg, 80.0).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn logit_grad_single_pixel_matches_finite_differences() {
        // y = M s(z) with z chosen by hand; differentiate the binary64 chain in z
        let m = 80.0f64;
        let z0 = -0.75f64;
        let gt = 16.0f64;
        let lambda = 0.85f64;
        let eps = 1e-6f64;

        let y32 = Grid::filled(1, 1, (m * (1.0 / (1.0 + (-z0).exp()))) as f32);
        let gt32 = Grid::filled(1, 1, gt as f32);
        let mask = Mask::all_valid(1, 1);
        let cfg = LossConfig { lambda: lambda as f32, epsilon: eps as f32, ..LossConfig::default() };
        let d = log_diff(&y32, &gt32, &mask, cfg.epsilon).unwrap();
        let analytic = grad_loss_wrt_logits(&d, &y32, &mask, &cfg, m as f32).unwrap();

        let loss_of_z = |z: f64| -> f64 {
            let y = m / (1.0 + (-z).exp());
            let d = (y + eps).ln() - (gt + eps).ln();
            // n = 1: mean-style loss reduces to (1 - lambda) d^2
            d * d - lambda * d * d
        };
        let h = 1e-6;
        let fd = (loss_of_z(z0 + h) - loss_of_z(z0 - h)) / (2.0 * h);
        let got = f64::from(analytic.get(0, 0));
        assert!(
            (got - fd).abs() / fd.abs().max(1e-12) < 1e-4,
            "logit grad {got} vs finite difference {fd}"
        );
    }

    #[test]
    fn logit_grad_flags_division_by_zero() {
        let mut y = Grid::filled(1, 2, 16.0);
        y.set(0, 1, 0.0);
        let gt = Grid::filled(1, 2, 16.0);
        let mask = Mask::all_valid(1, 2);
        let cfg = LossConfig { lambda: 0.85, epsilon: 0.0, ..LossConfig::default() };
        let d = log_diff(&y, &gt, &mask, 0.0).unwrap();
        let g = grad_loss_wrt_logits(&d, &y, &mask, &cfg, 80.0).unwrap();
        assert!(!g.get(0, 1).is_finite(), "y = 0 with eps = 0 must produce a nonfinite entry");
    }

    #[test]
    fn logit_grad_count_mismatch_is_an_error() {
        let y = Grid::filled(2, 2, 16.0);
        let mask = Mask::all_valid(2, 2);
        let d = LogDiffs::from_slice(&[0.0; 3]);
        let cfg = LossConfig::default();
        assert!(matches!(
            grad_loss_wrt_logits(&d, &y, &mask, &cfg, 80.0),
            Err(HeadError::Loss(LossError::DiffCountMismatch { diffs: 3, valid: 4 }))
        ));
    }

    #[test]
    fn logit_grad_styles_consistent_with_loss_gradient() {
        // spot-check the var-unbiased chain end to end against an f64 FD
        let mut r = rng(23);
        let dims = ConvDims::square(1, 1);
        let head = SigmoidHead { weights: vec![0.4], bias: 0.1, dims, max_depth: 80.0 };
        let x = FeatureMap::from_fn(2, 2, 1, |_, _, _| r.gen_range(0.1f32..1.5));
        let gt = Grid::from_fn(2, 2, |_, _| r.gen_range(10.0f32..20.0));
        let mask = Mask::all_valid(2, 2);
        let cfg = LossConfig {
            lambda: 0.5,
            style: LossStyle::Var,
            estimator: VarianceEstimator::Unbiased,
            sqrt_wrap: false,
            epsilon: 1e-6,
        };
        let y = head_forward(&head, &x).unwrap();
        let d = log_diff(&y, &gt, &mask, cfg.epsilon).unwrap();
        let g = grad_loss_wrt_logits(&d, &y, &mask, &cfg, 80.0).unwrap();
        assert!(g.values().iter().all(|v| v.is_finite()));
    }
}
