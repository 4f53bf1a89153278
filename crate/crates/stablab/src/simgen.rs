//! Seeded synthetic data: a dataset-statistics registry, ground-truth depth
//! maps with validity masks, post-ReLU feature maps, and Bernoulli sparsity
//! masks.
//!
//! Sampling happens in binary64 and rounds to binary32 for storage, avoiding
//! generator-dependent binary32 quantization quirks. Determinism is per
//! build: the same (seed, stream, config) reproduces the same tensors, with
//! the generator algorithm named in run manifests. Cross-language bit
//! identity is not promised.

use rand::Rng;
use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid, Mask};
use crate::headnet::FeatureMap;

/// Generator algorithm recorded in run manifests.
pub const GENERATOR_ID: &str = "chacha8";

#[derive(Debug, Error, PartialEq)]
pub enum SimGenError {
    #[error("unknown dataset {0:?} (known: KITTI, NYU-Depth V2, Driving Stereo, Argoverse, DDAD)")]
    UnknownDataset(String),
}

/// Ground-truth depth statistics for one dataset, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DatasetStats {
    pub name: &'static str,
    pub mean: f64,
    pub std: f64,
}

impl DatasetStats {
    /// Stats outside the registry, for synthetic experiments. The registry
    /// invariants (positive mean and std) are not enforced here.
    pub fn custom(mean: f64, std: f64) -> Self {
        DatasetStats { name: "custom", mean, std }
    }
}

/// The five tabulated datasets.
pub const DATASETS: [DatasetStats; 5] = [
    DatasetStats { name: "KITTI", mean: 16.2307, std: 5.3810 },
    DatasetStats { name: "NYU-Depth V2", mean: 2.8497, std: 1.2845 },
    DatasetStats { name: "Driving Stereo", mean: 23.8313, std: 7.7740 },
    DatasetStats { name: "Argoverse", mean: 26.1697, std: 1.9219 },
    DatasetStats { name: "DDAD", mean: 31.4102, std: 3.2712 },
];

fn normalize(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

/// Looks up tabulated statistics by dataset name (case- and
/// punctuation-insensitive; "nyu" is accepted for NYU-Depth V2).
pub fn dataset_stats(name: &str) -> Result<DatasetStats, SimGenError> {
    let key = normalize(name);
    for ds in DATASETS {
        if normalize(ds.name) == key {
            return Ok(ds);
        }
    }
    if key == "nyu" || key == "nyudepth" {
        return Ok(DATASETS[1]);
    }
    Err(SimGenError::UnknownDataset(name.to_string()))
}

/// A reproducible random stream: one ChaCha8 generator per (seed, stream)
/// pair. Distinct streams under the same seed are statistically independent;
/// the same pair reproduces the identical sequence within one build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngStream { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Draws an i.i.d. normal(mean, std) depth map. Entries <= 0 are marked
/// invalid in the mask — removed, not resampled — and the sampled values are
/// stored unmutated.
pub fn gen_ground_truth<R: Rng + ?Sized>(
    stats: &DatasetStats,
    n_h: usize,
    n_w: usize,
    rng: &mut R,
) -> (Grid, Mask) {
    let normal = Normal::new(stats.mean, stats.std).expect("finite mean, std >= 0");
    let mut values = Vec::with_capacity(n_h * n_w);
    let mut valid = Vec::with_capacity(n_h * n_w);
    for _ in 0..n_h * n_w {
        let v = normal.sample(rng) as f32;
        values.push(v);
        valid.push(v > 0.0);
    }
    (Grid::from_vec(n_h, n_w, values), Mask::from_vec(n_h, n_w, valid))
}

/// Draws a post-ReLU feature map: standard normal samples clamped at zero
/// from below, so roughly half the entries are exact zeros.
pub fn gen_features<R: Rng + ?Sized>(
    n_h: usize,
    n_w: usize,
    n_in: usize,
    rng: &mut R,
) -> FeatureMap {
    let mut data = Vec::with_capacity(n_h * n_w * n_in);
    for _ in 0..n_h * n_w * n_in {
        let v: f64 = StandardNormal.sample(rng);
        data.push(if v > 0.0 { v as f32 } else { 0.0 });
    }
    FeatureMap::from_vec(n_h, n_w, n_in, data)
}

/// A Bernoulli sparsity mask with its target valid rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMask {
    pub mask: Mask,
    pub valid_rate: f64,
}

/// Draws an i.i.d. Bernoulli(valid_rate) mask over the grid.
pub fn gen_sparse_mask<R: Rng + ?Sized>(
    n_h: usize,
    n_w: usize,
    valid_rate: f64,
    rng: &mut R,
) -> SparseMask {
    assert!(
        (0.0..=1.0).contains(&valid_rate),
        "valid_rate must lie in [0, 1], got {valid_rate}"
    );
    let mask = Mask::from_fn(n_h, n_w, |_, _| rng.gen::<f64>() < valid_rate);
    SparseMask { mask, valid_rate }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_contains_exactly_the_tabulated_entries() {
        assert_eq!(DATASETS.len(), 5);
        for ds in DATASETS {
            assert!(ds.mean > 0.0 && ds.std > 0.0);
        }
        let kitti = dataset_stats("KITTI").unwrap();
        assert_eq!((kitti.mean, kitti.std), (16.2307, 5.3810));
        let nyu = dataset_stats("NYU-Depth V2").unwrap();
        assert_eq!((nyu.mean, nyu.std), (2.8497, 1.2845));
        let ddad = dataset_stats("DDAD").unwrap();
        assert_eq!((ddad.mean, ddad.std), (31.4102, 3.2712));
    }

    #[test]
    fn lookup_is_forgiving_about_spelling() {
        assert_eq!(dataset_stats("kitti").unwrap().name, "KITTI");
        assert_eq!(dataset_stats("nyu").unwrap().name, "NYU-Depth V2");
        assert_eq!(dataset_stats("driving stereo").unwrap().name, "Driving Stereo");
        assert_eq!(
            dataset_stats("cityscapes").unwrap_err(),
            SimGenError::UnknownDataset("cityscapes".to_string())
        );
    }

    #[test]
    fn streams_reproduce_and_diverge() {
        let a1 = gen_features(4, 4, 3, &mut RngStream::new(42, 0).rng());
        let a2 = gen_features(4, 4, 3, &mut RngStream::new(42, 0).rng());
        assert_eq!(a1, a2);
        let b = gen_features(4, 4, 3, &mut RngStream::new(42, 1).rng());
        assert_ne!(a1, b);
        let c = gen_features(4, 4, 3, &mut RngStream::new(43, 0).rng());
        assert_ne!(a1, c);
    }

    #[test]
    fn ground_truth_sample_mean_within_clt_bound() {
        let stats = dataset_stats("KITTI").unwrap();
        let n = 1_000_000usize;
        let (grid, mask) = gen_ground_truth(&stats, 1000, 1000, &mut RngStream::new(7, 0).rng());
        let mean: f64 = grid.values().iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64;
        let bound = 3.0 * stats.std / (n as f64).sqrt();
        assert!((mean - stats.mean).abs() < bound, "sample mean {mean}");
        // most pixels valid at KITTI statistics (negative tail ~0.13%)
        let invalid = n - mask.count();
        assert!(invalid > 0, "a million draws should clip a few negatives");
        assert!((invalid as f64) < 0.005 * n as f64);
    }

    #[test]
    fn ground_truth_mask_matches_sign_exactly() {
        let stats = DatasetStats::custom(0.5, 2.0);
        let (grid, mask) = gen_ground_truth(&stats, 50, 50, &mut RngStream::new(11, 0).rng());
        for idx in 0..grid.len() {
            assert_eq!(mask.bit(idx), grid.at(idx) > 0.0);
        }
    }

    #[test]
    fn degenerate_std_gives_constant_valid_map() {
        let stats = DatasetStats::custom(4.25, 0.0);
        let (grid, mask) = gen_ground_truth(&stats, 8, 8, &mut RngStream::new(3, 0).rng());
        assert!(grid.values().iter().all(|&v| v == 4.25));
        assert_eq!(mask.count(), 64);
    }

    #[test]
    fn negative_mean_yields_mostly_invalid_mask() {
        let stats = DatasetStats::custom(-5.0, 1.0);
        let (_, mask) = gen_ground_truth(&stats, 100, 100, &mut RngStream::new(5, 0).rng());
        assert!(mask.count() < 100, "P(valid) = Phi(-5) makes valid pixels vanishingly rare");
    }

    #[test]
    fn features_are_nonnegative_with_half_zeros() {
        let x = gen_features(500, 500, 4, &mut RngStream::new(21, 0).rng());
        let n = x.values().len() as f64;
        assert!(x.values().iter().all(|&v| v >= 0.0));
        let zeros = x.values().iter().filter(|&&v| v == 0.0).count() as f64;
        // Binomial(n, 1/2): 3 sigma on the zero fraction
        let bound = 3.0 * 0.5 / n.sqrt();
        assert!((zeros / n - 0.5).abs() < bound, "zero fraction {}", zeros / n);
        // half-normal moment: E[max(Z, 0)] = 1/sqrt(2 pi)
        let mean = x.values().iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let expected = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let sigma = (0.5 - expected * expected).sqrt();
        assert!((mean - expected).abs() < 3.0 * sigma / n.sqrt(), "relu mean {mean}");
    }

    #[test]
    fn sparse_mask_degenerate_rates() {
        let mut rng = RngStream::new(9, 0).rng();
        assert_eq!(gen_sparse_mask(20, 20, 0.0, &mut rng).mask.count(), 0);
        assert_eq!(gen_sparse_mask(20, 20, 1.0, &mut rng).mask.count(), 400);
    }

    #[test]
    fn sparse_mask_counts_follow_the_binomial_law() {
        // 10^4 trials of Binomial(10^4, 5e-4), chi-square goodness of fit at
        // the 1% level against the exact pmf
        use statrs::distribution::{ChiSquared, ContinuousCDF};

        let trials = 10_000usize;
        let pixels = 10_000u64;
        let rate = 0.0005f64;
        let mut rng = RngStream::new(1234, 0).rng();
        let mut counts = vec![0u64; 64];
        for _ in 0..trials {
            let m = gen_sparse_mask(100, 100, rate, &mut rng);
            let k = m.mask.count().min(63);
            counts[k] += 1;
        }

        // exact Binomial(pixels, rate) pmf via the recurrence from P(0)
        let mut pmf = Vec::new();
        let mut p = (1.0 - rate).powi(pixels as i32);
        for k in 0..64u64 {
            pmf.push(p);
            p = p * ((pixels - k) as f64) / ((k + 1) as f64) * (rate / (1.0 - rate));
        }

        // merge bins until expected count >= 5, chi-square with df = bins - 1
        let mut chi2 = 0.0;
        let mut bins = 0usize;
        let mut obs_acc = 0.0f64;
        let mut exp_acc = 0.0f64;
        for k in 0..64 {
            obs_acc += counts[k] as f64;
            exp_acc += pmf[k] * trials as f64;
            let tail_expected: f64 = pmf[k + 1..].iter().sum::<f64>() * trials as f64;
            if exp_acc >= 5.0 && tail_expected >= 5.0 {
                chi2 += (obs_acc - exp_acc).powi(2) / exp_acc;
                bins += 1;
                obs_acc = 0.0;
                exp_acc = 0.0;
            }
        }
        // remaining mass in one tail bin
        let tail_obs: f64 = trials as f64 - counts.iter().take(64).sum::<u64>() as f64 + obs_acc;
        let tail_exp: f64 = trials as f64 * (1.0 - pmf.iter().sum::<f64>()) + exp_acc;
        if tail_exp > 0.0 {
            chi2 += (tail_obs - tail_exp).powi(2) / tail_exp;
            bins += 1;
        }
        let df = (bins - 1) as f64;
        let critical = ChiSquared::new(df).unwrap().inverse_cdf(0.99);
        assert!(chi2 < critical, "chi2 = {chi2:.2} over {bins} bins exceeds the 1% critical value {critical:.2}");
    }
}
