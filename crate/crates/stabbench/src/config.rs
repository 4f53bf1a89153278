//! JSON-facing configuration types for the runners and the CLI.
//!
//! Config documents mirror the library types. `lambda` is deliberately a
//! required field on every loss spec: the simulations are sensitive to it and
//! no published value exists to default to; every manifest records the value
//! actually used.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use stablab::fp32lab::parse_decimal_to_f32;
use stablab::headnet::{ConvDims, InitScheme};
use stablab::losskit::{LossConfig, LossStyle, VarianceEstimator};
use stablab::optimkit::LrSchedule;

use crate::pipeline::LossReduction;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("failed to parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

/// Reads one JSON config document.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

/// Epsilon as written in a config: either a JSON number or a decimal literal
/// kept as text, so cast-boundary behavior ("7.0e-46" resolving to zero)
/// survives the trip through the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsilonSpec {
    Number(f64),
    Text(String),
}

impl Default for EpsilonSpec {
    fn default() -> Self {
        EpsilonSpec::Number(0.0)
    }
}

impl EpsilonSpec {
    /// Round-to-nearest binary32 value of the spec.
    pub fn resolve(&self) -> Result<f32, ConfigError> {
        match self {
            EpsilonSpec::Number(v) => Ok(*v as f32),
            EpsilonSpec::Text(s) => parse_decimal_to_f32(s)
                .map_err(|e| invalid(format!("bad epsilon literal {s:?}: {e}"))),
        }
    }

    /// The spelling to record in reports.
    pub fn text(&self) -> String {
        match self {
            EpsilonSpec::Number(v) => format!("{v:e}"),
            EpsilonSpec::Text(s) => s.clone(),
        }
    }
}

/// Loss family configuration as written in configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub lambda: f32,
    #[serde(default)]
    pub style: LossStyle,
    #[serde(default)]
    pub estimator: VarianceEstimator,
    #[serde(default)]
    pub sqrt_wrap: bool,
    #[serde(default)]
    pub epsilon: EpsilonSpec,
}

impl LossSpec {
    pub fn resolve(&self) -> Result<LossConfig, ConfigError> {
        let cfg = LossConfig {
            lambda: self.lambda,
            style: self.style,
            estimator: self.estimator,
            sqrt_wrap: self.sqrt_wrap,
            epsilon: self.epsilon.resolve()?,
        };
        cfg.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(cfg)
    }
}

fn default_dataset() -> String {
    "KITTI".to_string()
}

fn d_iterations() -> u64 {
    1000
}

fn d_batch() -> usize {
    10
}

fn d_channels() -> usize {
    128
}

fn d_kernel() -> usize {
    3
}

fn d_map_small() -> usize {
    3
}

fn d_map_large() -> usize {
    100
}

fn d_init_sigma() -> f32 {
    0.1
}

fn d_max_depth() -> f32 {
    80.0
}

fn d_lr() -> LrSchedule {
    LrSchedule::Constant { value: 0.001 }
}

fn d_replicas() -> usize {
    100
}

fn d_sigma_grid() -> Vec<f32> {
    vec![0.01, 0.05, 0.1, 0.3, 0.5, 1.0, 2.0]
}

fn d_trials() -> u64 {
    10_000
}

fn d_valid_rates() -> Vec<f64> {
    // 0.05% through 0.14% in 0.01% steps
    (5..=14).map(|k| k as f64 / 10_000.0).collect()
}

fn d_dims() -> DimsSpec {
    DimsSpec { kernel: d_kernel(), channels: d_channels() }
}

fn d_image_mean() -> LossReduction {
    LossReduction::ImageMean
}

/// Training simulation of the square-root-loss divergence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SqrtSimConfig {
    pub loss: LossSpec,
    #[serde(default = "default_dataset")]
    pub dataset: String,
    #[serde(default = "d_iterations")]
    pub iterations: u64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_map_small")]
    pub map_size: usize,
    #[serde(default = "d_channels")]
    pub channels: usize,
    #[serde(default = "d_kernel")]
    pub kernel: usize,
    #[serde(default = "d_init_sigma")]
    pub init_sigma: f32,
    #[serde(default = "d_max_depth")]
    pub max_depth: f32,
    #[serde(default = "d_lr")]
    pub lr: LrSchedule,
    /// Redraw the batch every iteration instead of holding it fixed.
    #[serde(default)]
    pub resample_per_iter: bool,
    /// Batch reduction; the training sim defaults to the per-image mean of
    /// ordinary training loops.
    #[serde(default = "d_image_mean")]
    pub reduction: LossReduction,
}

impl SqrtSimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.loss.resolve()?;
        self.lr.validate().map_err(|e| invalid(e.to_string()))?;
        if self.iterations == 0 {
            return Err(invalid("iterations must be >= 1"));
        }
        check_geometry(self.map_size, self.channels, self.kernel, self.batch_size, self.max_depth)
    }
}

/// One-shot gradient-scale sweep over weight scales (and optionally epsilons).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub loss: LossSpec,
    #[serde(default = "default_dataset")]
    pub dataset: String,
    #[serde(default = "d_sigma_grid")]
    pub sigma_grid: Vec<f32>,
    /// When empty, the sweep runs at the single epsilon from `loss`.
    #[serde(default)]
    pub eps_grid: Vec<EpsilonSpec>,
    #[serde(default = "d_replicas")]
    pub replicas: usize,
    #[serde(default = "d_map_large")]
    pub map_size: usize,
    #[serde(default = "d_channels")]
    pub channels: usize,
    #[serde(default = "d_kernel")]
    pub kernel: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_max_depth")]
    pub max_depth: f32,
    /// Batch reduction; sweeps default to one loss over the whole batch.
    #[serde(default)]
    pub reduction: LossReduction,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.loss.resolve()?;
        if self.replicas == 0 {
            return Err(invalid("replicas must be >= 1"));
        }
        if self.sigma_grid.is_empty() {
            return Err(invalid("sigma_grid must not be empty"));
        }
        if self.sigma_grid.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(invalid("sigma_grid entries must be finite and >= 0"));
        }
        for eps in &self.eps_grid {
            eps.resolve()?;
        }
        check_geometry(self.map_size, self.channels, self.kernel, self.batch_size, self.max_depth)
    }
}

/// NaN counting over sparse masks for both variance estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceTableConfig {
    pub lambda: f32,
    #[serde(default = "default_dataset")]
    pub dataset: String,
    #[serde(default = "d_valid_rates")]
    pub valid_rates: Vec<f64>,
    #[serde(default = "d_trials")]
    pub trials: u64,
    #[serde(default = "d_map_large")]
    pub map_size: usize,
    /// Skip n = 0 batches (the conditional-statement guard) instead of
    /// counting them as NaN for both estimators.
    #[serde(default)]
    pub skip_guard: bool,
    #[serde(default)]
    pub epsilon: EpsilonSpec,
}

impl VarianceTableConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.lambda >= 0.0 && self.lambda <= 1.0) {
            return Err(invalid(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if self.trials == 0 {
            return Err(invalid("trials must be >= 1"));
        }
        if self.map_size == 0 {
            return Err(invalid("map_size must be >= 1"));
        }
        if self.valid_rates.is_empty() {
            return Err(invalid("valid_rates must not be empty"));
        }
        if self.valid_rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(invalid("valid_rates must lie in [0, 1]"));
        }
        self.epsilon.resolve()?;
        Ok(())
    }
}

/// Kernel geometry named in audit configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimsSpec {
    pub kernel: usize,
    pub channels: usize,
}

impl DimsSpec {
    pub fn to_conv_dims(self) -> ConvDims {
        ConvDims::square(self.kernel, self.channels)
    }
}

/// Which phase of training a configuration is destined for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseHint {
    Early,
    Late,
}

/// Input to the guideline audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub loss: LossSpec,
    pub init: InitScheme,
    #[serde(default = "d_dims")]
    pub dims: DimsSpec,
    pub phase: PhaseHint,
}

impl AuditConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.loss.resolve()?;
        if self.dims.kernel == 0 || self.dims.channels == 0 {
            return Err(invalid("kernel and channels must be >= 1"));
        }
        Ok(())
    }
}

fn check_geometry(
    map_size: usize,
    channels: usize,
    kernel: usize,
    batch_size: usize,
    max_depth: f32,
) -> Result<(), ConfigError> {
    if map_size == 0 || channels == 0 || kernel == 0 {
        return Err(invalid("map_size, channels, and kernel must all be >= 1"));
    }
    if kernel % 2 == 0 {
        return Err(invalid("kernel must be odd for 'same' padding"));
    }
    if batch_size == 0 {
        return Err(invalid("batch_size must be >= 1"));
    }
    if !(max_depth.is_finite() && max_depth > 0.0) {
        return Err(invalid(format!("max_depth must be positive and finite, got {max_depth}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epsilon_spec_resolves_numbers_and_literals() {
        assert_eq!(EpsilonSpec::Number(1e-24).resolve().unwrap(), 1e-24f32);
        assert_eq!(EpsilonSpec::Text("1e-24".into()).resolve().unwrap(), 1e-24f32);
        // below the decimal-cast boundary: behaves as zero
        assert_eq!(EpsilonSpec::Text("7.0e-46".into()).resolve().unwrap(), 0.0);
        assert_eq!(EpsilonSpec::Text("7.1e-46".into()).resolve().unwrap(), f32::from_bits(1));
        assert_eq!(EpsilonSpec::Number(7.0e-46).resolve().unwrap(), 0.0);
        assert!(EpsilonSpec::Text("tiny".into()).resolve().is_err());
    }

    #[test]
    fn loss_spec_round_trips_through_json() {
        let json = r#"{"lambda":0.85,"style":"var","estimator":"unbiased","sqrt_wrap":true,"epsilon":"7.0e-46"}"#;
        let spec: LossSpec = serde_json::from_str(json).unwrap();
        let back: LossSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(spec, back);
        let cfg = spec.resolve().unwrap();
        assert_eq!(cfg.epsilon, 0.0);
        assert_eq!(cfg.style, LossStyle::Var);
        assert_eq!(cfg.estimator, VarianceEstimator::Unbiased);
    }

    #[test]
    fn lambda_is_required() {
        let err = serde_json::from_str::<LossSpec>(r#"{"style":"mean"}"#).unwrap_err();
        assert!(err.to_string().contains("lambda"), "{err}");
    }

    #[test]
    fn sqrt_config_defaults_follow_the_recipe() {
        let cfg: SqrtSimConfig = serde_json::from_str(r#"{"loss":{"lambda":0.85}}"#).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.dataset, "KITTI");
        assert_eq!(cfg.iterations, 1000);
        assert_eq!(cfg.batch_size, 10);
        assert_eq!(cfg.map_size, 3);
        assert_eq!(cfg.channels, 128);
        assert_eq!(cfg.kernel, 3);
        assert_eq!(cfg.init_sigma, 0.1);
        assert_eq!(cfg.max_depth, 80.0);
        assert_eq!(cfg.lr, LrSchedule::Constant { value: 0.001 });
        assert!(!cfg.resample_per_iter);
    }

    #[test]
    fn validation_catches_bad_values() {
        let cfg: SqrtSimConfig =
            serde_json::from_str(r#"{"loss":{"lambda":1.5}}"#).unwrap();
        assert!(cfg.validate().is_err());
        let cfg: SqrtSimConfig =
            serde_json::from_str(r#"{"loss":{"lambda":0.5},"iterations":0}"#).unwrap();
        assert!(cfg.validate().is_err());
        let cfg: SweepConfig =
            serde_json::from_str(r#"{"loss":{"lambda":0.5},"sigma_grid":[]}"#).unwrap();
        assert!(cfg.validate().is_err());
        let cfg: VarianceTableConfig =
            serde_json::from_str(r#"{"lambda":0.5,"valid_rates":[1.5]}"#).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = serde_json::from_str::<SqrtSimConfig>(
            r#"{"loss":{"lambda":0.85},"learning_rate":0.01}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }
}
