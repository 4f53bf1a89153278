//! Binary64 reference routes for the loss family.
//!
//! Deliberately plain two-pass formulas, kept separate from the binary32
//! implementations so verification always compares two independent
//! computation paths. Used by `estimator_gap` and by the test suites; never
//! by the binary32 reproduction path.

use super::{LossStyle, VarianceEstimator};

pub fn mean_f64(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn variance_f64(values: &[f64], estimator: VarianceEstimator) -> f64 {
    let n = values.len() as f64;
    let mean = mean_f64(values);
    let ss: f64 = values.iter().map(|&v| (v - mean) * (v - mean)).sum();
    match estimator {
        VarianceEstimator::Biased => ss / n,
        VarianceEstimator::Unbiased => ss / (n - 1.0),
    }
}

pub fn mean_style_f64(values: &[f64], lambda: f64) -> f64 {
    let n = values.len() as f64;
    let mean_sq = values.iter().map(|&v| v * v).sum::<f64>() / n;
    let mean = mean_f64(values);
    mean_sq - lambda * mean * mean
}

pub fn var_style_f64(values: &[f64], lambda: f64, estimator: VarianceEstimator) -> f64 {
    let mean = mean_f64(values);
    variance_f64(values, estimator) + (1.0 - lambda) * mean * mean
}

pub fn silog_f64(
    values: &[f64],
    lambda: f64,
    style: LossStyle,
    estimator: VarianceEstimator,
    sqrt_wrap: bool,
) -> f64 {
    let base = match style {
        LossStyle::Mean => mean_style_f64(values, lambda),
        LossStyle::Var => var_style_f64(values, lambda, estimator),
    };
    if sqrt_wrap {
        base.sqrt()
    } else {
        base
    }
}

/// Analytic d-level gradient in binary64 (same closed forms as the binary32
/// path). Correctness of the forms is established against finite differences
/// of [`silog_f64`]; this route exists for exact-arithmetic property checks
/// such as the zero-homogeneity of the sqrt gradient.
pub fn grad_silog_f64(
    values: &[f64],
    lambda: f64,
    style: LossStyle,
    estimator: VarianceEstimator,
    sqrt_wrap: bool,
) -> Vec<f64> {
    let n = values.len() as f64;
    let sum: f64 = values.iter().sum();
    let mut grad: Vec<f64> = match (style, estimator) {
        (LossStyle::Mean, _) | (LossStyle::Var, VarianceEstimator::Biased) => {
            let mean_term = 2.0 * lambda / (n * n) * sum;
            values.iter().map(|&v| 2.0 / n * v - mean_term).collect()
        }
        (LossStyle::Var, VarianceEstimator::Unbiased) => {
            let mean = sum / n;
            let mean_term = 2.0 * (1.0 - lambda) / n * mean;
            values
                .iter()
                .map(|&v| 2.0 / (n - 1.0) * (v - mean) + mean_term)
                .collect()
        }
    };
    if sqrt_wrap {
        let base = silog_f64(values, lambda, style, estimator, false);
        let scale = 0.5 / base.sqrt();
        for g in &mut grad {
            *g *= scale;
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example_in_f64() {
        let d = [1.0, 3.0];
        assert_eq!(mean_style_f64(&d, 0.5), 3.0);
        assert_eq!(var_style_f64(&d, 0.5, VarianceEstimator::Biased), 3.0);
        assert_eq!(var_style_f64(&d, 0.5, VarianceEstimator::Unbiased), 4.0);
    }
}
