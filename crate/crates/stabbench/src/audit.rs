//! Configuration audit against the four stability guidelines.
//!
//! 1   — square-root loss destabilizes the late training phase;
//! 2-1 — with no epsilon the stable initialization range is 0.1..=0.6;
//! 2-2 — add epsilon (1e-24 recommended), which widens the range to 0.1..=1;
//! 3   — var-style loss must use the biased estimator and guard n = 0.

use serde::Serialize;
use std::fmt;

use stablab::headnet::{ConvDims, InitScheme};
use stablab::losskit::{LossConfig, LossStyle, VarianceEstimator};

use crate::config::PhaseHint;

pub const STABLE_SIGMA_MIN: f32 = 0.1;
pub const STABLE_SIGMA_MAX_NO_EPS: f32 = 0.6;
pub const STABLE_SIGMA_MAX_WITH_EPS: f32 = 1.0;
pub const RECOMMENDED_EPSILON: f32 = 1e-24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warn,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GuidelineId {
    #[serde(rename = "1")]
    SqrtLoss,
    #[serde(rename = "2-1")]
    InitRange,
    #[serde(rename = "2-2")]
    Epsilon,
    #[serde(rename = "3")]
    Estimator,
}

impl fmt::Display for GuidelineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GuidelineId::SqrtLoss => "1",
            GuidelineId::InitRange => "2-1",
            GuidelineId::Epsilon => "2-2",
            GuidelineId::Estimator => "3",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditFinding {
    pub guideline: GuidelineId,
    pub severity: Severity,
    pub message: String,
}

fn finding(guideline: GuidelineId, severity: Severity, message: String) -> AuditFinding {
    AuditFinding { guideline, severity, message }
}

/// Flags every guideline the configuration violates. An empty result means
/// the configuration sits inside the recommended envelope.
pub fn audit_config(
    loss: &LossConfig,
    init: &InitScheme,
    dims: ConvDims,
    phase: PhaseHint,
) -> Vec<AuditFinding> {
    let mut findings = Vec::new();

    if loss.sqrt_wrap && phase == PhaseHint::Late {
        findings.push(finding(
            GuidelineId::SqrtLoss,
            Severity::Warn,
            "square-root loss scales the gradient by 1/(2 sqrt(D)) and diverges as the loss \
             approaches zero; for the late phase switch to the plain scale-invariant log loss"
                .to_string(),
        ));
    }

    let sigma = init.sigma(dims);
    if loss.epsilon == 0.0 {
        if sigma < STABLE_SIGMA_MIN {
            findings.push(finding(
                GuidelineId::InitRange,
                Severity::Warn,
                format!(
                    "sigma_w = {sigma:.4} lies below the stable initialization range \
                     [{STABLE_SIGMA_MIN}, {STABLE_SIGMA_MAX_NO_EPS}]; the gradient scale \
                     vanishes and training slows"
                ),
            ));
        } else if sigma > STABLE_SIGMA_MAX_NO_EPS {
            findings.push(finding(
                GuidelineId::InitRange,
                Severity::Fail,
                format!(
                    "sigma_w = {sigma:.4} exceeds the stable initialization range \
                     [{STABLE_SIGMA_MIN}, {STABLE_SIGMA_MAX_NO_EPS}] at epsilon = 0; \
                     saturated logits reach log(0) and the loss goes NaN"
                ),
            ));
        }
        findings.push(finding(
            GuidelineId::Epsilon,
            Severity::Warn,
            format!(
                "epsilon is 0, so a saturated sigmoid (y = 0) reaches log(0); add epsilon, \
                 recommended {RECOMMENDED_EPSILON:e}"
            ),
        ));
    } else if sigma < STABLE_SIGMA_MIN {
        findings.push(finding(
            GuidelineId::Epsilon,
            Severity::Warn,
            format!(
                "sigma_w = {sigma:.4} lies below the stable initialization range \
                 [{STABLE_SIGMA_MIN}, {STABLE_SIGMA_MAX_WITH_EPS}] (quantified at \
                 epsilon = 1e-24); the gradient scale vanishes"
            ),
        ));
    } else if sigma > STABLE_SIGMA_MAX_WITH_EPS {
        findings.push(finding(
            GuidelineId::Epsilon,
            Severity::Warn,
            format!(
                "sigma_w = {sigma:.4} exceeds the stable initialization range \
                 [{STABLE_SIGMA_MIN}, {STABLE_SIGMA_MAX_WITH_EPS}] quantified at \
                 epsilon = 1e-24; the weight scale can grow during training"
            ),
        ));
    }

    if loss.style == LossStyle::Var && loss.estimator == VarianceEstimator::Unbiased {
        findings.push(finding(
            GuidelineId::Estimator,
            Severity::Fail,
            "var-style loss with the Bessel-corrected estimator computes the wrong loss for \
             small n and NaNs at n = 1; specify the biased estimator and skip n = 0 batches"
                .to_string(),
        ));
    }

    findings
}
