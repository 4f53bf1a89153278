//! Nonfinite-value detection over the tensors of one training step.
//!
//! Events are recorded at first detection, before any optimizer update, and
//! attributed to the earliest tensor in pipeline order.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NanKind {
    #[serde(rename = "nan")]
    Nan,
    #[serde(rename = "+inf")]
    PosInf,
    #[serde(rename = "-inf")]
    NegInf,
}

/// First nonfinite value seen in a run: where and what.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NanEvent {
    /// Iteration for training runs; replica index for one-shot sweeps.
    pub iteration: u64,
    /// Name of the offending tensor in pipeline order.
    pub tensor: String,
    /// First offending flat index within that tensor.
    pub index: usize,
    pub kind: NanKind,
}

pub fn classify(v: f32) -> Option<NanKind> {
    if v.is_nan() {
        Some(NanKind::Nan)
    } else if v == f32::INFINITY {
        Some(NanKind::PosInf)
    } else if v == f32::NEG_INFINITY {
        Some(NanKind::NegInf)
    } else {
        None
    }
}

/// First nonfinite entry of a tensor, if any.
pub fn scan(values: &[f32]) -> Option<(usize, NanKind)> {
    values
        .iter()
        .enumerate()
        .find_map(|(i, &v)| classify(v).map(|k| (i, k)))
}

/// Scans named tensors in order and reports the earliest offender.
pub fn first_event<'a>(
    iteration: u64,
    tensors: impl IntoIterator<Item = (&'static str, &'a [f32])>,
) -> Option<NanEvent> {
    for (name, values) in tensors {
        if let Some((index, kind)) = scan(values) {
            return Some(NanEvent { iteration, tensor: name.to_string(), index, kind });
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scan_finds_the_first_offender() {
        assert_eq!(scan(&[1.0, 2.0, 3.0]), None);
        assert_eq!(scan(&[1.0, f32::NAN, f32::INFINITY]), Some((1, NanKind::Nan)));
        assert_eq!(scan(&[f32::NEG_INFINITY]), Some((0, NanKind::NegInf)));
    }

    #[test]
    fn pipeline_order_decides_attribution() {
        let diffs = [0.0f32, f32::NEG_INFINITY];
        let loss = [f32::NAN];
        let ev = first_event(7, [("log_diffs", &diffs[..]), ("loss", &loss[..])]).unwrap();
        assert_eq!(ev.tensor, "log_diffs");
        assert_eq!(ev.index, 1);
        assert_eq!(ev.kind, NanKind::NegInf);
        assert_eq!(ev.iteration, 7);
    }
}
