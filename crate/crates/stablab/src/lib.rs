//! Numerical-stability laboratory for depth-estimation training.
//!
//! The crate implements the pieces of a monocular depth-estimation training
//! loop where NaN divergence originates: IEEE-754 binary32 boundary kernels
//! ([`fp32lab`]), the scale-invariant log loss family with both variance
//! estimators ([`losskit`]), the sigmoid output head with its initializers and
//! analytic backward pass ([`headnet`]), the Adam optimizer and step-decay
//! schedule ([`optimkit`]), and seeded synthetic-data generators ([`simgen`]).
//!
//! Everything on the reproduction path computes in binary32 with
//! round-to-nearest-even; binary64 is reserved for verification oracles and
//! evaluation metrics. The experiment runners and CLI live in the `stabbench`
//! crate.

pub mod fp32lab;
pub mod grid;
pub mod headnet;
pub mod losskit;
pub mod optimkit;
pub mod simgen;
