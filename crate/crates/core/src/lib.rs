//! Simulate, identify and forecast lettuce greenhouse dynamics.
//!
//! A first-principles greenhouse/crop model generates training scenarios
//! under a weather-driven controller. A small mean-field Bayesian MLP is
//! fitted to normalized finite-difference derivatives of those scenarios and
//! then rolled out as a neural ODE, once per posterior draw, to give
//! probabilistic multi-day forecasts.
//!
//! Module map:
//! - [`physics`]: model equations and RK4 integration
//! - [`weather`]: synthetic and measured disturbance series
//! - [`datagen`]: control policy and scenario generation
//! - [`dataset`]: derivative targets, normalization, training matrices
//! - [`bnn`]: Bayesian MLP with pathwise gradients and SNR pruning
//! - [`trainer`]: Adam training loop and checkpoints
//! - [`forecast`]: ensemble rollouts, confidence bands, scoring
//! - [`cli`]: the `simulate` / `train` / `forecast` / `evaluate` pipeline

// `!(a >= b)` comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bnn;
pub mod cli;
pub mod config;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod forecast;
pub mod io;
pub mod physics;
pub mod trainer;
pub mod weather;

pub use error::{Error, Result};

/// Derives an independent 64-bit seed for `stream` from `root`
/// (SplitMix64 finalizer over the pair).
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    let mut z = root
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
