//! Differentially private training with randomized loss smoothing.
//!
//! The crate is split along the lines of the training pipeline:
//!
//! - [`nn`]: a small dense network with exact per-sample gradients.
//! - [`dp`]: DP-SGD with Poisson subsampling, per-sample clipping, Gaussian
//!   noise and the optional smoothed per-sample gradient.
//! - [`accountant`]: Gaussian-mechanism calibration, advanced composition and
//!   Rényi-DP accounting for the Poisson-subsampled Gaussian mechanism.
//! - [`landscape`]: the two-basin toy objective, Monte Carlo smoothing,
//!   sharpness, filter-normalized slices and smoothness estimation.
//! - [`pate`]: teacher ensembles, the Confident-GNMax aggregator and smoothed
//!   student training.
//! - [`data`] and [`stats`]: in-memory datasets, synthetic benchmarks and
//!   multi-seed summaries.
//!
//! Everything here is pure computation over `alloc`; file formats, the CLI and
//! the experiment driver live in the `dplis-harness` crate. All randomness is
//! drawn from keyed counter-based streams (see [`rng`]), so results depend only
//! on the seed and never on evaluation order.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod accountant;
pub mod data;
pub mod dp;
pub mod error;
pub mod landscape;
pub mod linalg;
pub mod nn;
pub mod objective;
pub mod pate;
pub mod rng;
pub mod sgd;
pub mod stats;

pub use error::{Error, Result};
pub use rng::RngSeed;
