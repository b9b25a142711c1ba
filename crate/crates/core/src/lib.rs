//! Low-resolution emulators of chaotic systems trained with a
//! high-resolution auxiliary task.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`dynsys`] integrates Kuramoto-Sivashinsky, Brusselator or two-tier
//!    Lorenz 96 at high resolution.
//! 2. [`coarsegrain`] block-averages the result into paired low-resolution
//!    `X` and high-resolution `Y` sequences.
//! 3. [`training`] fits a shared GRU trunk on `Y`, freezes it, and fine-tunes
//!    the low-resolution head on `X`; or trains on `X` alone as a baseline.
//! 4. [`evaluation`] scores hold-out likelihood and ensemble forecast skill.

// Numeric kernels index several buffers in lockstep, and `!(x > 0.0)` is
// the intended way to reject NaN alongside non-positive values.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod coarsegrain;
pub mod commands;
pub mod config;
pub mod dynsys;
pub mod error;
pub mod evaluation;
pub mod formats;
pub mod neuralnet;
pub mod seqmodel;
pub mod series;
pub mod training;

pub use error::{Error, Result};
pub use series::Series;
