//! Task-based quantization toolkit.
//!
//! A hybrid acquisition chain `ŝ = B · Q(A · x)` is built from three parts:
//! an analog combiner `A`, a bank of identical scalar ADCs `Q`, and a digital
//! recovery matrix `B`. This crate designs such chains for linear and quadratic
//! estimation tasks in closed form, learns them from data with a small
//! differentiable network, projects combiners onto hardware-feasible sets, and
//! evaluates everything with a seeded Monte Carlo harness.
//!
//! Module map:
//!
//! - [`quant`]: uniform (optionally dithered) and learned scalar quantizers.
//! - [`linear_task`]: model-aware designer for linear-MMSE tasks.
//! - [`quadratic_task`]: lifting of quadratic-form tasks onto the linear designer.
//! - [`bounds`]: Gaussian MMSE and the reverse water-filling distortion-rate bound.
//! - [`deep`]: layered network with a trainable soft quantization activation.
//! - [`hardware`]: phase-shifter and metasurface combiner constraints.
//! - [`scenarios`]: the statistical models used by the experiments.
//! - [`harness`]: Monte Carlo engine, config parsing, CSV and binary file formats.

pub mod bounds;
pub mod deep;
pub mod error;
pub mod hardware;
pub mod harness;
pub mod linalg;
pub mod linear_task;
pub mod quadratic_task;
pub mod quant;
pub mod rng;
pub mod scenarios;

pub use error::{Error, Result};
