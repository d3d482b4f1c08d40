//! Subspace-routed continual learning: spectral task keys, whitened memory blocks,
//! baseline learners and the synthetic benchmarks used to compare them.
//!
//! Layering runs bottom up: `numkernel` (dense linear algebra, RNG), `envs`,
//! `backbone`, `signature`, `memory`, `learners`, `metrics`, then `harness`,
//! which wires experiments to CSV and SVG output.

// Config checks are written as `!(x > 0.0)` on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod numkernel;
pub mod envs;
pub mod backbone;
pub mod signature;
pub mod memory;
pub mod learners;
pub mod metrics;
pub mod harness;
