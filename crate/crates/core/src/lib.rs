//! Distributed empirical likelihood inference for a mean vector.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only the numerical
//! engine:
//!
//! - [`el`]: the empirical-likelihood dual objective, its derivatives and a
//!   feasibility-preserving damped Newton solver.
//! - [`protocol`]: the coordinator/worker rounds that compute the Lagrange
//!   multiplier across machines, over a pluggable [`protocol::Transport`].
//! - [`byzantine`]: pairwise gradient-distance machine selection and the
//!   geometric-median pilot estimator.
//! - [`stats`]: chi-squared distribution functions, test decisions and
//!   confidence-region tracing.
//! - [`datagen`]: seeded simulation designs and the Monte Carlo harness.
//!
//! File formats, threaded transports and the command line live in the
//! `del-cli` crate.

#![no_std]

extern crate alloc;

pub mod byzantine;
pub mod datagen;
pub mod el;
mod error;
pub mod linalg;
pub mod protocol;
pub mod special;
pub mod stats;

pub use error::{Error, Result};

/// 1-based machine index within a cluster.
pub type MachineId = u32;
