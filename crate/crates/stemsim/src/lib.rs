//! Deterministic simulator for federated nonconvex stochastic optimization.
//!
//! The crate provides:
//!
//! * [`problems`] — synthetic K-worker finite-sum objectives with exact
//!   per-sample, per-worker and global gradient oracles, plus measured
//!   smoothness/variance constants;
//! * [`schedules`] — the step-size, momentum and batch/local-update
//!   trade-off laws for STEM and FedAvg, in both the theoretical and the
//!   tuned practical mode;
//! * [`engine`] — the two training loops with exact IFO and communication
//!   accounting and bitwise-reproducible runs;
//! * [`diagnostics`] — tracking error, potential, consensus/drift sums,
//!   ε-stationarity queries and finite-difference verification;
//! * [`experiment`] — config-driven runs, trade-off sweeps and complexity
//!   exponent fits with CSV/JSON outputs.

pub mod config;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod problems;
pub mod rng;
pub mod schedules;
pub mod vecops;

pub use error::{Error, Result};
