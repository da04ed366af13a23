//! Minimum-length scheduling for half-duplex wireless powered communication
//! networks.
//!
//! Users harvest energy from an access point during a shared downlink phase and
//! then transmit their demand one after another on the uplink. The crate
//! provides:
//!
//! * [`channel`]: random network instances (path loss, shadowing, Rayleigh fading).
//! * [`physics`]: rate model, optimality-condition features, output set mapping
//!   and feasibility evaluation.
//! * [`opt`]: the exact bi-level solver (per-user subproblem + bisection master).
//! * [`nn`]: a small dense network engine with exact backprop and AdamW.
//! * [`xai`]: mutual-information ranking of candidate input features.
//! * [`pipelines`]: the learned and hybrid solvers, repair and timed inference.
//! * [`dataset`]: JSON-lines dataset files.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Per-user loops index several parallel arrays at once.
#![allow(clippy::needless_range_loop)]

pub mod channel;
pub mod dataset;
mod error;
pub mod nn;
pub mod opt;
pub mod physics;
pub mod pipelines;
pub mod xai;

pub use channel::{NetworkInstance, SystemParams};
pub use error::{Error, Result};
pub use opt::SolverConfig;
pub use physics::{FeasibilityReport, Features, Schedule, SchedulePlan};
