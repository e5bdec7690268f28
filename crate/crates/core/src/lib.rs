//! Federated-learning simulation with reputation-based robust aggregation.
//!
//! The crate models the server side of a poisoning-resistant federated
//! system and the clients it trains with:
//!
//! - [`model`]: a dense softmax classifier with analytic gradients and
//!   seeded mini-batch SGD.
//! - [`data`]: synthetic cluster datasets and Dirichlet non-IID client
//!   partitioning.
//! - [`robust`]: per-coordinate update screening (range rescaling,
//!   repeated-median regression over value ranks, residual confidence
//!   scores, median rectification).
//! - [`reputation`]: subjective-logic reputation from screening outcomes,
//!   with exponential time decay over a sliding window.
//! - [`aggregate`]: FedAvg, coordinate-wise median, trimmed mean, residual
//!   re-weighting, and the reputation-weighted rule built from the two
//!   modules above.
//! - [`attack`]: label-flipping and backdoor poisoning with activation
//!   schedules.
//! - [`sim`]: deterministic round-based orchestration and metrics.
//! - [`theory`]: closed-form convergence-bound quantities.
//!
//! The crate is `no_std`-compatible (requires `alloc`); the default `std`
//! feature simply forwards to the standard library's float math.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod aggregate;
pub mod attack;
pub mod data;
pub mod error;
mod fmath;
pub mod model;
pub mod reputation;
pub mod rng;
pub mod robust;
pub mod sim;
pub mod theory;

pub use error::{Error, Result};
