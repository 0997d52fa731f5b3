//! Adjoint Schrödinger bridge matching at desk scale.
//!
//! The pipeline has three trainable stages on top of a variance-preserving
//! base SDE whose noise rate decreases from data (`t = 0`) to prior (`t = 1`):
//!
//! 1. [`stage1`]: a forward control `u` is fitted as a data-to-energy
//!    sampler by alternating adjoint matching and corrector matching. Its
//!    endpoint pairs approximate the Schrödinger bridge coupling.
//! 2. [`stage2`]: a backward control `v` is fitted by bridge matching
//!    under that coupling, using the closed-form reciprocal sampler.
//! 3. [`distill`]: `v` is distilled into a one-step generator by
//!    alternating fake-control bridge matching with control matching.
//!
//! [`oracles`] holds exact discrete and Gaussian references used by the tests.

pub mod bridge;
pub mod config;
pub mod data;
pub mod distill;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod oracles;
pub mod parallel;
pub mod plot;
pub mod rng;
pub mod run;
pub mod schedule;
pub mod sde;
pub mod stage1;
pub mod stage2;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use schedule::ScheduleParams;
