//! Simulation of Byzantine-robust, interpolated personalized federated
//! learning.
//!
//! Honest clients interpolate between their local objective and a robust
//! aggregate of everyone's contributions, with weight `λ` on collaboration.
//! The crate provides the aggregation rules, adversary models, the mean
//! estimation and gradient-descent protocols, closed-form bound evaluators,
//! and a deterministic experiment harness.

pub mod aggregation;
pub mod attacks;
pub mod error;
pub mod harness;
pub mod mean_estimation;
pub mod numerics;
pub mod pgd;
pub mod tasks;
pub mod theory;

pub use error::{Error, Result};
pub use numerics::{RngStream, Vector};
