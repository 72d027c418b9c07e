//! Client objectives.
//!
//! A [`Task`] exposes the honest clients' empirical losses `L_i` and their
//! gradients. Quadratic tasks have closed-form minimizers and serve as
//! oracles; logistic tasks carry held-out data for accuracy measurement.

mod logistic;
mod quadratic;

pub use logistic::{
    make_logistic_task, ClientData, Dataset, LogisticParams, LogisticTask, Split,
};
pub use quadratic::QuadraticTask;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numerics::Vector;

/// Smoothness `L` and strong convexity `μ` shared by all honest losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessConstants {
    pub l: f64,
    pub mu: f64,
}

impl SmoothnessConstants {
    pub fn new(l: f64, mu: f64) -> Result<Self> {
        if !(mu > 0.0) || !(l >= mu) || !l.is_finite() {
            return Err(invalid("constants", format!("require L >= mu > 0, got L={l}, mu={mu}")));
        }
        Ok(Self { l, mu })
    }

    /// `1/(2L)`.
    pub fn default_step(&self) -> f64 {
        0.5 / self.l
    }
}

/// Held-out metrics for one client.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub test_loss: f64,
    pub test_accuracy: f64,
}

pub trait Task: Sync {
    /// Number of honest clients.
    fn num_clients(&self) -> usize;

    fn dim(&self) -> usize;

    /// Full-batch empirical loss and gradient of client `client` at `theta`.
    fn loss_and_grad(&self, client: usize, theta: &Vector) -> Result<(f64, Vector)>;

    fn constants(&self) -> SmoothnessConstants;

    /// Held-out loss and accuracy, when the task has test data.
    fn evaluate(&self, _client: usize, _theta: &Vector) -> Option<Result<Evaluation>> {
        None
    }

    /// Closed-form minimizer of `(1 - λ) L_i + λ L_C` over all of `R^d`, when known.
    fn interpolated_minimizer(&self, _client: usize, _lambda: f64) -> Option<Vector> {
        None
    }

    fn check_client(&self, client: usize) -> Result<()> {
        if client >= self.num_clients() {
            return Err(crate::Error::UnknownClient {
                index: client,
                count: self.num_clients(),
            });
        }
        Ok(())
    }

    fn check_theta(&self, theta: &Vector) -> Result<()> {
        if theta.dim() != self.dim() {
            return Err(crate::Error::DimensionMismatch {
                expected: self.dim(),
                found: theta.dim(),
            });
        }
        if !theta.is_finite() {
            return Err(crate::Error::NonFinite("theta"));
        }
        Ok(())
    }
}

/// `(1 - λ) L_i(θ) + λ L_C(θ)`.
pub fn interpolated_loss<T: Task + ?Sized>(task: &T, client: usize, lambda: f64, theta: &Vector) -> Result<f64> {
    let (local, _) = task.loss_and_grad(client, theta)?;
    if lambda == 0.0 {
        return Ok(local);
    }
    let mut total = 0.0;
    for j in 0..task.num_clients() {
        total += task.loss_and_grad(j, theta)?.0;
    }
    Ok((1.0 - lambda) * local + lambda * total / task.num_clients() as f64)
}

/// Mean squared deviation of honest gradients from their average at `theta`.
pub fn gradient_spread_sq<T: Task + ?Sized>(task: &T, theta: &Vector) -> Result<f64> {
    let grads = (0..task.num_clients())
        .map(|j| task.loss_and_grad(j, theta).map(|(_, g)| g))
        .collect::<Result<Vec<_>>>()?;
    let mean = crate::numerics::mean_vectors(&grads)?;
    Ok(grads.iter().map(|g| g.dist_sq(&mean)).sum::<f64>() / grads.len() as f64)
}
