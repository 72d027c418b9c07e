//! Byzantine behaviors.
//!
//! All adversaries are omniscient and collude: they see the honest vectors
//! and the aggregation rule and submit `f` identical vectors.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate, AggregatorSpec};
use crate::error::{invalid, Error, Result};
use crate::numerics::{mean_vectors, Vector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "attack", rename_all = "snake_case")]
pub enum AttackKind {
    /// Adversaries behave like an average honest client.
    None,
    /// Submit `-tau * honest_mean`.
    SignFlip { tau: f64 },
    /// Submit `-epsilon * honest_mean`.
    Foe { epsilon: f64 },
    /// FOE with `epsilon` picked from `grid` to maximize the aggregate's
    /// distance from the honest mean in the current round.
    AutoFoe { grid: Vec<f64> },
}

impl AttackKind {
    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::SignFlip { .. } => "sign_flip",
            AttackKind::Foe { .. } => "foe",
            AttackKind::AutoFoe { .. } => "auto_foe",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AttackKind::None => Ok(()),
            AttackKind::SignFlip { tau } if !tau.is_finite() => {
                Err(invalid("tau", "must be finite"))
            }
            AttackKind::Foe { epsilon } if !epsilon.is_finite() => {
                Err(invalid("epsilon", "must be finite"))
            }
            AttackKind::AutoFoe { grid } if grid.is_empty() => {
                Err(invalid("foe_grid", "must be nonempty"))
            }
            AttackKind::AutoFoe { grid } if grid.iter().any(|e| !e.is_finite()) => {
                Err(invalid("foe_grid", "entries must be finite"))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub f: usize,
}

impl AttackSpec {
    pub fn new(kind: AttackKind, f: usize) -> Self {
        Self { kind, f }
    }

    pub fn none(f: usize) -> Self {
        Self::new(AttackKind::None, f)
    }

    pub fn sign_flip(f: usize) -> Self {
        Self::new(AttackKind::SignFlip { tau: 1.0 }, f)
    }
}

/// Anything that can play the `f` Byzantine clients of a round.
pub trait Adversary: Sync {
    fn count(&self) -> usize;

    fn corrupt(&self, honest: &[Vector], aggregator: &AggregatorSpec) -> Result<Vec<Vector>>;
}

impl Adversary for AttackSpec {
    fn count(&self) -> usize {
        self.f
    }

    fn corrupt(&self, honest: &[Vector], aggregator: &AggregatorSpec) -> Result<Vec<Vector>> {
        corrupt(self, honest, aggregator)
    }
}

/// Produces the `f` vectors the adversaries submit this round.
pub fn corrupt(spec: &AttackSpec, honest: &[Vector], aggregator: &AggregatorSpec) -> Result<Vec<Vector>> {
    spec.kind.validate()?;
    if honest.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("honest vectors"));
    }
    let mean = mean_vectors(honest)?;
    if spec.f == 0 {
        return Ok(Vec::new());
    }
    let point = match &spec.kind {
        AttackKind::None => mean,
        AttackKind::SignFlip { tau } => mean.scale(-tau),
        AttackKind::Foe { epsilon } => mean.scale(-epsilon),
        AttackKind::AutoFoe { grid } => {
            let eps = best_foe_epsilon(grid, honest, &mean, spec.f, aggregator)?.0;
            mean.scale(-eps)
        }
    };
    Ok(vec![point; spec.f])
}

/// Returns the grid entry with the largest damage and that damage.
/// Ties go to the smaller epsilon.
pub fn best_foe_epsilon(
    grid: &[f64],
    honest: &[Vector],
    honest_mean: &Vector,
    f: usize,
    aggregator: &AggregatorSpec,
) -> Result<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    let mut all = honest.to_vec();
    for &eps in grid {
        all.truncate(honest.len());
        all.extend(std::iter::repeat_n(honest_mean.scale(-eps), f));
        let agg = aggregate(aggregator, &all)?;
        let damage = agg.dist_sq(honest_mean).sqrt();
        best = match best {
            None => Some((eps, damage)),
            Some((be, bd)) if damage > bd || (damage == bd && eps < be) => Some((eps, damage)),
            keep => keep,
        };
    }
    best.ok_or_else(|| invalid("foe_grid", "must be nonempty"))
}
