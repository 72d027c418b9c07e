//! Closed-form generalization bounds and collaboration-level predictors.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::Vector;
use crate::tasks::LogisticTask;

/// Grid step of [`lambda_star_exact`].
pub const EXACT_GRID_STEP: f64 = 1e-3;

/// Every constant entering the bounds. `beta` is derived, not stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryInputs {
    pub l: f64,
    pub mu: f64,
    /// Gradient heterogeneity bound.
    pub g: f64,
    pub kappa: f64,
    /// Pseudo-dimension of the hypothesis class.
    pub pdim: usize,
    pub m: usize,
    pub n: usize,
    pub f: usize,
    pub delta: f64,
    /// Discrepancy between the client's distribution and the honest average.
    pub phi: f64,
    /// Initial suboptimality of the interpolated loss.
    pub l0: f64,
    pub t: usize,
}

impl TheoryInputs {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &'static str, x: f64| {
            if x >= 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, format!("must be finite and nonnegative, got {x}")))
            }
        };
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            return Err(invalid("mu", "must be positive"));
        }
        if !(self.l >= self.mu) || !self.l.is_finite() {
            return Err(invalid("L", format!("require L >= mu, got L={}, mu={}", self.l, self.mu)));
        }
        nonneg("G", self.g)?;
        nonneg("kappa", self.kappa)?;
        nonneg("phi", self.phi)?;
        nonneg("L0", self.l0)?;
        if self.pdim == 0 {
            return Err(invalid("pdim", "must be positive"));
        }
        if self.m == 0 {
            return Err(invalid("m", "must be positive"));
        }
        if 2 * self.f >= self.n {
            return Err(invalid("f", format!("require f < n/2, got n={}, f={}", self.n, self.f)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("delta", format!("must lie in (0, 1), got {}", self.delta)));
        }
        if self.t == 0 {
            return Err(invalid("T", "must be positive"));
        }
        Ok(())
    }

    fn honest(&self) -> f64 {
        (self.n - self.f) as f64
    }

    pub fn beta(&self) -> f64 {
        beta(self.pdim, self.m, self.delta)
    }
}

/// `sqrt(pdim ln(e m / pdim)) + sqrt(ln(1/δ))`. When `pdim > m` the
/// logarithm would drop below 1, so it is clamped there.
pub fn beta(pdim: usize, m: usize, delta: f64) -> f64 {
    let p = pdim as f64;
    let log = (std::f64::consts::E * m as f64 / p).ln().max(1.0);
    (p * log).sqrt() + (1.0 / delta).ln().sqrt()
}

/// Asymptotic error floor `5 L λ² κ G² / μ²`.
pub fn lemma1_asymptote(inp: &TheoryInputs, lambda: f64) -> f64 {
    5.0 * inp.l * lambda * lambda * inp.kappa * inp.g * inp.g / (inp.mu * inp.mu)
}

/// Transient `(1 - μ/2L)^T (L/μ) L0`.
pub fn lemma1_transient(inp: &TheoryInputs) -> f64 {
    let rate = 1.0 - inp.mu / (2.0 * inp.l);
    rate.powf(inp.t as f64) * (inp.l / inp.mu) * inp.l0
}

/// Optimization error bound after `T` projected steps with `η = 1/2L`.
pub fn lemma1_rhs(inp: &TheoryInputs, lambda: f64) -> f64 {
    lemma1_asymptote(inp, lambda) + lemma1_transient(inp)
}

/// Uniform deviation between the empirical and true interpolated risks.
pub fn lemma2_gap(inp: &TheoryInputs, lambda: f64) -> f64 {
    let h = inp.honest();
    let m = inp.m as f64;
    let local = 1.0 - lambda + lambda / h;
    2.0 * inp.beta() * (local * local / m + lambda * lambda / (m * h)).sqrt()
}

/// Excess true risk bound: optimization error, discrepancy and twice the gap.
pub fn theorem1_rhs(inp: &TheoryInputs, lambda: f64) -> f64 {
    lemma1_rhs(inp, lambda) + 2.0 * lambda * inp.phi + 2.0 * lemma2_gap(inp, lambda)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPrediction {
    pub lambda: f64,
    /// The denominator `(f/n) G²` vanished (no adversary or no dissimilarity),
    /// so the unclamped ratio is unbounded and full collaboration is returned.
    pub degenerate: bool,
}

/// `Π_[0,1]((sqrt(pdim/m) - Φ) / ((f/n) G²))`.
pub fn lambda_star_class(inp: &TheoryInputs) -> ClassPrediction {
    let denom = inp.f as f64 / inp.n as f64 * inp.g * inp.g;
    if denom == 0.0 {
        return ClassPrediction {
            lambda: 1.0,
            degenerate: true,
        };
    }
    let num = (inp.pdim as f64 / inp.m as f64).sqrt() - inp.phi;
    ClassPrediction {
        lambda: (num / denom).clamp(0.0, 1.0),
        degenerate: false,
    }
}

/// Minimizer of [`theorem1_rhs`] over `{0, 0.001, ..., 1}`; ties go to the smaller λ.
pub fn lambda_star_exact(inp: &TheoryInputs) -> f64 {
    let steps = (1.0 / EXACT_GRID_STEP).round() as usize;
    let mut best = (0.0, theorem1_rhs(inp, 0.0));
    for k in 1..=steps {
        let lambda = k as f64 / steps as f64;
        let v = theorem1_rhs(inp, lambda);
        if v < best.1 {
            best = (lambda, v);
        }
    }
    best.0
}

/// Empirical plug-in for the discrepancy: the largest gap between client
/// `client`'s held-out 0-1 risk and the honest-average held-out risk over the
/// probe models. It only sees finitely many models and finite test sets, so
/// it is a lower bound on the true discrepancy.
pub fn discrepancy_proxy(task: &LogisticTask, client: usize, probes: &[Vector]) -> Result<f64> {
    if probes.is_empty() {
        return Err(Error::Empty("probe set"));
    }
    let count = task.clients().len();
    if client >= count {
        return Err(Error::UnknownClient { index: client, count });
    }
    let mut worst = 0.0f64;
    for theta in probes {
        let mut total = 0.0;
        let mut own = 0.0;
        for j in 0..count {
            let e = task.test_error(j, theta)?;
            if j == client {
                own = e;
            }
            total += e;
        }
        worst = worst.max((own - total / count as f64).abs());
    }
    Ok(worst)
}
