//! Robust personalized mean estimation.
//!
//! Each honest client `i` holds the sample mean `ŷ_i` of `m` Gaussian draws
//! around its true mean `μ_i`. Its estimate interpolates between the local
//! mean and a robust aggregate of every submitted mean:
//! `y_i = (1 - λ) ŷ_i + λ F(ŷ_1, …, ŷ_n)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate, AggregatorSpec};
use crate::attacks::{corrupt, AttackSpec};
use crate::error::{invalid, Result};
use crate::numerics::{mean_unchecked, purpose, sample_gaussian, RngStream, Vector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPopulation {
    pub n: usize,
    pub f: usize,
    /// Samples per client.
    pub m: usize,
    pub d: usize,
    /// Per-sample standard deviation.
    pub sigma: f64,
    /// Standard deviation of the true means around `base_mean`.
    pub sigma_h: f64,
    pub base_mean: f64,
}

impl GaussianPopulation {
    pub fn validate(&self) -> Result<()> {
        if 2 * self.f >= self.n {
            return Err(invalid("f", format!("require f < n/2, got n={}, f={}", self.n, self.f)));
        }
        if self.m == 0 {
            return Err(invalid("m", "must be at least 1"));
        }
        if self.d == 0 {
            return Err(invalid("d", "must be at least 1"));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(invalid("sigma", "must be nonnegative"));
        }
        if !(self.sigma_h >= 0.0) || !self.sigma_h.is_finite() {
            return Err(invalid("sigma_h", "must be nonnegative"));
        }
        if !self.base_mean.is_finite() {
            return Err(invalid("base_mean", "must be finite"));
        }
        Ok(())
    }

    pub fn honest(&self) -> usize {
        self.n - self.f
    }

    /// `σ²/m`, the variance of one coordinate of a local sample mean.
    pub fn local_variance(&self) -> f64 {
        self.sigma * self.sigma / self.m as f64
    }

    /// Expected `‖μ_i - μ̄_C‖²` under the population, `(1 - 1/(n-f)) σ_h² d`.
    /// Used for both the client term and `Δ²`.
    pub fn heterogeneity_plugin(&self) -> f64 {
        (1.0 - 1.0 / self.honest() as f64) * self.sigma_h * self.sigma_h * self.d as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PopulationDraw {
    pub true_means: Vec<Vector>,
    pub sample_means: Vec<Vector>,
}

/// Draws true means and local sample means for the honest clients.
pub fn draw_population(pop: &GaussianPopulation, rng: &RngStream) -> Result<PopulationDraw> {
    pop.validate()?;
    let base = Vector::filled(pop.d, pop.base_mean);
    let mut mean_rng = rng.derive(purpose::POPULATION).rng();
    let true_means = (0..pop.honest())
        .map(|_| sample_gaussian(&mut mean_rng, pop.d, &base, pop.sigma_h))
        .collect::<Result<Vec<_>>>()?;
    if pop.sigma == 0.0 {
        return Ok(PopulationDraw {
            sample_means: true_means.clone(),
            true_means,
        });
    }
    let samples = rng.derive(purpose::SAMPLES);
    let sample_means = true_means
        .iter()
        .enumerate()
        .map(|(i, mu)| {
            let mut r = samples.derive(i as u64).rng();
            let draws = (0..pop.m)
                .map(|_| sample_gaussian(&mut r, pop.d, mu, pop.sigma))
                .collect::<Result<Vec<_>>>()?;
            Ok(mean_unchecked(draws.iter(), pop.d))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PopulationDraw {
        true_means,
        sample_means,
    })
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(invalid("lambda", format!("must lie in [0, 1], got {lambda}")));
    }
    Ok(())
}

/// `(1 - λ) local + λ F(all_submitted)`.
pub fn interpolated_estimate(
    lambda: f64,
    local: &Vector,
    all_submitted: &[Vector],
    spec: &AggregatorSpec,
) -> Result<Vector> {
    check_lambda(lambda)?;
    let agg = aggregate(spec, all_submitted)?;
    local.check_dim(&agg)?;
    Ok(interpolate(lambda, local, &agg))
}

fn interpolate(lambda: f64, local: &Vector, agg: &Vector) -> Vector {
    let mut out = local.scale(1.0 - lambda);
    out.axpy(lambda, agg);
    out
}

/// Which honest clients a sweep reports.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportedClients {
    /// Client 0 only.
    #[default]
    First,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanTrialResult {
    pub trial: usize,
    pub lambda: f64,
    pub client_index: usize,
    pub squared_error: f64,
    pub master_seed: u64,
    pub stream_id: u64,
}

/// Monte-Carlo squared error of the interpolated estimator over a λ grid.
///
/// Every λ of a trial sees the same population draw and the same attack, so
/// curves across λ are directly comparable. Rows are ordered by
/// `(trial, λ, client)`.
pub fn run_mse_sweep(
    pop: &GaussianPopulation,
    lambdas: &[f64],
    spec: &AggregatorSpec,
    attack: &AttackSpec,
    trials: usize,
    rng: &RngStream,
    clients: ReportedClients,
) -> Result<Vec<MeanTrialResult>> {
    pop.validate()?;
    if trials == 0 {
        return Err(invalid("trials", "must be at least 1"));
    }
    if lambdas.is_empty() {
        return Err(invalid("lambdas", "grid is empty"));
    }
    lambdas.iter().try_for_each(|&l| check_lambda(l))?;
    if attack.f != pop.f {
        return Err(invalid(
            "attack.f",
            format!("attack has f={} but population has f={}", attack.f, pop.f),
        ));
    }
    let per_trial = (0..trials)
        .into_par_iter()
        .map(|t| {
            let stream = rng.derive_path(&[purpose::TRIAL, t as u64]);
            let draw = draw_population(pop, &stream)?;
            let mut submitted = draw.sample_means.clone();
            submitted.extend(corrupt(attack, &draw.sample_means, spec)?);
            let agg = aggregate(spec, &submitted)?;
            let reported = match clients {
                ReportedClients::First => 0..1,
                ReportedClients::All => 0..pop.honest(),
            };
            let mut rows = Vec::with_capacity(lambdas.len() * reported.len());
            for &lambda in lambdas {
                for i in reported.clone() {
                    let est = interpolate(lambda, &draw.sample_means[i], &agg);
                    rows.push(MeanTrialResult {
                        trial: t,
                        lambda,
                        client_index: i,
                        squared_error: est.dist_sq(&draw.true_means[i]),
                        master_seed: stream.master_seed,
                        stream_id: stream.stream_id,
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_trial.into_iter().flatten().collect())
}

/// Mean squared error per grid point, in grid order.
pub fn mean_error_by_lambda(results: &[MeanTrialResult], lambdas: &[f64]) -> Vec<f64> {
    lambdas
        .iter()
        .map(|&l| {
            let (sum, count) = results
                .iter()
                .filter(|r| r.lambda == l)
                .fold((0.0, 0usize), |(s, c), r| (s + r.squared_error, c + 1));
            if count == 0 {
                f64::NAN
            } else {
                sum / count as f64
            }
        })
        .collect()
}

/// `Γ(λ, κ) = λ²(κ + 1) - 2λ + h/(h - 1)` with `h = n - f` honest clients.
pub fn gamma(lambda: f64, kappa: f64, honest: usize) -> Result<f64> {
    if honest <= 1 {
        return Err(invalid("n - f", "must exceed 1 for the variance factor"));
    }
    let h = honest as f64;
    Ok(lambda * lambda * (kappa + 1.0) - 2.0 * lambda + h / (h - 1.0))
}

/// Upper bound on `E‖y_i^λ - μ_i‖²`:
/// `3 (1 - 1/h) σ² Γ(λ, κ)/m + 3 λ² (het_i + κ Δ²)`.
///
/// `het_i` is `‖μ_i - μ̄_C‖²` and `delta_sq` is `Δ²`; see
/// [`GaussianPopulation::heterogeneity_plugin`] for their expected values.
pub fn prop1_bound(
    lambda: f64,
    kappa: f64,
    pop: &GaussianPopulation,
    het_i: f64,
    delta_sq: f64,
) -> Result<f64> {
    check_lambda(lambda)?;
    let h = pop.honest() as f64;
    let g = gamma(lambda, kappa, pop.honest())?;
    Ok(3.0 * (1.0 - 1.0 / h) * pop.local_variance() * g
        + 3.0 * lambda * lambda * (het_i + kappa * delta_sq))
}

/// Minimizer of [`prop1_bound`] over λ, clamped to `[0, 1]`.
///
/// With zero noise and zero heterogeneity every λ is optimal; 1 is returned.
pub fn lambda_star_mean(
    pop: &GaussianPopulation,
    kappa: f64,
    het_i: f64,
    delta_sq: f64,
) -> Result<f64> {
    let h = pop.honest();
    if h <= 1 {
        return Err(invalid("n - f", "must exceed 1"));
    }
    let noise = (1.0 - 1.0 / h as f64) * pop.local_variance();
    let denom = (kappa + 1.0) * noise + het_i + kappa * delta_sq;
    if denom <= 0.0 {
        return Ok(1.0);
    }
    Ok((noise / denom).clamp(0.0, 1.0))
}
