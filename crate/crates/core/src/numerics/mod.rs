//! Vector arithmetic, seeded sampling and projection helpers.

mod rng;
mod vector;

pub use rng::{purpose, RngStream, StreamRng};
pub use vector::Vector;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{invalid, Error, Result};

/// Checks that every vector has the dimension of the first; returns it.
pub fn common_dim(vs: &[Vector]) -> Result<usize> {
    let first = vs.first().ok_or(Error::Empty("vector list"))?;
    for v in &vs[1..] {
        first.check_dim(v)?;
    }
    Ok(first.dim())
}

/// Coordinate-wise arithmetic mean.
pub fn mean_vectors(vs: &[Vector]) -> Result<Vector> {
    let dim = common_dim(vs)?;
    Ok(mean_unchecked(vs.iter(), dim))
}

pub(crate) fn mean_unchecked<'a>(vs: impl Iterator<Item = &'a Vector>, dim: usize) -> Vector {
    let mut acc = vec![0.0; dim];
    let mut count = 0usize;
    for v in vs {
        for (a, x) in acc.iter_mut().zip(v.iter()) {
            *a += x;
        }
        count += 1;
    }
    let inv = 1.0 / count as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Vector::from_raw(acc)
}

/// Euclidean projection onto the closed ball of the given radius at the origin.
pub fn project_ball(v: &Vector, radius: f64) -> Result<Vector> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(invalid("radius", format!("must be positive and finite, got {radius}")));
    }
    if !v.is_finite() {
        return Err(Error::NonFinite("projection input"));
    }
    let norm = v.norm();
    if norm <= radius {
        Ok(v.clone())
    } else {
        Ok(v.scale(radius / norm))
    }
}

/// Isotropic Gaussian draw `mean + stddev * z`, `z ~ N(0, I)`.
pub fn sample_gaussian<R: Rng + ?Sized>(
    rng: &mut R,
    dim: usize,
    mean: &Vector,
    stddev: f64,
) -> Result<Vector> {
    if !(stddev >= 0.0) || !stddev.is_finite() {
        return Err(invalid("stddev", format!("must be nonnegative, got {stddev}")));
    }
    if mean.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: mean.dim(),
        });
    }
    let coords = mean
        .iter()
        .map(|&m| {
            let z: f64 = StandardNormal.sample(rng);
            m + stddev * z
        })
        .collect();
    Ok(Vector::from_raw(coords))
}

/// Dirichlet draw via normalized Gamma variates.
pub fn sample_dirichlet<R: Rng + ?Sized>(rng: &mut R, alphas: &[f64]) -> Result<Vec<f64>> {
    if alphas.is_empty() {
        return Err(Error::Empty("dirichlet concentration"));
    }
    let gammas = alphas
        .iter()
        .map(|&a| {
            if !(a > 0.0) || !a.is_finite() {
                return Err(invalid("alpha", format!("must be positive and finite, got {a}")));
            }
            Gamma::new(a, 1.0).map_err(|e| invalid("alpha", e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    loop {
        let draws: Vec<f64> = gammas.iter().map(|g| g.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        // All-zero draws only happen through underflow at tiny alphas.
        if total > 0.0 && total.is_finite() {
            return Ok(draws.into_iter().map(|x| x / total).collect());
        }
    }
}
