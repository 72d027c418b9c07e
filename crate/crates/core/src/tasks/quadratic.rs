use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{SmoothnessConstants, Task};
use crate::error::{Error, Result};
use crate::numerics::{common_dim, mean_vectors, Vector};

/// `L_i(θ) = ½‖θ - c_i‖²`: 1-smooth and 1-strongly convex.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticTask {
    centers: Vec<Vector>,
    center_mean: Vector,
}

impl QuadraticTask {
    pub fn new(centers: Vec<Vector>) -> Result<Self> {
        common_dim(&centers)?;
        if centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("quadratic centers"));
        }
        let center_mean = mean_vectors(&centers)?;
        Ok(Self {
            centers,
            center_mean,
        })
    }

    /// Centers `offset + spread * z_i` with standard Gaussian `z_i`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, clients: usize, dim: usize, offset: &Vector, spread: f64) -> Result<Self> {
        let centers = (0..clients)
            .map(|_| {
                let coords = offset
                    .iter()
                    .take(dim)
                    .map(|&o| {
                        let z: f64 = StandardNormal.sample(rng);
                        o + spread * z
                    })
                    .collect();
                Vector::new(coords)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(centers)
    }

    pub fn centers(&self) -> &[Vector] {
        &self.centers
    }

    pub fn center_mean(&self) -> &Vector {
        &self.center_mean
    }

    /// `sqrt((1/|C|) Σ ‖c_i - c̄‖²)`, the exact gradient heterogeneity.
    pub fn heterogeneity(&self) -> f64 {
        let s: f64 = self.centers.iter().map(|c| c.dist_sq(&self.center_mean)).sum();
        (s / self.centers.len() as f64).sqrt()
    }
}

impl Task for QuadraticTask {
    fn num_clients(&self) -> usize {
        self.centers.len()
    }

    fn dim(&self) -> usize {
        self.center_mean.dim()
    }

    fn loss_and_grad(&self, client: usize, theta: &Vector) -> Result<(f64, Vector)> {
        self.check_client(client)?;
        self.check_theta(theta)?;
        let grad = theta - &self.centers[client];
        Ok((0.5 * grad.norm_sq(), grad))
    }

    fn constants(&self) -> SmoothnessConstants {
        SmoothnessConstants { l: 1.0, mu: 1.0 }
    }

    fn interpolated_minimizer(&self, client: usize, lambda: f64) -> Option<Vector> {
        let c = self.centers.get(client)?;
        let mut out = c.scale(1.0 - lambda);
        out.axpy(lambda, &self.center_mean);
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use crate::tasks::{gradient_spread_sq, interpolated_loss};

    fn task() -> QuadraticTask {
        QuadraticTask::new(vec![
            Vector::new(vec![1.0, 2.0, 0.0]).unwrap(),
            Vector::new(vec![-1.0, 0.0, 3.0]).unwrap(),
            Vector::new(vec![3.0, 1.0, -2.0]).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn minimizer_and_unit_offset() {
        let t = task();
        let c = t.centers()[0].clone();
        let (loss, grad) = t.loss_and_grad(0, &c).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grad.norm(), 0.0);
        let moved = &c + &Vector::basis(3, 0);
        let (loss, grad) = t.loss_and_grad(0, &moved).unwrap();
        assert_eq!(loss, 0.5);
        assert_eq!(grad, Vector::basis(3, 0));
        assert_eq!(t.constants(), SmoothnessConstants { l: 1.0, mu: 1.0 });
        assert!(t.loss_and_grad(3, &c).is_err());
        assert!(t.loss_and_grad(0, &Vector::zeros(2)).is_err());
    }

    #[test]
    fn closed_form_minimizer_is_stationary() {
        let t = task();
        for lambda in [0.0, 0.3, 1.0] {
            let x = t.interpolated_minimizer(1, lambda).unwrap();
            let h = 1e-6;
            for k in 0..3 {
                let e = Vector::basis(3, k).scale(h);
                let up = interpolated_loss(&t, 1, lambda, &(&x + &e)).unwrap();
                let down = interpolated_loss(&t, 1, lambda, &(&x - &e)).unwrap();
                assert!(((up - down) / (2.0 * h)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn heterogeneity_is_theta_independent() {
        let t = QuadraticTask::random(&mut RngStream::new(4).rng(), 6, 4, &Vector::zeros(4), 2.0).unwrap();
        let g2 = t.heterogeneity().powi(2);
        let mut rng = RngStream::new(5).rng();
        for _ in 0..10 {
            let theta = crate::numerics::sample_gaussian(&mut rng, 4, &Vector::zeros(4), 10.0).unwrap();
            assert!((gradient_spread_sq(&t, &theta).unwrap() - g2).abs() < 1e-9 * g2.max(1.0));
        }
    }
}
