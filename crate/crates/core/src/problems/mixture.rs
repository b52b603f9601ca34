use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Matrix2, Vector2};
use rand::Rng;

use crate::ensemble::DiscreteMeasure;
use crate::error::{Error, Result};
use crate::potential::Potential;
use crate::rng::{fill_normals, Lane, SeedSpec, StreamRng};

use super::{Problem, ReferenceSample};

pub const DEFAULT_RADIUS: f64 = 5.0;

/// Equal-weight mixture of `K` Gaussians in the plane with shared covariance `Sigma`,
/// centers `r (cos((i-1) pi/2), sin((i-1) pi/2))`.
#[derive(Debug, Clone)]
pub struct GaussianMixtureProblem {
    centers: Vec<Vector2<f64>>,
    sigma: Matrix2<f64>,
    sigma_inv: Matrix2<f64>,
    chol: Matrix2<f64>,
    log_norm: f64,
    init_mean: Vector2<f64>,
}

impl GaussianMixtureProblem {
    /// `K` modes at radius `radius`, identity covariance, initial density centered
    /// at `(-radius, 0)`.
    pub fn new(k: usize, radius: f64) -> Result<Self> {
        Self::with_covariance(k, radius, Matrix2::identity())
    }

    pub fn with_covariance(k: usize, radius: f64, sigma: Matrix2<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidConfig("mixture needs at least one mode".into()));
        }
        let ch = sigma
            .cholesky()
            .ok_or_else(|| Error::IllPosed("mixture covariance is not positive definite".into()))?;
        let centers = (0..k)
            .map(|i| {
                let a = i as f64 * PI / 2.0;
                Vector2::new(radius * a.cos(), radius * a.sin())
            })
            .collect();
        let log_norm = (2.0 * PI * k as f64 * sigma.determinant().sqrt()).ln();
        Ok(GaussianMixtureProblem {
            centers,
            sigma,
            sigma_inv: ch.inverse(),
            chol: ch.l(),
            log_norm,
            init_mean: Vector2::new(-radius, 0.0),
        })
    }

    pub fn centers(&self) -> &[Vector2<f64>] {
        &self.centers
    }

    pub fn sigma(&self) -> &Matrix2<f64> {
        &self.sigma
    }

    pub fn init_mean(&self) -> Vector2<f64> {
        self.init_mean
    }

    /// Index of the center closest to `x`.
    pub fn nearest_center(&self, x: &[f64]) -> usize {
        let p = Vector2::new(x[0], x[1]);
        let mut best = 0;
        for (i, c) in self.centers.iter().enumerate() {
            if (p - c).norm_squared() < (p - self.centers[best]).norm_squared() {
                best = i;
            }
        }
        best
    }

    /// Fractions of the atoms closest to each center.
    pub fn mode_fractions(&self, m: &DiscreteMeasure) -> Vec<f64> {
        let mut f = vec![0.0; self.centers.len()];
        for i in 0..m.len() {
            f[self.nearest_center(m.atom(i))] += m.weights()[i];
        }
        f
    }

    fn exponents(&self, x: &[f64]) -> Vec<f64> {
        let p = Vector2::new(x[0], x[1]);
        self.centers
            .iter()
            .map(|c| {
                let r = p - c;
                -0.5 * r.dot(&(self.sigma_inv * r))
            })
            .collect()
    }

    fn draw(&self, mean: &Vector2<f64>, rng: &mut StreamRng, out: &mut [f64]) {
        let mut xi = [0.0; 2];
        fill_normals(rng, &mut xi);
        let y = mean + self.chol * Vector2::new(xi[0], xi[1]);
        out[0] = y[0];
        out[1] = y[1];
    }
}

/// Value and gradient of the mixture potential at `x`.
pub fn mixture_potential(p: &GaussianMixtureProblem, x: &[f64]) -> (f64, [f64; 2]) {
    let mut g = [0.0; 2];
    let v = p.value_and_gradient(x, &mut g);
    (v, g)
}

impl Potential for GaussianMixtureProblem {
    fn dim(&self) -> usize {
        2
    }
    fn value(&self, x: &[f64]) -> f64 {
        let e = self.exponents(x);
        let mx = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + e.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        self.log_norm - lse
    }
    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        self.value_and_gradient(x, grad);
    }
    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let e = self.exponents(x);
        let mx = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = e.iter().map(|v| (v - mx).exp()).collect();
        let total: f64 = w.iter().sum();
        let p = Vector2::new(x[0], x[1]);
        let mut g = Vector2::zeros();
        for (c, wi) in self.centers.iter().zip(&w) {
            g += (wi / total) * (self.sigma_inv * (p - c));
        }
        grad[0] = g[0];
        grad[1] = g[1];
        self.log_norm - (mx + total.ln())
    }
}

impl Problem for GaussianMixtureProblem {
    fn id(&self) -> String {
        format!("mixture-k{}", self.centers.len())
    }
    fn dim(&self) -> usize {
        2
    }
    fn potential(&self) -> Arc<dyn Potential> {
        Arc::new(self.clone())
    }
    fn sample_initial(&self, rng: &mut StreamRng, out: &mut [f64]) {
        self.draw(&self.init_mean, rng, out)
    }
    /// Exact mixture sampling: uniform component, then a Gaussian draw.
    fn posterior_sample(&self, n: usize, seeds: &SeedSpec, slot: u32) -> Result<ReferenceSample> {
        let mut atoms = vec![0.0; 2 * n];
        for (i, row) in atoms.chunks_mut(2).enumerate() {
            let mut rng = seeds.rng(Lane::Posterior(slot), i as u64, 0);
            let c = rng.random_range(0..self.centers.len());
            self.draw(&self.centers[c], &mut rng, row);
        }
        Ok(ReferenceSample { measure: DiscreteMeasure::uniform(atoms, 2)?, acceptance: None, quality_warning: false })
    }
}
