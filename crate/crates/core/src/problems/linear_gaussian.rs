use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::ensemble::DiscreteMeasure;
use crate::error::{Error, Result};
use crate::potential::Potential;
use crate::rng::{fill_normals, Lane, SeedSpec, StreamRng};

use super::{Problem, ReferenceSample};

/// `delta = A y + eta`, `eta ~ N(0, Gamma)`, prior `N(y0, Gamma0)`.
#[derive(Debug, Clone)]
pub struct LinearGaussianProblem {
    id: String,
    a: DMatrix<f64>,
    gamma_inv: DMatrix<f64>,
    prior_mean: DVector<f64>,
    prior_cov: DMatrix<f64>,
    prior_prec: DMatrix<f64>,
    prior_chol: DMatrix<f64>,
    obs: DVector<f64>,
    post_mean: DVector<f64>,
    post_cov: DMatrix<f64>,
    post_prec: DMatrix<f64>,
    post_chol: DMatrix<f64>,
}

fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let ch = m.clone().cholesky().ok_or_else(|| Error::IllPosed(format!("{what} is not positive definite")))?;
    Ok((ch.inverse(), ch.l()))
}

impl LinearGaussianProblem {
    pub fn new(
        a: DMatrix<f64>,
        gamma: DMatrix<f64>,
        prior_mean: DVector<f64>,
        prior_cov: DMatrix<f64>,
        obs: DVector<f64>,
    ) -> Result<Self> {
        let (k, d) = a.shape();
        if gamma.shape() != (k, k) || obs.len() != k {
            return Err(Error::DimensionMismatch { expected: k, got: obs.len() });
        }
        if prior_cov.shape() != (d, d) || prior_mean.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: prior_mean.len() });
        }
        let (gamma_inv, _) = spd_inverse(&gamma, "noise covariance")?;
        let (prior_prec, prior_chol) = spd_inverse(&prior_cov, "prior covariance")?;
        let post_prec = a.transpose() * &gamma_inv * &a + &prior_prec;
        let (post_cov, _) = spd_inverse(&post_prec, "posterior precision")?;
        let rhs = a.transpose() * &gamma_inv * &obs + &prior_prec * &prior_mean;
        let post_mean = &post_cov * rhs;
        let (_, post_chol) = spd_inverse(&post_cov, "posterior covariance")?;
        Ok(LinearGaussianProblem {
            id: "linear-gaussian".into(),
            a,
            gamma_inv,
            prior_mean,
            prior_cov,
            prior_prec,
            prior_chol,
            obs,
            post_mean,
            post_cov,
            post_prec,
            post_chol,
        })
    }

    /// `A = Gamma = Gamma0 = I` in 2D, prior mean 0, data `(1.5, -0.5)`.
    pub fn identity_2d() -> Self {
        let i = DMatrix::identity(2, 2);
        Self::new(i.clone(), i.clone(), DVector::zeros(2), i, DVector::from_vec(vec![1.5, -0.5]))
            .expect("identity problem is well posed")
            .with_id("linear-gaussian-2d")
    }

    pub fn with_id(mut self, id: &str) -> Self {
        self.id = id.to_string();
        self
    }

    pub fn posterior(&self) -> (DVector<f64>, DMatrix<f64>) {
        (self.post_mean.clone(), self.post_cov.clone())
    }

    pub fn posterior_precision(&self) -> &DMatrix<f64> {
        &self.post_prec
    }

    pub fn prior_cov(&self) -> &DMatrix<f64> {
        &self.prior_cov
    }
}

/// `(y*, P^{-1})` of a linear-Gaussian problem.
pub fn linear_gaussian_posterior(p: &LinearGaussianProblem) -> (DVector<f64>, DMatrix<f64>) {
    p.posterior()
}

impl Potential for LinearGaussianProblem {
    fn dim(&self) -> usize {
        self.a.ncols()
    }
    fn value(&self, y: &[f64]) -> f64 {
        let y = DVector::from_row_slice(y);
        let r = &self.obs - &self.a * &y;
        let q = &y - &self.prior_mean;
        0.5 * r.dot(&(&self.gamma_inv * &r)) + 0.5 * q.dot(&(&self.prior_prec * &q))
    }
    fn gradient(&self, y: &[f64], grad: &mut [f64]) {
        let y = DVector::from_row_slice(y);
        let r = &self.obs - &self.a * &y;
        let g = -(self.a.transpose() * (&self.gamma_inv * r)) + &self.prior_prec * (&y - &self.prior_mean);
        grad.copy_from_slice(g.as_slice());
    }
}

fn gaussian_draw(mean: &DVector<f64>, chol: &DMatrix<f64>, rng: &mut StreamRng, out: &mut [f64]) {
    let mut xi = vec![0.0; mean.len()];
    fill_normals(rng, &mut xi);
    let y = mean + chol * DVector::from_vec(xi);
    out.copy_from_slice(y.as_slice());
}

impl Problem for LinearGaussianProblem {
    fn id(&self) -> String {
        self.id.clone()
    }
    fn dim(&self) -> usize {
        self.a.ncols()
    }
    fn potential(&self) -> Arc<dyn Potential> {
        Arc::new(self.clone())
    }
    /// Initial particles come from the prior.
    fn sample_initial(&self, rng: &mut StreamRng, out: &mut [f64]) {
        gaussian_draw(&self.prior_mean, &self.prior_chol, rng, out)
    }
    fn posterior_sample(&self, n: usize, seeds: &SeedSpec, slot: u32) -> Result<ReferenceSample> {
        let d = Problem::dim(self);
        let mut atoms = vec![0.0; n * d];
        for (i, row) in atoms.chunks_mut(d).enumerate() {
            let mut rng = seeds.rng(Lane::Posterior(slot), i as u64, 0);
            gaussian_draw(&self.post_mean, &self.post_chol, &mut rng, row);
        }
        Ok(ReferenceSample { measure: DiscreteMeasure::uniform(atoms, d)?, acceptance: None, quality_warning: false })
    }
}
