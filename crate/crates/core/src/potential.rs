use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Scalar field `Phi` with an analytic gradient. Implementations do no call counting;
/// wrap them in [`Counted`] for that.
pub trait Potential: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, y: &[f64]) -> f64;
    fn gradient(&self, y: &[f64], grad: &mut [f64]);
    fn value_and_gradient(&self, y: &[f64], grad: &mut [f64]) -> f64 {
        self.gradient(y, grad);
        self.value(y)
    }
}

impl<P: Potential + ?Sized> Potential for Arc<P> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, y: &[f64]) -> f64 {
        (**self).value(y)
    }
    fn gradient(&self, y: &[f64], grad: &mut [f64]) {
        (**self).gradient(y, grad)
    }
    fn value_and_gradient(&self, y: &[f64], grad: &mut [f64]) -> f64 {
        (**self).value_and_gradient(y, grad)
    }
}

/// Forward and free call totals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct CallCount {
    pub forward: u64,
    pub free: u64,
}

impl std::ops::Add for CallCount {
    type Output = CallCount;
    fn add(self, o: CallCount) -> CallCount {
        CallCount { forward: self.forward + o.forward, free: self.free + o.free }
    }
}

/// Thread-safe counters shared between a run and its potentials.
#[derive(Debug, Default)]
pub struct CallCounter {
    forward: AtomicU64,
    free: AtomicU64,
}

impl CallCounter {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn add_forward(&self, n: u64) {
        self.forward.fetch_add(n, Ordering::Relaxed);
    }

    pub fn add_free(&self, n: u64) {
        self.free.fetch_add(n, Ordering::Relaxed);
    }

    pub fn record(&self, free: bool, n: u64) {
        if free {
            self.add_free(n)
        } else {
            self.add_forward(n)
        }
    }

    pub fn get(&self) -> CallCount {
        CallCount {
            forward: self.forward.load(Ordering::Relaxed),
            free: self.free.load(Ordering::Relaxed),
        }
    }
}

/// Counts one call per evaluation (value, gradient or both) of the inner potential.
/// With `free = true` the calls land on the free counter.
pub struct Counted {
    inner: Arc<dyn Potential>,
    counter: Arc<CallCounter>,
    free: bool,
}

impl Counted {
    pub fn new(inner: Arc<dyn Potential>, counter: Arc<CallCounter>, free: bool) -> Self {
        Counted { inner, counter, free }
    }

    pub fn counter(&self) -> &Arc<CallCounter> {
        &self.counter
    }

    pub fn is_free(&self) -> bool {
        self.free
    }
}

impl Potential for Counted {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&self, y: &[f64]) -> f64 {
        self.counter.record(self.free, 1);
        self.inner.value(y)
    }
    fn gradient(&self, y: &[f64], grad: &mut [f64]) {
        self.counter.record(self.free, 1);
        self.inner.gradient(y, grad)
    }
    fn value_and_gradient(&self, y: &[f64], grad: &mut [f64]) -> f64 {
        self.counter.record(self.free, 1);
        self.inner.value_and_gradient(y, grad)
    }
}

/// `Phi(y) = 1/2 (y - m)^T P (y - m)` for a symmetric precision `P`.
#[derive(Debug, Clone)]
pub struct GaussianPotential {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
}

impl GaussianPotential {
    pub fn from_precision(mean: DVector<f64>, precision: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if precision.shape() != (d, d) {
            return Err(Error::DimensionMismatch { expected: d, got: precision.nrows() });
        }
        Ok(GaussianPotential { mean, precision })
    }

    pub fn from_covariance(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::IllPosed("covariance is not positive definite".into()))?;
        Self::from_precision(mean, chol.inverse())
    }

    /// Centered isotropic Gaussian with covariance `variance * I`.
    pub fn isotropic(dim: usize, variance: f64) -> Self {
        GaussianPotential {
            mean: DVector::zeros(dim),
            precision: DMatrix::identity(dim, dim) / variance,
        }
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }
}

impl Potential for GaussianPotential {
    fn dim(&self) -> usize {
        self.mean.len()
    }
    fn value(&self, y: &[f64]) -> f64 {
        let r = DVector::from_row_slice(y) - &self.mean;
        0.5 * r.dot(&(&self.precision * &r))
    }
    fn gradient(&self, y: &[f64], grad: &mut [f64]) {
        let r = DVector::from_row_slice(y) - &self.mean;
        grad.copy_from_slice((&self.precision * r).as_slice());
    }
}

/// `Phi(y) = c`, zero gradient.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPotential {
    pub dim: usize,
    pub value: f64,
}

impl Potential for ConstantPotential {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, _y: &[f64]) -> f64 {
        self.value
    }
    fn gradient(&self, _y: &[f64], grad: &mut [f64]) {
        grad.fill(0.0)
    }
}

/// Pushforward of a potential under `y' = A y + v`: `Phi'(y') = Phi(A^{-1}(y' - v))`.
pub struct AffinePullback {
    inner: Arc<dyn Potential>,
    a_inv: DMatrix<f64>,
    shift: DVector<f64>,
}

impl AffinePullback {
    pub fn new(inner: Arc<dyn Potential>, a: &DMatrix<f64>, shift: DVector<f64>) -> Result<Self> {
        let a_inv = a
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::IllPosed("affine map is singular".into()))?;
        Ok(AffinePullback { inner, a_inv, shift })
    }

    fn preimage(&self, y: &[f64]) -> Vec<f64> {
        let r = DVector::from_row_slice(y) - &self.shift;
        (&self.a_inv * r).as_slice().to_vec()
    }
}

impl Potential for AffinePullback {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&self, y: &[f64]) -> f64 {
        self.inner.value(&self.preimage(y))
    }
    fn gradient(&self, y: &[f64], grad: &mut [f64]) {
        let x = self.preimage(y);
        let mut g = vec![0.0; x.len()];
        self.inner.gradient(&x, &mut g);
        let gy = self.a_inv.transpose() * DVector::from_vec(g);
        grad.copy_from_slice(gy.as_slice());
    }
}

/// Central finite-difference gradient, used by tests and diagnostics.
pub fn finite_difference_gradient(p: &dyn Potential, y: &[f64], h: f64) -> Vec<f64> {
    let mut x = y.to_vec();
    (0..y.len())
        .map(|k| {
            x[k] = y[k] + h;
            let up = p.value(&x);
            x[k] = y[k] - h;
            let down = p.value(&x);
            x[k] = y[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counted_records_one_call_per_evaluation() {
        let c = CallCounter::new();
        let p = Counted::new(Arc::new(GaussianPotential::isotropic(2, 1.0)), c.clone(), false);
        let mut g = [0.0; 2];
        p.gradient(&[1.0, 2.0], &mut g);
        p.value(&[1.0, 2.0]);
        p.value_and_gradient(&[1.0, 2.0], &mut g);
        assert_eq!(c.get(), CallCount { forward: 3, free: 0 });
        let f = Counted::new(Arc::new(GaussianPotential::isotropic(2, 1.0)), c.clone(), true);
        f.gradient(&[0.0, 0.0], &mut g);
        assert_eq!(c.get(), CallCount { forward: 3, free: 1 });
    }

    #[test]
    fn gaussian_gradient_matches_differences() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5]);
        let p = GaussianPotential::from_covariance(DVector::from_vec(vec![1.0, -1.0]), cov).unwrap();
        let y = [0.3, 0.9];
        let mut g = [0.0; 2];
        p.gradient(&y, &mut g);
        let fd = finite_difference_gradient(&p, &y, 1e-5);
        for k in 0..2 {
            assert!((g[k] - fd[k]).abs() < 1e-7 * (1.0 + g[k].abs()));
        }
    }

    #[test]
    fn pullback_gradient_is_chain_rule() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 0.5]);
        let p = AffinePullback::new(
            Arc::new(GaussianPotential::isotropic(2, 1.0)),
            &a,
            DVector::from_vec(vec![1.0, 2.0]),
        )
        .unwrap();
        let y = [0.4, -0.7];
        let mut g = [0.0; 2];
        p.gradient(&y, &mut g);
        let fd = finite_difference_gradient(&p, &y, 1e-5);
        for k in 0..2 {
            assert!((g[k] - fd[k]).abs() < 1e-7 * (1.0 + g[k].abs()));
        }
    }
}
