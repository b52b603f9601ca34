//! Homotopy potentials `H(s) = (1 - s) Psi + s Phi` and switch schedules `s(t)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::potential::{CallCounter, GaussianPotential, Potential};

/// Blend of an auxiliary potential and the target at a fixed `s`.
///
/// Each evaluation is counted once: as a free call when `s == 0`, as a forward call
/// otherwise, since any `s > 0` needs the target.
pub struct HomotopyPotential {
    aux: Arc<dyn Potential>,
    target: Arc<dyn Potential>,
    s: f64,
    counter: Arc<CallCounter>,
}

impl HomotopyPotential {
    pub fn new(aux: Arc<dyn Potential>, target: Arc<dyn Potential>, s: f64, counter: Arc<CallCounter>) -> Result<Self> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::InvalidConfig(format!("blend parameter {s} outside [0, 1]")));
        }
        if aux.dim() != target.dim() {
            return Err(Error::DimensionMismatch { expected: target.dim(), got: aux.dim() });
        }
        Ok(HomotopyPotential { aux, target, s, counter })
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    fn count(&self) {
        self.counter.record(self.s == 0.0, 1);
    }
}

impl Potential for HomotopyPotential {
    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn value(&self, y: &[f64]) -> f64 {
        self.count();
        if self.s == 1.0 {
            self.target.value(y)
        } else if self.s == 0.0 {
            self.aux.value(y)
        } else {
            (1.0 - self.s) * self.aux.value(y) + self.s * self.target.value(y)
        }
    }

    fn gradient(&self, y: &[f64], grad: &mut [f64]) {
        self.count();
        if self.s == 1.0 {
            self.target.gradient(y, grad)
        } else if self.s == 0.0 {
            self.aux.gradient(y, grad)
        } else {
            let mut ga = vec![0.0; grad.len()];
            self.aux.gradient(y, &mut ga);
            self.target.gradient(y, grad);
            for (g, a) in grad.iter_mut().zip(ga) {
                *g = (1.0 - self.s) * a + self.s * *g;
            }
        }
    }
}

/// Default auxiliary potential: centered Gaussian with covariance `8 I`.
pub fn default_aux(dim: usize) -> Arc<dyn Potential> {
    Arc::new(GaussianPotential::isotropic(dim, 8.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SwitchShape {
    /// `s(t) = value` everywhere.
    Constant(f64),
    Linear,
    /// `((t - t_start) / (t_end - t_start))^4`.
    Convex,
    /// `1 - ((t_end - t) / (t_end - t_start))^4`.
    Concave,
}

/// Hold at 0 until `t_start`, ramp, hold at 1 from `t_end` on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomotopySchedule {
    pub shape: SwitchShape,
    pub t_start: f64,
    pub t_end: f64,
    pub horizon: f64,
}

impl HomotopySchedule {
    pub fn constant(value: f64, horizon: f64) -> Self {
        HomotopySchedule { shape: SwitchShape::Constant(value), t_start: 0.0, t_end: 0.0, horizon }
    }

    /// Plain target potential throughout.
    pub fn target_only(horizon: f64) -> Self {
        Self::constant(1.0, horizon)
    }

    pub fn ramp(shape: SwitchShape, t_start: f64, t_end: f64, horizon: f64) -> Result<Self> {
        let sched = HomotopySchedule { shape, t_start, t_end, horizon };
        sched.validate()?;
        Ok(sched)
    }

    /// Linear ramp on `[0.2 T, 0.9 T]`.
    pub fn linear_design(horizon: f64) -> Self {
        HomotopySchedule { shape: SwitchShape::Linear, t_start: 0.2 * horizon, t_end: 0.9 * horizon, horizon }
    }

    /// Concave quartic ramp on `[0.1 T, 0.9 T]`.
    pub fn concave_design(horizon: f64) -> Self {
        HomotopySchedule { shape: SwitchShape::Concave, t_start: 0.1 * horizon, t_end: 0.9 * horizon, horizon }
    }

    pub fn validate(&self) -> Result<()> {
        match self.shape {
            SwitchShape::Constant(v) if !(0.0..=1.0).contains(&v) => {
                Err(Error::InvalidConfig(format!("constant schedule value {v} outside [0, 1]")))
            }
            SwitchShape::Constant(_) => Ok(()),
            _ if !(self.t_start >= 0.0 && self.t_end > self.t_start) => Err(Error::InvalidConfig(format!(
                "switch window [{}, {}] is empty",
                self.t_start, self.t_end
            ))),
            _ => Ok(()),
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        let x = match self.shape {
            SwitchShape::Constant(v) => return v,
            _ if t <= self.t_start => return 0.0,
            _ if t >= self.t_end => return 1.0,
            _ => (t - self.t_start) / (self.t_end - self.t_start),
        };
        let s = match self.shape {
            SwitchShape::Linear => x,
            SwitchShape::Convex => x.powi(4),
            SwitchShape::Concave => 1.0 - (1.0 - x).powi(4),
            SwitchShape::Constant(_) => unreachable!(),
        };
        s.clamp(0.0, 1.0)
    }
}

pub fn schedule_value(sched: &HomotopySchedule, t: f64) -> f64 {
    sched.value(t)
}

/// For `i = 1..k_parts-1`, the grid time `n * dt` in `[0, horizon]` whose schedule value
/// is closest to `(i / k_parts)^gamma`; ties go to the earlier time.
pub fn enrichment_times_from_switch(sched: &HomotopySchedule, k_parts: usize, gamma: f64, dt: f64) -> Result<Vec<f64>> {
    if let SwitchShape::Constant(_) = sched.shape {
        return Err(Error::EmptySchedule);
    }
    if k_parts < 2 || !(gamma > 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidConfig("need k_parts >= 2, gamma > 0 and dt > 0".into()));
    }
    let n = (sched.horizon / dt).round() as usize;
    let values: Vec<f64> = (0..=n).map(|k| sched.value(k as f64 * dt)).collect();
    Ok((1..k_parts)
        .map(|i| {
            let target = (i as f64 / k_parts as f64).powf(gamma);
            let mut best = 0;
            for (k, v) in values.iter().enumerate() {
                if (v - target).abs() < (values[best] - target).abs() {
                    best = k;
                }
            }
            best as f64 * dt
        })
        .collect())
}

/// Gaussian `exp(-H(s))` for Gaussian `Psi` and `Phi`: returns mean and covariance.
pub fn gaussian_blend(aux: &GaussianPotential, target: &GaussianPotential, s: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = aux.precision() * (1.0 - s) + target.precision() * s;
    let rhs = aux.precision() * aux.mean() * (1.0 - s) + target.precision() * target.mean() * s;
    let chol = p.cholesky().ok_or_else(|| Error::IllPosed("blended precision is not positive definite".into()))?;
    Ok((chol.solve(&rhs), chol.inverse()))
}

/// Closed-form 2-Wasserstein distance between two Gaussians.
pub fn gaussian_w2(m1: &DVector<f64>, c1: &DMatrix<f64>, m2: &DVector<f64>, c2: &DMatrix<f64>) -> f64 {
    let sqrt = |m: &DMatrix<f64>| {
        let e = m.clone().symmetric_eigen();
        let s = DMatrix::from_diagonal(&e.eigenvalues.map(|l| l.max(0.0).sqrt()));
        &e.eigenvectors * s * e.eigenvectors.transpose()
    };
    let r1 = sqrt(c1);
    let cross = sqrt(&(&r1 * c2 * &r1));
    let w2 = (m1 - m2).norm_squared() + (c1 + c2 - cross * 2.0).trace();
    w2.max(0.0).sqrt()
}
