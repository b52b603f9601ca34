//! Euler-Maruyama steppers for overdamped, scaled, EKS and ALDI dynamics.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::ensemble::{compute_stats, Ensemble};
use crate::error::{Error, Result};
use crate::potential::Potential;
use crate::rng::Streams;

#[derive(Debug, Clone, PartialEq)]
pub enum PropagatorKind {
    Overdamped,
    /// Constant preconditioner `C0` and its symmetric square root.
    ScaledOverdamped { c0: DMatrix<f64>, root: DMatrix<f64> },
    Eks,
    Aldi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Propagator {
    pub kind: PropagatorKind,
    pub dt: f64,
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("time step {dt} must be positive")))
    }
}

impl Propagator {
    pub fn overdamped(dt: f64) -> Result<Self> {
        check_dt(dt)?;
        Ok(Propagator { kind: PropagatorKind::Overdamped, dt })
    }

    pub fn eks(dt: f64) -> Result<Self> {
        check_dt(dt)?;
        Ok(Propagator { kind: PropagatorKind::Eks, dt })
    }

    pub fn aldi(dt: f64) -> Result<Self> {
        check_dt(dt)?;
        Ok(Propagator { kind: PropagatorKind::Aldi, dt })
    }

    pub fn scaled(c0: DMatrix<f64>, dt: f64) -> Result<Self> {
        check_dt(dt)?;
        let root = spd_sqrt(&c0)?;
        Ok(Propagator { kind: PropagatorKind::ScaledOverdamped { c0, root }, dt })
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            PropagatorKind::Overdamped => "overdamped",
            PropagatorKind::ScaledOverdamped { .. } => "scaled",
            PropagatorKind::Eks => "eks",
            PropagatorKind::Aldi => "aldi",
        }
    }

    fn interacting(&self) -> bool {
        matches!(self.kind, PropagatorKind::Eks | PropagatorKind::Aldi)
    }

    /// One step from `e.t` to `e.t + dt`. Particle `i` draws its noise from stream
    /// `(i, step_index)` of `streams`. Evaluates the gradient once per particle.
    pub fn step(
        &self,
        e: &Ensemble,
        pot: &dyn Potential,
        streams: &Streams,
        step_index: u64,
    ) -> Result<Ensemble> {
        let (b, d) = (e.batch_size(), e.dim());
        if pot.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: pot.dim() });
        }
        if self.interacting() && b < 2 {
            return Err(Error::InvalidEnsemble(format!(
                "{} needs at least 2 particles, got {b}",
                self.name()
            )));
        }
        let mut grads = vec![0.0; b * d];
        grads
            .par_chunks_mut(d)
            .zip(e.as_slice().par_chunks(d))
            .for_each(|(g, y)| pot.gradient(y, g));
        if grads.iter().any(|x| !x.is_finite()) {
            return Err(Error::DivergedStep { step: step_index });
        }
        let dt = self.dt;
        let noise_scale = (2.0 * dt).sqrt();
        let mut out = vec![0.0; b * d];
        match &self.kind {
            PropagatorKind::Overdamped => {
                out.par_chunks_mut(d).enumerate().for_each(|(i, o)| {
                    let y = e.particle(i);
                    let g = &grads[i * d..(i + 1) * d];
                    streams.normals(i as u64, step_index, o);
                    for k in 0..d {
                        o[k] = y[k] - dt * g[k] + noise_scale * o[k];
                    }
                });
            }
            PropagatorKind::ScaledOverdamped { c0, root } => {
                out.par_chunks_mut(d).enumerate().for_each(|(i, o)| {
                    let y = e.particle(i);
                    let g = DVector::from_row_slice(&grads[i * d..(i + 1) * d]);
                    let mut xi = vec![0.0; d];
                    streams.normals(i as u64, step_index, &mut xi);
                    let drift = c0 * g;
                    let kick = root * DVector::from_vec(xi);
                    for k in 0..d {
                        o[k] = y[k] - dt * drift[k] + noise_scale * kick[k];
                    }
                });
            }
            PropagatorKind::Eks | PropagatorKind::Aldi => {
                let stats = compute_stats(e)?;
                let correction = if self.kind == PropagatorKind::Aldi {
                    (d as f64 + 1.0) / b as f64
                } else {
                    0.0
                };
                let cov = &stats.covariance;
                let root = &stats.sqrt_factor;
                let mean = &stats.mean;
                out.par_chunks_mut(d).enumerate().for_each(|(i, o)| {
                    let y = e.particle(i);
                    let g = &grads[i * d..(i + 1) * d];
                    let mut xi = vec![0.0; b];
                    streams.normals(i as u64, step_index, &mut xi);
                    for k in 0..d {
                        let mut cg = 0.0;
                        for l in 0..d {
                            cg += cov[(k, l)] * g[l];
                        }
                        let mut kick = 0.0;
                        for (j, x) in xi.iter().enumerate() {
                            kick += root[(k, j)] * x;
                        }
                        let mut v = y[k] - dt * cg;
                        if correction != 0.0 {
                            v += dt * (correction * (y[k] - mean[k]));
                        }
                        o[k] = v + noise_scale * kick;
                    }
                });
            }
        }
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::DivergedStep { step: step_index });
        }
        Ok(Ensemble::from_raw(out, d, e.t + dt))
    }

    /// Runs `n_steps` steps with step indices `first_step..first_step + n_steps` and
    /// returns the snapshots at relative steps `0, record_every, ...` plus the last step.
    pub fn propagate(
        &self,
        e: &Ensemble,
        pot: &dyn Potential,
        n_steps: usize,
        streams: &Streams,
        first_step: u64,
        record_every: usize,
    ) -> Result<Vec<Ensemble>> {
        if n_steps == 0 || record_every == 0 {
            return Err(Error::InvalidConfig("n_steps and record_every must be positive".into()));
        }
        warn_small_batch(self, e);
        let mut snaps = vec![e.clone()];
        let mut cur = e.clone();
        for k in 0..n_steps {
            cur = self.step(&cur, pot, streams, first_step + k as u64)?;
            if (k + 1) % record_every == 0 || k + 1 == n_steps {
                snaps.push(cur.clone());
            }
        }
        Ok(snaps)
    }
}

pub(crate) fn warn_small_batch(p: &Propagator, e: &Ensemble) {
    if p.interacting() && e.batch_size() <= e.dim() + 1 {
        log::warn!(
            "{} with {} particles in dimension {}: batch size should exceed D+1",
            p.name(),
            e.batch_size(),
            e.dim()
        );
    }
}

/// Symmetric PSD square root via eigendecomposition; errors unless the matrix is SPD.
pub fn spd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::InvalidConfig("preconditioner must be square".into()));
    }
    let asym = (m - m.transpose()).norm();
    if asym > 1e-12 * m.norm().max(1.0) {
        return Err(Error::InvalidConfig("preconditioner must be symmetric".into()));
    }
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidConfig("preconditioner must be positive definite".into()));
    }
    let s = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(&eig.eigenvectors * s * eig.eigenvectors.transpose())
}
