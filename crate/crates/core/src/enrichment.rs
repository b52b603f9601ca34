//! Enrichment schemes growing a batch from `b` to `b + a` particles mid-run.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;

use crate::ensemble::{compute_stats, empirical_measure, DiscreteMeasure, Ensemble};
use crate::error::{Error, Result};
use crate::potential::{CallCount, Potential};
use crate::propagators::Propagator;
use crate::rng::{Lane, Streams};
use crate::sinkhorn::{sinkhorn_divergence, Divergence, SinkhornConfig};

/// Kick variance rule for [`EnrichmentScheme::RandomKick`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KickScale {
    /// `dt_kick = dt * (trace(C) / D + 1e-8)`.
    Covariance,
    /// Fixed `dt_kick`.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnrichmentScheme {
    /// Propagate the whole ensemble `delta_steps` steps on a private noise stream
    /// and append `a` of the propagated particles.
    ForwardSlice { delta_steps: usize },
    /// Append `a` particles copied from the snapshot `delta_steps` steps back.
    BackwardSlice { delta_steps: usize },
    /// Append selected particles moved by the diffusion part only, over
    /// `step_multiple * dt`.
    DiffusionPropagation { step_multiple: u32 },
    RandomKick { scale: KickScale },
    /// Moment-matched Gaussian draws. `None` picks `1e-8 * trace(C) / D`.
    GaussianTransport { jitter: Option<f64> },
    /// Splits `a` evenly over the parts and applies them in order. With
    /// `from_originals` every part selects only among the original `b` particles,
    /// otherwise from the batch grown by the previous parts.
    Stacked { parts: Vec<EnrichmentScheme>, from_originals: bool },
}

impl EnrichmentScheme {
    pub fn diffusion() -> Self {
        EnrichmentScheme::DiffusionPropagation { step_multiple: 1 }
    }

    /// `k` diffusion parts with step sizes `dt, 2 dt, ..., k dt`.
    pub fn stacked_diffusion(k: u32) -> Self {
        EnrichmentScheme::Stacked {
            parts: (1..=k).map(|m| EnrichmentScheme::DiffusionPropagation { step_multiple: m }).collect(),
            from_originals: false,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnrichmentScheme::ForwardSlice { .. } => "forward-slice",
            EnrichmentScheme::BackwardSlice { .. } => "backward-slice",
            EnrichmentScheme::DiffusionPropagation { .. } => "diffusion",
            EnrichmentScheme::RandomKick { .. } => "random-kick",
            EnrichmentScheme::GaussianTransport { .. } => "gaussian-transport",
            EnrichmentScheme::Stacked { .. } => "stacked",
        }
    }

    /// Snapshots of history (one per step, current one included) this scheme needs.
    pub fn history_needed(&self) -> usize {
        match self {
            EnrichmentScheme::BackwardSlice { delta_steps } => delta_steps + 1,
            EnrichmentScheme::Stacked { parts, .. } => {
                parts.iter().map(|p| p.history_needed()).max().unwrap_or(1)
            }
            _ => 1,
        }
    }

    pub fn validate(&self, a: usize) -> Result<()> {
        match self {
            EnrichmentScheme::ForwardSlice { delta_steps } | EnrichmentScheme::BackwardSlice { delta_steps }
                if *delta_steps == 0 =>
            {
                Err(Error::InvalidConfig("slice length must be positive".into()))
            }
            EnrichmentScheme::DiffusionPropagation { step_multiple: 0 } => {
                Err(Error::InvalidConfig("diffusion step multiple must be positive".into()))
            }
            EnrichmentScheme::RandomKick { scale: KickScale::Fixed(v) } if !(*v >= 0.0) => {
                Err(Error::InvalidConfig("kick variance must be nonnegative".into()))
            }
            EnrichmentScheme::GaussianTransport { jitter: Some(j) } if !(*j >= 0.0) => {
                Err(Error::InvalidConfig("jitter must be nonnegative".into()))
            }
            EnrichmentScheme::Stacked { parts, .. } => {
                if parts.is_empty() || a % parts.len() != 0 {
                    return Err(Error::InvalidConfig(format!(
                        "{a} added particles cannot be split over {} parts",
                        parts.len()
                    )));
                }
                parts.iter().try_for_each(|p| p.validate(a / parts.len()))
            }
            _ => Ok(()),
        }
    }

    /// Calls consumed when enriching a batch of `b` by `a` particles. Only forward
    /// slicing propagates, and its coupled drift needs all `b` particles per step.
    pub fn forward_call_cost(&self, b: usize, a: usize) -> CallCount {
        match self {
            EnrichmentScheme::ForwardSlice { delta_steps } => {
                CallCount { forward: (b * delta_steps) as u64, free: 0 }
            }
            EnrichmentScheme::Stacked { parts, from_originals } => {
                let share = a / parts.len().max(1);
                let mut total = CallCount::default();
                for (k, p) in parts.iter().enumerate() {
                    let cur = if *from_originals { b } else { b + k * share };
                    total = total + p.forward_call_cost(cur, share);
                }
                total
            }
            _ => CallCount::default(),
        }
    }
}

/// One enrichment: at global step `step`, add `batch` particles with `scheme`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnrichmentEvent {
    pub step: usize,
    pub batch: usize,
    pub scheme: EnrichmentScheme,
}

/// Initial batch plus events at strictly increasing steps.
#[derive(Debug, Clone, PartialEq)]
pub struct EnrichmentPlan {
    pub initial_batch: usize,
    pub events: Vec<EnrichmentEvent>,
}

impl EnrichmentPlan {
    /// No enrichment: a plain run with `batch` particles.
    pub fn none(batch: usize) -> Self {
        EnrichmentPlan { initial_batch: batch, events: Vec::new() }
    }

    pub fn new(initial_batch: usize, events: Vec<EnrichmentEvent>) -> Result<Self> {
        let plan = EnrichmentPlan { initial_batch, events };
        plan.validate()?;
        Ok(plan)
    }

    /// Events given by time; each time must sit on the `dt` grid.
    pub fn from_times(initial_batch: usize, events: &[(f64, usize, EnrichmentScheme)], dt: f64) -> Result<Self> {
        let events = events
            .iter()
            .map(|(t, b, scheme)| {
                Ok(EnrichmentEvent { step: snap_to_grid(*t, dt)?, batch: *b, scheme: scheme.clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(initial_batch, events)
    }

    pub fn validate(&self) -> Result<()> {
        if self.initial_batch == 0 {
            return Err(Error::InvalidConfig("initial batch must be positive".into()));
        }
        let mut last = 0;
        for (i, ev) in self.events.iter().enumerate() {
            if ev.step == 0 || (i > 0 && ev.step <= last) {
                return Err(Error::InvalidConfig("enrichment steps must be positive and strictly increasing".into()));
            }
            if ev.batch == 0 {
                return Err(Error::InvalidConfig("enrichment batch must be positive".into()));
            }
            ev.scheme.validate(ev.batch)?;
            last = ev.step;
        }
        Ok(())
    }

    /// Final batch size `b_bar`.
    pub fn total_batch(&self) -> usize {
        self.initial_batch + self.events.iter().map(|e| e.batch).sum::<usize>()
    }

    /// Batch size used by the propagation step leaving global step `k`.
    pub fn batch_at(&self, k: usize) -> usize {
        self.initial_batch + self.events.iter().filter(|e| e.step <= k).map(|e| e.batch).sum::<usize>()
    }
}

/// Grid index of `t`; errors when `t` is not a multiple of `dt`.
pub fn snap_to_grid(t: f64, dt: f64) -> Result<usize> {
    let k = (t / dt).round();
    if !(k >= 0.0) || (k * dt - t).abs() > 1e-9 * dt.max(t.abs()) {
        return Err(Error::InvalidConfig(format!("time {t} is not a multiple of dt = {dt}")));
    }
    Ok(k as usize)
}

/// Everything an enrichment needs besides the history.
pub struct EnrichContext<'a> {
    pub potential: &'a dyn Potential,
    pub propagator: &'a Propagator,
    /// Seeds of the run. The lane is replaced per use.
    pub streams: Streams,
    /// Index of the event within the run, used to key its noise.
    pub event: u32,
    /// Global step index of the event.
    pub step: u64,
}

/// Picks `a` indices out of `b`: without replacement when `a <= b`, otherwise whole
/// passes over all indices plus a remainder without replacement.
pub fn select_indices<R: Rng + ?Sized>(rng: &mut R, b: usize, a: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(a);
    for _ in 0..a / b {
        out.extend(0..b);
    }
    out.extend(index::sample(rng, b, a % b).into_iter());
    out
}

/// Grows the last snapshot of `history` by `a` particles. The originals come first,
/// unchanged.
pub fn enrich(history: &[Ensemble], scheme: &EnrichmentScheme, a: usize, ctx: &EnrichContext) -> Result<Ensemble> {
    scheme.validate(a)?;
    let current = history.last().ok_or(Error::MissingHistory { have: 0, need: 1 })?;
    if let EnrichmentScheme::Stacked { parts, from_originals } = scheme {
        let share = a / parts.len();
        let b0 = current.batch_size();
        let mut grown = current.clone();
        for (k, part) in parts.iter().enumerate() {
            let mut hist: Vec<Ensemble> = history[..history.len() - 1].to_vec();
            let base = if *from_originals { current.clone() } else { grown.clone() };
            hist.push(base);
            let sub = EnrichContext { event: ctx.event, step: ctx.step, ..*ctx };
            let next = enrich_single(&hist, part, share, &sub, grown.batch_size(), u64::MAX - k as u64)?;
            let start = if *from_originals { b0 } else { grown.batch_size() };
            grown.append(&next.as_slice()[start * grown.dim()..]);
        }
        return Ok(grown);
    }
    enrich_single(history, scheme, a, ctx, current.batch_size(), u64::MAX)
}

/// `first_new` is the global index of the first appended particle, which keys its
/// noise; `selector` keys the selection stream.
fn enrich_single(
    history: &[Ensemble],
    scheme: &EnrichmentScheme,
    a: usize,
    ctx: &EnrichContext,
    first_new: usize,
    selector: u64,
) -> Result<Ensemble> {
    let current = history.last().expect("nonempty history");
    let (b, d) = (current.batch_size(), current.dim());
    let lane = ctx.streams.with_lane(Lane::Enrichment(ctx.event));
    let mut sel_rng = lane.rng(selector, ctx.step);
    let dt = ctx.propagator.dt;
    let mut out = current.clone();
    let mut new = Vec::with_capacity(a * d);
    match scheme {
        EnrichmentScheme::ForwardSlice { delta_steps } => {
            if a > b {
                return Err(Error::SelectionTooLarge { a, b });
            }
            let fs = ctx.streams.with_lane(Lane::ForwardSlice(ctx.event));
            let mut ahead = current.clone();
            for k in 0..*delta_steps {
                ahead = ctx.propagator.step(&ahead, ctx.potential, &fs, ctx.step + k as u64)?;
            }
            for i in index::sample(&mut sel_rng, b, a) {
                new.extend_from_slice(ahead.particle(i));
            }
        }
        EnrichmentScheme::BackwardSlice { delta_steps } => {
            let need = delta_steps + 1;
            if history.len() < need {
                return Err(Error::MissingHistory { have: history.len(), need });
            }
            let past = &history[history.len() - need];
            if a > past.batch_size() {
                return Err(Error::SelectionTooLarge { a, b: past.batch_size() });
            }
            for i in index::sample(&mut sel_rng, past.batch_size(), a) {
                new.extend_from_slice(past.particle(i));
            }
        }
        EnrichmentScheme::DiffusionPropagation { step_multiple } => {
            let stats = compute_stats(current)?;
            let scale = (2.0 * dt * *step_multiple as f64).sqrt();
            let mut xi = vec![0.0; b];
            for (k, i) in select_indices(&mut sel_rng, b, a).into_iter().enumerate() {
                lane.normals((first_new + k) as u64, ctx.step, &mut xi);
                let kick = &stats.sqrt_factor * DVector::from_column_slice(&xi);
                let y = current.particle(i);
                new.extend((0..d).map(|c| y[c] + scale * kick[c]));
            }
        }
        EnrichmentScheme::RandomKick { scale } => {
            let var = match scale {
                KickScale::Covariance => {
                    let stats = compute_stats(current)?;
                    dt * (stats.covariance.trace() / d as f64 + 1e-8)
                }
                KickScale::Fixed(v) => *v,
            };
            let s = var.sqrt();
            let mut xi = vec![0.0; d];
            for (k, i) in select_indices(&mut sel_rng, b, a).into_iter().enumerate() {
                lane.normals((first_new + k) as u64, ctx.step, &mut xi);
                let y = current.particle(i);
                new.extend((0..d).map(|c| y[c] + s * xi[c]));
            }
        }
        EnrichmentScheme::GaussianTransport { jitter } => {
            let stats = compute_stats(current)?;
            let j = jitter.unwrap_or(1e-8 * stats.covariance.trace() / d as f64);
            let cov = &stats.covariance + DMatrix::identity(d, d) * j;
            let factor = psd_factor(&cov);
            let mut xi = vec![0.0; d];
            for k in 0..a {
                lane.normals((first_new + k) as u64, ctx.step, &mut xi);
                let z = &stats.mean + &factor * DVector::from_column_slice(&xi);
                new.extend_from_slice(z.as_slice());
            }
        }
        EnrichmentScheme::Stacked { .. } => {
            return enrich(history, scheme, a, ctx);
        }
    }
    out.append(&new);
    Ok(out)
}

/// Cholesky factor, falling back to a clipped eigen root when the matrix is singular.
fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = m.clone().cholesky() {
        return ch.l();
    }
    let eig = m.clone().symmetric_eigen();
    let s = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * s
}

/// Sinkhorn divergence between the current batch and particles produced by an
/// enrichment, reported as the fit diagnostic of Gaussian transport.
pub fn transport_fit_loss(before: &Ensemble, after: &Ensemble, cfg: &SinkhornConfig) -> Result<Divergence> {
    let b = before.batch_size();
    let d = before.dim();
    let added = &after.as_slice()[b * d..];
    if added.is_empty() {
        return Err(Error::InvalidEnsemble("no added particles".into()));
    }
    let fit = DiscreteMeasure::uniform(added.to_vec(), d)?;
    Ok(sinkhorn_divergence(&empirical_measure(before), &fit, cfg))
}
