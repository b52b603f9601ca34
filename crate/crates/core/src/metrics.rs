//! Error variables, adaptive enrichment heuristics and forward-call accounting.

use rayon::prelude::*;

use crate::enrichment::EnrichmentPlan;
use crate::ensemble::DiscreteMeasure;
use crate::error::{Error, Result};
use crate::homotopy::HomotopySchedule;
use crate::potential::CallCount;
use crate::rng::SeedSpec;
use crate::sinkhorn::{sinkhorn_divergence, Divergence, PreparedMeasure, SinkhornConfig};

/// Source of posterior samples. `slot` separates independent draws under one seed.
pub trait PosteriorSampler: Send + Sync {
    fn sample(&self, n: usize, seeds: &SeedSpec, slot: u32) -> Result<DiscreteMeasure>;
}

impl<F> PosteriorSampler for F
where
    F: Fn(usize, &SeedSpec, u32) -> Result<DiscreteMeasure> + Send + Sync,
{
    fn sample(&self, n: usize, seeds: &SeedSpec, slot: u32) -> Result<DiscreteMeasure> {
        self(n, seeds, slot)
    }
}

/// `EP_t`: divergence between the ensemble measure and an independent posterior sample.
pub fn ep_t(ensemble: &DiscreteMeasure, posterior: &DiscreteMeasure, cfg: &SinkhornConfig) -> Divergence {
    sinkhorn_divergence(ensemble, posterior, cfg)
}

/// `n_pairs` realizations of `PP`, the divergence between two independent posterior
/// samples of size `b_bar`. Pair `p` uses run index `p` of `seeds` with slots 1 and 2.
pub fn pp_baseline(
    sampler: &dyn PosteriorSampler,
    b_bar: usize,
    n_pairs: usize,
    cfg: &SinkhornConfig,
    seeds: &SeedSpec,
) -> Result<Vec<f64>> {
    (0..n_pairs)
        .into_par_iter()
        .map(|p| {
            let s = SeedSpec::new(seeds.master_seed, p as u64);
            let x = sampler.sample(b_bar, &s, 1)?;
            let y = sampler.sample(b_bar, &s, 2)?;
            Ok(sinkhorn_divergence(&x, &y, cfg).value)
        })
        .collect()
}

/// One-dimensional divergence between the empirical laws of two lists of scalars.
pub fn double_sinkhorn(ep: &[f64], pp: &[f64], cfg: &SinkhornConfig) -> Result<f64> {
    if ep.is_empty() || pp.is_empty() {
        return Err(Error::InvalidConfig("double Sinkhorn needs nonempty samples".into()));
    }
    let a = DiscreteMeasure::uniform(ep.to_vec(), 1)?;
    let b = DiscreteMeasure::uniform(pp.to_vec(), 1)?;
    Ok(sinkhorn_divergence(&a, &b, cfg).value)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeuristicKind {
    Difference { n1: usize, n2: usize },
    Slope { n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeuristicConfig {
    pub kind: HeuristicKind,
    pub tol: f64,
    pub reference: f64,
    /// Check every this many steps.
    pub check_every: usize,
    /// Steps between consecutive history snapshots.
    pub stride: usize,
    /// Drop the history at each enrichment so windows never straddle an event.
    pub reset_on_enrichment: bool,
}

impl HeuristicConfig {
    pub fn difference() -> Self {
        HeuristicConfig {
            kind: HeuristicKind::Difference { n1: 5, n2: 5 },
            tol: 0.5,
            reference: 1.0,
            check_every: 5,
            stride: 2,
            reset_on_enrichment: false,
        }
    }

    pub fn slope() -> Self {
        HeuristicConfig { kind: HeuristicKind::Slope { n: 10 }, ..Self::difference() }
    }

    pub fn depth(&self) -> usize {
        match self.kind {
            HeuristicKind::Difference { n1, n2 } => n1 + n2,
            HeuristicKind::Slope { n } => n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            HeuristicKind::Difference { n1, n2 } => n1 >= 1 && n2 >= 1,
            HeuristicKind::Slope { n } => n >= 3,
        };
        if !ok || !(self.tol > 0.0 && self.tol < 1.0) || !(self.reference > 0.0) || self.check_every == 0 || self.stride == 0 {
            return Err(Error::InvalidConfig(format!("invalid heuristic settings {self:?}")));
        }
        Ok(())
    }

    /// Value of the heuristic at the last enrichment before any has happened.
    pub fn initial_last(&self) -> f64 {
        match self.kind {
            HeuristicKind::Difference { .. } => self.reference,
            HeuristicKind::Slope { .. } => -self.reference,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeuristicOutcome {
    pub value: f64,
    pub trigger: bool,
}

fn divergences_to_last(history: &[&PreparedMeasure]) -> Vec<f64> {
    let last = history[history.len() - 1];
    history[..history.len() - 1]
        .iter()
        .map(|m| m.divergence(last).value)
        .chain(std::iter::once(0.0))
        .collect()
}

/// Difference heuristic over `t_1..t_N = t_a`, `N = n1 + n2`: the gap between the mean
/// divergence to `mu_{t_a}` over the first `n1` and the last `n2` snapshots.
/// Triggers when the gap drops below `tol * last`.
pub fn diff_heuristic(history: &[&PreparedMeasure], n1: usize, n2: usize, tol: f64, last: f64) -> Result<HeuristicOutcome> {
    let n = n1 + n2;
    if history.len() < n || n1 == 0 || n2 == 0 {
        return Err(Error::NotReady { have: history.len(), need: n });
    }
    let s = divergences_to_last(&history[history.len() - n..]);
    let first = s[..n1].iter().sum::<f64>() / n1 as f64;
    let second = s[n1..].iter().sum::<f64>() / n2 as f64;
    let value = (first - second).abs();
    Ok(HeuristicOutcome { value, trigger: value < tol * last })
}

/// Slope heuristic `(S(t_{N-1}) - S(t_1)) / ((N - 2) dt)` with `S(t_i)` the divergence
/// to `mu_{t_a}` and `dt` the snapshot spacing. Triggers when the value exceeds
/// `-tol * |last|`.
pub fn slope_heuristic(history: &[&PreparedMeasure], n: usize, dt: f64, tol: f64, last: f64) -> Result<HeuristicOutcome> {
    if n < 3 || history.len() < n {
        return Err(Error::NotReady { have: history.len(), need: n.max(3) });
    }
    let w = &history[history.len() - n..];
    let last_m = w[n - 1];
    let s1 = w[0].divergence(last_m).value;
    let sn1 = w[n - 2].divergence(last_m).value;
    let value = (sn1 - s1) / ((n - 2) as f64 * dt);
    Ok(HeuristicOutcome { value, trigger: value > -tol * last.abs() })
}

/// Evaluates the configured heuristic on a window of history.
pub fn evaluate_heuristic(cfg: &HeuristicConfig, history: &[&PreparedMeasure], snapshot_dt: f64, last: f64) -> Result<HeuristicOutcome> {
    match cfg.kind {
        HeuristicKind::Difference { n1, n2 } => diff_heuristic(history, n1, n2, cfg.tol, last),
        HeuristicKind::Slope { n } => slope_heuristic(history, n, snapshot_dt, cfg.tol, last),
    }
}

/// Forward calls spent by the propagation up to global step `k` and the enrichments at
/// steps `<= k`, from the stagewise closed form
/// `b_bar_l (k - k_l) + sum_{l' <= l} b_bar_{l'-1} (k_{l'} - k_{l'-1})`, where `l` is the
/// last stage started strictly before `k`.
pub fn fc_at_step(plan: &EnrichmentPlan, k: usize) -> CallCount {
    let mut cumulative = plan.initial_batch as u64;
    let mut stage_start = 0usize;
    let mut total = 0u64;
    let mut extra = CallCount::default();
    for ev in &plan.events {
        if ev.step <= k {
            extra = extra + ev.scheme.forward_call_cost(cumulative as usize, ev.batch);
        }
        if ev.step < k {
            total += cumulative * (ev.step - stage_start) as u64;
            cumulative += ev.batch as u64;
            stage_start = ev.step;
        }
    }
    total += cumulative * (k - stage_start) as u64;
    CallCount { forward: total, free: 0 } + extra
}

/// `fc_at_step` at time `t`, i.e. at step `floor(t / dt)`.
pub fn fc_accounting(plan: &EnrichmentPlan, dt: f64, t: f64) -> CallCount {
    let k = (t / dt + 1e-9).floor().max(0.0) as usize;
    fc_at_step(plan, k)
}

/// Total propagation calls over `n_iter` steps: `b_bar n_iter - sum_l b_l k_l`.
pub fn total_forward_calls(plan: &EnrichmentPlan, n_iter: usize) -> u64 {
    let b_bar = plan.total_batch() as u64;
    let saved: u64 = plan.events.iter().map(|e| e.batch as u64 * e.step as u64).sum();
    b_bar * n_iter as u64 - saved
}

/// Ratio of a plan's propagation calls to those of a plain run with the final batch.
pub fn reduction_factor(plan: &EnrichmentPlan, n_iter: usize) -> f64 {
    total_forward_calls(plan, n_iter) as f64 / (plan.total_batch() * n_iter) as f64
}

/// Calls up to global step `k` when step `j` runs on the blended potential at `s(j dt)`:
/// free when `s = 0`, forward otherwise. Enrichment costs follow `s` at the event.
pub fn fc_at_step_with_schedule(plan: &EnrichmentPlan, sched: &HomotopySchedule, dt: f64, k: usize) -> CallCount {
    let mut count = CallCount::default();
    let mut cumulative = plan.initial_batch;
    let mut next = 0;
    for j in 0..=k {
        let free = sched.value(j as f64 * dt) == 0.0;
        while next < plan.events.len() && plan.events[next].step == j {
            let ev = &plan.events[next];
            let c = ev.scheme.forward_call_cost(cumulative, ev.batch);
            let n = c.forward + c.free;
            if free {
                count.free += n;
            } else {
                count.forward += n;
            }
            cumulative += ev.batch;
            next += 1;
        }
        if j < k {
            if free {
                count.free += cumulative as u64;
            } else {
                count.forward += cumulative as u64;
            }
        }
    }
    count
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (divisor `n - 1`); zero for a single value.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}
