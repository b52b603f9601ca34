//! Run configurations for the benchmark experiments.

use std::sync::Arc;

use crate::enrichment::{EnrichmentPlan, EnrichmentScheme};
use crate::error::Result;
use crate::homotopy::{enrichment_times_from_switch, HomotopySchedule, SwitchShape};
use crate::metrics::HeuristicConfig;
use crate::problems::{by_id, Problem};
use crate::propagators::Propagator;
use crate::runner::{AdaptivePlan, Diagnostics, PlanSpec, RunConfig};

pub const UNIMODAL_DT: f64 = 0.05;
pub const UNIMODAL_STEPS: usize = 200;
/// Time of the single large enrichment in the plateau experiment.
pub const PLATEAU_TIME: f64 = 2.5;
pub const HOMOTOPY_DT: f64 = 0.01;
pub const HOMOTOPY_HORIZON: f64 = 40.0;
pub const HOMOTOPY_RAMP: (f64, f64) = (2.0, 18.0);
pub const DARCY_DT: f64 = 0.01;
pub const DARCY_HORIZON: f64 = 8.0;

fn config(problem: Arc<dyn Problem>, propagator: Propagator, plan: PlanSpec, n_iter: usize, ep_every: usize) -> RunConfig {
    let mut cfg = RunConfig::new(problem, propagator, plan, n_iter);
    cfg.record_every = ep_every;
    cfg.diagnostics = Diagnostics { ep_every, ..Diagnostics::default() };
    cfg
}

fn steps(horizon: f64, dt: f64) -> usize {
    (horizon / dt).round() as usize
}

/// ALDI or EKS with `b` particles on the translation problem.
pub fn unimodal_plain(propagator: Propagator, b: usize) -> Result<RunConfig> {
    Ok(config(by_id("mixture-k1")?, propagator, PlanSpec::Fixed(EnrichmentPlan::none(b)), UNIMODAL_STEPS, 5))
}

/// Four batches of 100 joined by diffusion steps at t = 1, 2, 3.
pub fn unimodal_lidl() -> Result<RunConfig> {
    let d = EnrichmentScheme::diffusion();
    let plan = EnrichmentPlan::from_times(100, &[(1.0, 100, d.clone()), (2.0, 100, d.clone()), (3.0, 100, d)], UNIMODAL_DT)?;
    Ok(config(by_id("mixture-k1")?, Propagator::aldi(UNIMODAL_DT)?, PlanSpec::Fixed(plan), UNIMODAL_STEPS, 5))
}

/// 50 particles grown to 400 in one event by seven stacked diffusion steps.
pub fn plateau_lidl() -> Result<RunConfig> {
    let plan = EnrichmentPlan::from_times(50, &[(PLATEAU_TIME, 350, EnrichmentScheme::stacked_diffusion(7))], UNIMODAL_DT)?;
    Ok(config(by_id("mixture-k1")?, Propagator::aldi(UNIMODAL_DT)?, PlanSpec::Fixed(plan), UNIMODAL_STEPS, 5))
}

/// Four batches of 100 with enrichment times chosen by `heuristic`.
pub fn adaptive_lidl(heuristic: HeuristicConfig) -> Result<RunConfig> {
    let plan = AdaptivePlan { initial_batch: 100, batches: vec![100; 3], scheme: EnrichmentScheme::diffusion(), heuristic };
    Ok(config(by_id("mixture-k1")?, Propagator::aldi(UNIMODAL_DT)?, PlanSpec::Adaptive(plan), UNIMODAL_STEPS, 5))
}

fn homotopy_schedule(shape: SwitchShape, horizon: f64) -> Result<HomotopySchedule> {
    HomotopySchedule::ramp(shape, HOMOTOPY_RAMP.0, HOMOTOPY_RAMP.1, horizon)
}

/// ALDI with 200 particles on the four-mode mixture; `None` runs on the target only.
pub fn homotopy_plain(shape: Option<SwitchShape>) -> Result<RunConfig> {
    let n = steps(HOMOTOPY_HORIZON, HOMOTOPY_DT);
    let mut cfg = config(by_id("mixture-k4")?, Propagator::aldi(HOMOTOPY_DT)?, PlanSpec::Fixed(EnrichmentPlan::none(200)), n, 100);
    if let Some(shape) = shape {
        cfg.schedule = homotopy_schedule(shape, HOMOTOPY_HORIZON)?;
    }
    Ok(cfg)
}

/// Linear switch with batches (20, 40, 60, 80) added by forward slicing at t = 12, 15, 18.
/// The first event needs more particles than the batch holds, so it stacks slices one
/// and two steps ahead of the same originals.
pub fn homotopy_enrich_linear() -> Result<RunConfig> {
    let n = steps(HOMOTOPY_HORIZON, HOMOTOPY_DT);
    let s = EnrichmentScheme::ForwardSlice { delta_steps: 1 };
    let double = EnrichmentScheme::Stacked {
        parts: vec![s.clone(), EnrichmentScheme::ForwardSlice { delta_steps: 2 }],
        from_originals: true,
    };
    let plan = EnrichmentPlan::from_times(20, &[(12.0, 40, double), (15.0, 60, s.clone()), (18.0, 80, s)], HOMOTOPY_DT)?;
    let mut cfg = config(by_id("mixture-k4")?, Propagator::aldi(HOMOTOPY_DT)?, PlanSpec::Fixed(plan), n, 100);
    cfg.schedule = homotopy_schedule(SwitchShape::Linear, HOMOTOPY_HORIZON)?;
    Ok(cfg)
}

/// Concave switch over a 60 time unit horizon, four batches of 50 added by diffusion
/// where the switch crosses 1/4, 1/2 and 3/4.
pub fn homotopy_enrich_concave() -> Result<RunConfig> {
    let horizon = 60.0;
    let schedule = homotopy_schedule(SwitchShape::Concave, horizon)?;
    let times = enrichment_times_from_switch(&schedule, 4, 1.0, HOMOTOPY_DT)?;
    let d = EnrichmentScheme::diffusion();
    let events: Vec<_> = times.iter().map(|&t| (t, 50, d.clone())).collect();
    let plan = EnrichmentPlan::from_times(50, &events, HOMOTOPY_DT)?;
    let mut cfg = config(by_id("mixture-k4")?, Propagator::aldi(HOMOTOPY_DT)?, PlanSpec::Fixed(plan), steps(horizon, HOMOTOPY_DT), 100);
    cfg.schedule = schedule;
    Ok(cfg)
}

/// EKS or ALDI with `b` particles on the Darcy problem `id`.
pub fn darcy_plain(problem: Arc<dyn Problem>, propagator: Propagator, b: usize) -> RunConfig {
    config(problem, propagator, PlanSpec::Fixed(EnrichmentPlan::none(b)), steps(DARCY_HORIZON, DARCY_DT), 50)
}

/// Four equal batches added by diffusion at t = 1, 1.5, 1.75.
pub fn darcy_lidl(problem: Arc<dyn Problem>, propagator: Propagator, batch: usize) -> Result<RunConfig> {
    let d = EnrichmentScheme::diffusion();
    let plan = EnrichmentPlan::from_times(batch, &[(1.0, batch, d.clone()), (1.5, batch, d.clone()), (1.75, batch, d)], DARCY_DT)?;
    Ok(config(problem, propagator, PlanSpec::Fixed(plan), steps(DARCY_HORIZON, DARCY_DT), 50))
}
