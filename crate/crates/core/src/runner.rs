//! Full runs: propagate, enrich at fixed or heuristic times, blend potentials along a
//! homotopy schedule, then score snapshots against posterior samples.

use std::collections::VecDeque;
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;

use crate::enrichment::{enrich, EnrichContext, EnrichmentEvent, EnrichmentPlan, EnrichmentScheme};
use crate::ensemble::{empirical_measure, DiscreteMeasure, Ensemble};
use crate::error::{Error, Result};
use crate::homotopy::{HomotopyPotential, HomotopySchedule};
use crate::metrics::{double_sinkhorn, evaluate_heuristic, mean, pp_baseline, std_dev, HeuristicConfig};
use crate::potential::{CallCount, CallCounter, Potential};
use crate::pp_cache::PpCache;
use crate::problems::{Problem, ProblemSampler};
use crate::propagators::{warn_small_batch, Propagator};
use crate::rng::{Lane, SeedSpec};
use crate::sinkhorn::{PreparedMeasure, SinkhornConfig};

/// Enrichment times chosen at run time by a heuristic; batch sizes are fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptivePlan {
    pub initial_batch: usize,
    pub batches: Vec<usize>,
    pub scheme: EnrichmentScheme,
    pub heuristic: HeuristicConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanSpec {
    Fixed(EnrichmentPlan),
    Adaptive(AdaptivePlan),
}

impl PlanSpec {
    pub fn initial_batch(&self) -> usize {
        match self {
            PlanSpec::Fixed(p) => p.initial_batch,
            PlanSpec::Adaptive(a) => a.initial_batch,
        }
    }

    pub fn total_batch(&self) -> usize {
        match self {
            PlanSpec::Fixed(p) => p.total_batch(),
            PlanSpec::Adaptive(a) => a.initial_batch + a.batches.iter().sum::<usize>(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// Score snapshots whose step is a multiple of this; 0 disables scoring.
    pub ep_every: usize,
    /// Posterior sample size for scoring; `None` uses the final batch size.
    pub posterior_samples: Option<usize>,
    pub sinkhorn: SinkhornConfig,
    /// Posterior pairs for the baseline; `None` uses the number of runs.
    pub pp_pairs: Option<usize>,
    pub pp_cache: Option<PathBuf>,
    /// Keep every recorded ensemble in the run records.
    pub keep_snapshots: bool,
}

impl Default for Diagnostics {
    fn default() -> Self {
        Diagnostics {
            ep_every: 0,
            posterior_samples: None,
            sinkhorn: SinkhornConfig::default(),
            pp_pairs: None,
            pp_cache: None,
            keep_snapshots: true,
        }
    }
}

#[derive(Clone)]
pub struct RunConfig {
    pub problem: Arc<dyn Problem>,
    pub propagator: Propagator,
    pub plan: PlanSpec,
    pub schedule: HomotopySchedule,
    /// Auxiliary potential for the homotopy; `None` uses the problem's default.
    pub aux: Option<Arc<dyn Potential>>,
    pub n_iter: usize,
    pub record_every: usize,
    pub diagnostics: Diagnostics,
    pub master_seed: u64,
    pub n_runs: usize,
    /// Zero all propagation and enrichment noise.
    pub silent: bool,
}

impl RunConfig {
    /// Plain run of `plan` on the target potential, no scoring, one run.
    pub fn new(problem: Arc<dyn Problem>, propagator: Propagator, plan: PlanSpec, n_iter: usize) -> Self {
        let horizon = n_iter as f64 * propagator.dt;
        RunConfig {
            problem,
            propagator,
            plan,
            schedule: HomotopySchedule::target_only(horizon),
            aux: None,
            n_iter,
            record_every: 1,
            diagnostics: Diagnostics::default(),
            master_seed: 0,
            n_runs: 1,
            silent: false,
        }
    }

    pub fn dt(&self) -> f64 {
        self.propagator.dt
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 || self.record_every == 0 || self.n_runs == 0 {
            return Err(Error::InvalidConfig("n_iter, record_every and runs must be positive".into()));
        }
        self.schedule.validate()?;
        match &self.plan {
            PlanSpec::Fixed(p) => {
                p.validate()?;
                if let Some(ev) = p.events.iter().find(|e| e.step >= self.n_iter) {
                    return Err(Error::InvalidConfig(format!(
                        "enrichment at step {} lies outside the horizon of {} steps",
                        ev.step, self.n_iter
                    )));
                }
            }
            PlanSpec::Adaptive(a) => {
                a.heuristic.validate()?;
                if a.initial_batch == 0 || a.batches.iter().any(|&b| b == 0) {
                    return Err(Error::InvalidConfig("batch sizes must be positive".into()));
                }
                for &b in &a.batches {
                    a.scheme.validate(b)?;
                }
            }
        }
        if let Some(aux) = &self.aux {
            if aux.dim() != self.problem.dim() {
                return Err(Error::DimensionMismatch { expected: self.problem.dim(), got: aux.dim() });
            }
        }
        let d = &self.diagnostics;
        if d.ep_every > 0 && d.ep_every % self.record_every != 0 {
            return Err(Error::InvalidConfig("ep_every must be a multiple of record_every".into()));
        }
        Ok(())
    }

    fn posterior_size(&self) -> usize {
        self.diagnostics.posterior_samples.unwrap_or_else(|| self.plan.total_batch())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub batch_size: usize,
    pub calls: CallCount,
    pub s: f64,
    /// Empty when the run does not keep snapshots.
    pub ensemble: Option<Ensemble>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpPoint {
    pub step: usize,
    pub t: f64,
    pub ep: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealizedEvent {
    pub step: usize,
    pub t: f64,
    pub added: usize,
    pub batch_after: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeuristicCheck {
    pub step: usize,
    pub value: f64,
    pub trigger: bool,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub run_index: u64,
    pub dt: f64,
    pub snapshots: Vec<Snapshot>,
    pub ep_series: Vec<EpPoint>,
    pub enrichment_events: Vec<RealizedEvent>,
    /// The plan as executed; for adaptive runs it carries the triggered steps.
    pub realized_plan: EnrichmentPlan,
    pub heuristic_checks: Vec<HeuristicCheck>,
    pub final_ensemble: Ensemble,
    pub unspent_enrichments: usize,
    /// Step at which the run diverged, if it did.
    pub diverged_at: Option<u64>,
}

impl RunRecord {
    pub fn fc_series(&self) -> Vec<(f64, u64, u64)> {
        self.snapshots.iter().map(|s| (s.t, s.calls.forward, s.calls.free)).collect()
    }

    pub fn s_series(&self) -> Vec<(f64, f64)> {
        self.snapshots.iter().map(|s| (s.t, s.s)).collect()
    }

    pub fn final_measure(&self) -> DiscreteMeasure {
        empirical_measure(&self.final_ensemble)
    }

    pub fn total_calls(&self) -> CallCount {
        self.snapshots.last().map(|s| s.calls).unwrap_or_default()
    }
}

/// A failed run with whatever it recorded before failing.
#[derive(Debug, Clone)]
pub struct RunFailure {
    pub error: Error,
    pub partial: RunRecord,
}

fn initial_ensemble(problem: &dyn Problem, b: usize, seeds: &SeedSpec) -> Result<Ensemble> {
    let d = problem.dim();
    let mut data = vec![0.0; b * d];
    for (i, row) in data.chunks_mut(d).enumerate() {
        problem.sample_initial(&mut seeds.rng(Lane::Initial, i as u64, 0), row);
    }
    Ensemble::new(data, d, 0.0)
}

struct Adaptive<'a> {
    spec: &'a AdaptivePlan,
    history: VecDeque<Arc<PreparedMeasure>>,
    last: f64,
}

/// Executes run `run_index` of `cfg`: stages of propagation separated by enrichments,
/// then post-hoc scoring of the recorded snapshots.
pub fn run_lidl(cfg: &RunConfig, run_index: u64) -> std::result::Result<RunRecord, RunFailure> {
    let problem = cfg.problem.as_ref();
    let dt = cfg.dt();
    let seeds = SeedSpec::new(cfg.master_seed, run_index);
    let counter = CallCounter::new();
    let target = problem.potential();
    let aux = cfg.aux.clone().unwrap_or_else(|| problem.aux_potential());
    let mut streams = seeds.streams(Lane::Propagation);
    if cfg.silent {
        streams = streams.silenced();
    }
    let b0 = cfg.plan.initial_batch();
    let mut record = RunRecord {
        run_index,
        dt,
        snapshots: Vec::new(),
        ep_series: Vec::new(),
        enrichment_events: Vec::new(),
        realized_plan: EnrichmentPlan::none(b0),
        heuristic_checks: Vec::new(),
        final_ensemble: Ensemble::from_raw(vec![0.0; problem.dim()], problem.dim(), 0.0),
        unspent_enrichments: 0,
        diverged_at: None,
    };
    macro_rules! bail {
        ($e:expr) => {{
            let error: Error = $e;
            if let Error::DivergedStep { step } = error {
                record.diverged_at = Some(step);
            }
            return Err(RunFailure { error, partial: record });
        }};
    }
    if let Err(e) = cfg.validate() {
        bail!(e);
    }
    let mut ens = match initial_ensemble(problem, b0, &seeds) {
        Ok(e) => e,
        Err(e) => bail!(e),
    };
    record.final_ensemble = ens.clone();
    warn_small_batch(&cfg.propagator, &ens);

    let (fixed_events, mut adaptive): (&[EnrichmentEvent], Option<Adaptive>) = match &cfg.plan {
        PlanSpec::Fixed(p) => (&p.events, None),
        PlanSpec::Adaptive(a) => (
            &[],
            Some(Adaptive { spec: a, history: VecDeque::new(), last: a.heuristic.initial_last() }),
        ),
    };
    let keep = match &cfg.plan {
        PlanSpec::Fixed(p) => p.events.iter().map(|e| e.scheme.history_needed()).max().unwrap_or(1),
        PlanSpec::Adaptive(a) => a.scheme.history_needed(),
    };
    let mut past: VecDeque<Ensemble> = VecDeque::new();
    let mut next_fixed = 0;
    let mut n_events = 0u32;

    for k in 0..=cfg.n_iter {
        let t = k as f64 * dt;
        ens.t = t;
        let s = cfg.schedule.value(t);
        let blend = match HomotopyPotential::new(aux.clone(), target.clone(), s, counter.clone()) {
            Ok(b) => b,
            Err(e) => bail!(e),
        };
        if keep > 1 {
            past.push_back(ens.clone());
            while past.len() > keep {
                past.pop_front();
            }
        }

        // decide on an enrichment at this step
        let mut event: Option<(usize, EnrichmentScheme)> = None;
        if let Some(ev) = fixed_events.get(next_fixed) {
            if ev.step == k {
                event = Some((ev.batch, ev.scheme.clone()));
                next_fixed += 1;
            }
        }
        if let Some(ad) = adaptive.as_mut() {
            let h = &ad.spec.heuristic;
            if k % h.stride == 0 {
                ad.history.push_back(Arc::new(PreparedMeasure::new(empirical_measure(&ens), cfg.diagnostics.sinkhorn)));
                while ad.history.len() > h.depth() {
                    ad.history.pop_front();
                }
            }
            let done = record.enrichment_events.len();
            if k > 0 && k < cfg.n_iter && k % h.check_every == 0 && done < ad.spec.batches.len() {
                let window: Vec<&PreparedMeasure> = ad.history.iter().map(|m| m.as_ref()).collect();
                if let Ok(out) = evaluate_heuristic(h, &window, h.stride as f64 * dt, ad.last) {
                    record.heuristic_checks.push(HeuristicCheck { step: k, value: out.value, trigger: out.trigger });
                    if out.trigger {
                        ad.last = out.value;
                        event = Some((ad.spec.batches[done], ad.spec.scheme.clone()));
                    }
                }
            }
        }

        if let Some((a, scheme)) = event {
            let hist: Vec<Ensemble> = if keep > 1 { past.iter().cloned().collect() } else { vec![ens.clone()] };
            let ctx = EnrichContext {
                potential: &blend,
                propagator: &cfg.propagator,
                streams,
                event: n_events,
                step: k as u64,
            };
            match enrich(&hist, &scheme, a, &ctx) {
                Ok(mut grown) => {
                    grown.t = t;
                    ens = grown;
                }
                Err(e) => bail!(e),
            }
            n_events += 1;
            record.enrichment_events.push(RealizedEvent { step: k, t, added: a, batch_after: ens.batch_size() });
            record.realized_plan.events.push(EnrichmentEvent { step: k, batch: a, scheme });
            if let Some(p) = past.back_mut() {
                *p = ens.clone();
            }
            if let Some(ad) = adaptive.as_mut() {
                if ad.spec.heuristic.reset_on_enrichment {
                    ad.history.clear();
                    ad.history.push_back(Arc::new(PreparedMeasure::new(empirical_measure(&ens), cfg.diagnostics.sinkhorn)));
                } else if k % ad.spec.heuristic.stride == 0 {
                    if let Some(m) = ad.history.back_mut() {
                        *m = Arc::new(PreparedMeasure::new(empirical_measure(&ens), cfg.diagnostics.sinkhorn));
                    }
                }
            }
        }

        if k % cfg.record_every == 0 || k == cfg.n_iter {
            record.snapshots.push(Snapshot {
                step: k,
                t,
                batch_size: ens.batch_size(),
                calls: counter.get(),
                s,
                ensemble: cfg.diagnostics.keep_snapshots.then(|| ens.clone()),
            });
        }
        record.final_ensemble = ens.clone();
        if k < cfg.n_iter {
            match cfg.propagator.step(&ens, &blend, &streams, k as u64) {
                Ok(next) => ens = next,
                Err(e) => bail!(e),
            }
        }
    }
    if let PlanSpec::Adaptive(a) = &cfg.plan {
        record.unspent_enrichments = a.batches.len() - record.enrichment_events.len();
        if record.unspent_enrichments > 0 {
            log::warn!("run {run_index}: {} enrichments never triggered", record.unspent_enrichments);
        }
    }
    if cfg.diagnostics.ep_every > 0 {
        if let Err(e) = score(cfg, &mut record, &seeds) {
            bail!(e);
        }
    }
    Ok(record)
}

/// EP at every scored snapshot against posterior slot 0 of the run's seeds.
fn score(cfg: &RunConfig, record: &mut RunRecord, seeds: &SeedSpec) -> Result<()> {
    if !cfg.diagnostics.keep_snapshots {
        return Err(Error::InvalidConfig("scoring needs the recorded snapshots".into()));
    }
    let posterior = cfg.problem.posterior_sample(cfg.posterior_size(), seeds, 0)?;
    let reference = PreparedMeasure::new(posterior.measure, cfg.diagnostics.sinkhorn);
    reference.self_cost();
    let every = cfg.diagnostics.ep_every;
    record.ep_series = record
        .snapshots
        .par_iter()
        .filter(|s| s.step % every == 0)
        .map(|s| {
            let m = PreparedMeasure::new(empirical_measure(s.ensemble.as_ref().expect("kept")), cfg.diagnostics.sinkhorn);
            let d = m.divergence(&reference);
            EpPoint { step: s.step, t: s.t, ep: d.value, converged: d.converged }
        })
        .collect();
    Ok(())
}

/// Mean curves over runs on the common grid of scored steps.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub t: f64,
    pub step: usize,
    pub fc: f64,
    pub free_fc: f64,
    pub batch_size: f64,
    pub s: f64,
    pub mean_ep: f64,
    pub std_ep: f64,
    pub pp_mean: f64,
    pub pp_std: f64,
    pub double_sinkhorn: f64,
}

pub struct EnsembleReport {
    pub records: Vec<RunRecord>,
    pub failures: Vec<(u64, RunFailure)>,
    pub pp: Vec<f64>,
    pub pp_from_cache: bool,
    pub aggregate: Vec<AggregateRow>,
}

/// Baseline divergences between independent posterior samples, read from or added to
/// the configured cache.
pub fn pp_values(cfg: &RunConfig) -> Result<(Vec<f64>, bool)> {
    let n = cfg.diagnostics.pp_pairs.unwrap_or(cfg.n_runs);
    let b = cfg.posterior_size();
    let id = cfg.problem.id();
    let cache = match &cfg.diagnostics.pp_cache {
        Some(path) => Some((path, PpCache::load(path)?)),
        None => None,
    };
    if let Some((_, c)) = &cache {
        if let Some(v) = c.get(&id, b, cfg.master_seed, n) {
            return Ok((v, true));
        }
    }
    let seeds = SeedSpec::new(cfg.master_seed, 0);
    let values = pp_baseline(&ProblemSampler(cfg.problem.as_ref()), b, n, &cfg.diagnostics.sinkhorn, &seeds)?;
    if let Some((path, mut c)) = cache {
        // reload so concurrent writers of other keys are not lost
        if let Ok(fresh) = PpCache::load(path) {
            c = fresh;
        }
        c.insert(&id, b, cfg.master_seed, &values);
        c.save(path)?;
    }
    Ok((values, false))
}

/// Runs `cfg.n_runs` independent runs in parallel and aggregates their scores.
pub fn run_ensemble_of_runs(cfg: &RunConfig) -> Result<EnsembleReport> {
    cfg.validate()?;
    let outcomes: Vec<(u64, std::result::Result<RunRecord, RunFailure>)> =
        (0..cfg.n_runs as u64).into_par_iter().map(|r| (r, run_lidl(cfg, r))).collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (r, o) in outcomes {
        match o {
            Ok(rec) => records.push(rec),
            Err(f) => {
                log::warn!("run {r} failed: {}", f.error);
                failures.push((r, f));
            }
        }
    }
    let (pp, pp_from_cache) = if cfg.diagnostics.ep_every > 0 { pp_values(cfg)? } else { (Vec::new(), false) };
    let aggregate = aggregate(&records, &pp, &cfg.diagnostics.sinkhorn)?;
    Ok(EnsembleReport { records, failures, pp, pp_from_cache, aggregate })
}

/// Averages over records at every snapshot step they all share.
pub fn aggregate(records: &[RunRecord], pp: &[f64], sk: &SinkhornConfig) -> Result<Vec<AggregateRow>> {
    let Some(first) = records.first() else { return Ok(Vec::new()) };
    let (pp_mean, pp_std) = if pp.is_empty() { (f64::NAN, f64::NAN) } else { (mean(pp), std_dev(pp)) };
    let mut rows = Vec::new();
    for (i, snap) in first.snapshots.iter().enumerate() {
        let at: Vec<&Snapshot> = records.iter().filter_map(|r| r.snapshots.get(i)).filter(|s| s.step == snap.step).collect();
        if at.len() != records.len() {
            continue;
        }
        let eps: Vec<f64> = records
            .iter()
            .filter_map(|r| r.ep_series.iter().find(|p| p.step == snap.step).map(|p| p.ep))
            .collect();
        let scored = eps.len() == records.len() && !eps.is_empty();
        let avg = |f: &dyn Fn(&Snapshot) -> f64| at.iter().map(|s| f(s)).sum::<f64>() / at.len() as f64;
        rows.push(AggregateRow {
            t: snap.t,
            step: snap.step,
            fc: avg(&|s| s.calls.forward as f64),
            free_fc: avg(&|s| s.calls.free as f64),
            batch_size: avg(&|s| s.batch_size as f64),
            s: avg(&|s| s.s),
            mean_ep: if scored { mean(&eps) } else { f64::NAN },
            std_ep: if scored { std_dev(&eps) } else { f64::NAN },
            pp_mean,
            pp_std,
            double_sinkhorn: if scored && !pp.is_empty() { double_sinkhorn(&eps, pp, sk)? } else { f64::NAN },
        });
    }
    Ok(rows)
}
