use std::sync::Arc;

use lidl::enrichment::{EnrichmentPlan, EnrichmentScheme};
use lidl::homotopy::{HomotopyPotential, HomotopySchedule, SwitchShape};
use lidl::metrics::{fc_at_step, fc_at_step_with_schedule, HeuristicConfig};
use lidl::potential::GaussianPotential;
use lidl::presets;
use lidl::problems::{by_id, Problem, ReferenceSample};
use lidl::rng::StreamRng;
use lidl::runner::{aggregate, run_ensemble_of_runs, run_lidl, AdaptivePlan, PlanSpec, RunConfig};
use lidl::{CallCounter, Counted, Ensemble, Error, Lane, Potential, Propagator, SeedSpec, SinkhornConfig};

fn short_unimodal(plan: PlanSpec, n_iter: usize) -> RunConfig {
    let mut cfg = RunConfig::new(by_id("mixture-k1").unwrap(), Propagator::aldi(0.05).unwrap(), plan, n_iter);
    cfg.master_seed = 11;
    cfg
}

#[test]
fn plain_run_is_bitwise_a_propagate_call() {
    let cfg = short_unimodal(PlanSpec::Fixed(EnrichmentPlan::none(400)), 40);
    let rec = run_lidl(&cfg, 3).unwrap();

    let problem = by_id("mixture-k1").unwrap();
    let seeds = SeedSpec::new(11, 3);
    let mut data = vec![0.0; 400 * 2];
    for (i, row) in data.chunks_mut(2).enumerate() {
        problem.sample_initial(&mut seeds.rng(Lane::Initial, i as u64, 0), row);
    }
    let e0 = Ensemble::new(data, 2, 0.0).unwrap();
    let counter = CallCounter::new();
    let pot = Counted::new(problem.potential(), counter.clone(), false);
    let snaps = cfg.propagator.propagate(&e0, &pot, 40, &seeds.streams(Lane::Propagation), 0, 1).unwrap();

    assert_eq!(rec.snapshots.len(), snaps.len());
    for (s, e) in rec.snapshots.iter().zip(&snaps) {
        assert_eq!(s.ensemble.as_ref().unwrap().as_slice(), e.as_slice());
    }
    assert_eq!(rec.total_calls().forward, counter.get().forward);
    assert_eq!(rec.total_calls().forward, 400 * 40);
}

fn reconcile(cfg: &RunConfig) {
    let rec = run_lidl(cfg, 0).unwrap();
    let mut prev = 0;
    for s in &rec.snapshots {
        let want = fc_at_step_with_schedule(&rec.realized_plan, &cfg.schedule, cfg.dt(), s.step);
        assert_eq!(s.calls, want, "step {}", s.step);
        assert!(s.calls.forward >= prev);
        prev = s.calls.forward;
        assert_eq!(s.batch_size, rec.realized_plan.batch_at(s.step));
    }
}

#[test]
fn counters_match_closed_form() {
    reconcile(&presets::unimodal_lidl().unwrap());
    reconcile(&presets::plateau_lidl().unwrap());
    let mut lin = presets::homotopy_enrich_linear().unwrap();
    lin.n_iter = 2000;
    lin.diagnostics.ep_every = 0;
    reconcile(&lin);
    let mut conc = presets::homotopy_enrich_concave().unwrap();
    conc.diagnostics.ep_every = 0;
    conc.record_every = 50;
    reconcile(&conc);
}

#[test]
fn unimodal_config_totals() {
    let cfg = presets::unimodal_lidl().unwrap();
    let rec = run_lidl(&cfg, 0).unwrap();
    assert_eq!(rec.total_calls().forward, 68_000);
    assert_eq!(rec.final_ensemble.batch_size(), 400);
    let plateau = run_lidl(&presets::plateau_lidl().unwrap(), 0).unwrap();
    assert_eq!(plateau.final_ensemble.batch_size(), 400);
    assert_eq!(plateau.enrichment_events.len(), 1);
    assert_eq!(plateau.total_calls().forward, fc_at_step(&plateau.realized_plan, 200).forward);
}

#[test]
fn stages_continue_from_the_enriched_ensemble() {
    let mut cfg = presets::unimodal_lidl().unwrap();
    cfg.n_iter = 70;
    cfg.record_every = 1;
    cfg.diagnostics.ep_every = 0;
    let rec = run_lidl(&cfg, 1).unwrap();
    let target = cfg.problem.potential();
    let aux = cfg.problem.aux_potential();
    let streams = SeedSpec::new(cfg.master_seed, 1).streams(Lane::Propagation);
    for ev in &rec.enrichment_events {
        let before = rec.snapshots[ev.step - 1].ensemble.clone().unwrap();
        let blend = HomotopyPotential::new(aux.clone(), target.clone(), 1.0, CallCounter::new()).unwrap();
        let stepped = cfg.propagator.step(&before, &blend, &streams, (ev.step - 1) as u64).unwrap();
        let at = rec.snapshots[ev.step].ensemble.as_ref().unwrap();
        let b = stepped.batch_size();
        assert_eq!(&at.as_slice()[..b * 2], stepped.as_slice());
        assert_eq!(at.batch_size(), b + ev.added);
        // the next propagation starts from exactly this ensemble
        let next = cfg.propagator.step(at, &blend, &streams, ev.step as u64).unwrap();
        assert_eq!(rec.snapshots[ev.step + 1].ensemble.as_ref().unwrap().as_slice(), next.as_slice());
    }
}

#[test]
fn adaptive_triggers_on_the_check_grid() {
    let plan = AdaptivePlan {
        initial_batch: 100,
        batches: vec![100; 3],
        scheme: EnrichmentScheme::diffusion(),
        heuristic: HeuristicConfig::difference(),
    };
    let cfg = short_unimodal(PlanSpec::Adaptive(plan.clone()), 200);
    let rec = run_lidl(&cfg, 0).unwrap();
    assert_eq!(rec.enrichment_events.len(), 3);
    let mut last = 100;
    for ev in &rec.enrichment_events {
        assert_eq!(ev.step % 5, 0);
        assert!(ev.batch_after > last);
        last = ev.batch_after;
    }
    assert_eq!(rec.unspent_enrichments, 0);
    for s in &rec.snapshots {
        assert_eq!(s.calls, fc_at_step(&rec.realized_plan, s.step));
    }

    let mut strict = plan;
    strict.heuristic.tol = 1e-12;
    let rec = run_lidl(&short_unimodal(PlanSpec::Adaptive(strict), 60), 0).unwrap();
    assert_eq!(rec.enrichment_events.len(), 0);
    assert_eq!(rec.unspent_enrichments, 3);
}

#[test]
fn runs_are_reproducible_and_distinct() {
    let cfg = short_unimodal(PlanSpec::Fixed(presets::unimodal_lidl().unwrap().plan.clone().into_fixed()), 80);
    let a = run_lidl(&cfg, 2).unwrap();
    let b = run_lidl(&cfg, 2).unwrap();
    let c = run_lidl(&cfg, 3).unwrap();
    assert_eq!(a.final_ensemble, b.final_ensemble);
    assert_ne!(a.final_ensemble, c.final_ensemble);
}

trait IntoFixed {
    fn into_fixed(self) -> EnrichmentPlan;
}

impl IntoFixed for PlanSpec {
    fn into_fixed(self) -> EnrichmentPlan {
        match self {
            PlanSpec::Fixed(p) => p,
            PlanSpec::Adaptive(_) => panic!("fixed plan expected"),
        }
    }
}

#[test]
fn auxiliary_only_run_is_free() {
    let mut cfg = short_unimodal(PlanSpec::Fixed(EnrichmentPlan::none(50)), 30);
    cfg.schedule = HomotopySchedule::constant(0.0, 1.5);
    let rec = run_lidl(&cfg, 0).unwrap();
    assert_eq!(rec.total_calls().forward, 0);
    assert_eq!(rec.total_calls().free, 50 * 30);
    assert!(rec.s_series().iter().all(|(_, s)| *s == 0.0));
}

#[test]
fn ramp_switches_counting_at_first_positive_value() {
    let mut cfg = short_unimodal(PlanSpec::Fixed(EnrichmentPlan::none(20)), 40);
    cfg.schedule = HomotopySchedule::ramp(SwitchShape::Linear, 0.5, 1.5, 2.0).unwrap();
    let rec = run_lidl(&cfg, 0).unwrap();
    // steps 0..=10 run at s = 0
    assert_eq!(rec.total_calls().free, 20 * 11);
    assert_eq!(rec.total_calls().forward, 20 * 29);
}

#[test]
fn single_run_aggregate_is_the_record() {
    let mut cfg = short_unimodal(PlanSpec::Fixed(EnrichmentPlan::none(60)), 20);
    cfg.record_every = 5;
    cfg.diagnostics.ep_every = 5;
    cfg.n_runs = 1;
    let rep = run_ensemble_of_runs(&cfg).unwrap();
    let rec = &rep.records[0];
    assert_eq!(rep.aggregate.len(), rec.ep_series.len());
    for (row, p) in rep.aggregate.iter().zip(&rec.ep_series) {
        assert_eq!(row.step, p.step);
        assert_eq!(row.mean_ep, p.ep);
        assert_eq!(row.std_ep, 0.0);
    }
    assert_eq!(rep.pp.len(), 1);
    let again = aggregate(&rep.records, &rep.pp, &SinkhornConfig::default()).unwrap();
    assert_eq!(again, rep.aggregate);
}

#[test]
fn baseline_is_cached_across_a_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = short_unimodal(PlanSpec::Fixed(EnrichmentPlan::none(50)), 10);
    cfg.record_every = 10;
    cfg.diagnostics.ep_every = 10;
    cfg.diagnostics.pp_cache = Some(dir.path().join("pp.csv"));
    cfg.n_runs = 3;
    let first = run_ensemble_of_runs(&cfg).unwrap();
    assert!(!first.pp_from_cache);
    cfg.plan = PlanSpec::Fixed(EnrichmentPlan::from_times(25, &[(0.25, 25, EnrichmentScheme::diffusion())], 0.05).unwrap());
    let second = run_ensemble_of_runs(&cfg).unwrap();
    assert!(second.pp_from_cache);
    assert_eq!(first.pp, second.pp);
}

/// Overshooting steep bowl whose gradient turns NaN far from the origin.
struct Cliff;

impl Potential for Cliff {
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, y: &[f64]) -> f64 {
        13.0 * y[0] * y[0]
    }
    fn gradient(&self, y: &[f64], g: &mut [f64]) {
        g[0] = if y[0].abs() > 3.0 { f64::NAN } else { 26.0 * y[0] };
    }
}

struct CliffProblem;

impl Problem for CliffProblem {
    fn id(&self) -> String {
        "cliff".into()
    }
    fn dim(&self) -> usize {
        1
    }
    fn potential(&self) -> Arc<dyn Potential> {
        Arc::new(Cliff)
    }
    fn sample_initial(&self, _rng: &mut StreamRng, out: &mut [f64]) {
        out[0] = 1.0;
    }
    fn posterior_sample(&self, _n: usize, _seeds: &SeedSpec, _slot: u32) -> lidl::Result<ReferenceSample> {
        Err(Error::IllPosed("no posterior".into()))
    }
    fn aux_potential(&self) -> Arc<dyn Potential> {
        Arc::new(GaussianPotential::isotropic(1, 1.0))
    }
}

#[test]
fn divergence_keeps_the_partial_record() {
    let mut cfg = RunConfig::new(Arc::new(CliffProblem), Propagator::overdamped(0.1).unwrap(), PlanSpec::Fixed(EnrichmentPlan::none(4)), 50);
    cfg.silent = true;
    let fail = run_lidl(&cfg, 0).unwrap_err();
    // 1 -> -1.6 -> 2.56 -> -4.1
    assert_eq!(fail.error, Error::DivergedStep { step: 3 });
    assert_eq!(fail.partial.diverged_at, Some(3));
    assert_eq!(fail.partial.snapshots.len(), 4);
    let rep = run_ensemble_of_runs(&RunConfig { n_runs: 2, ..cfg }).unwrap();
    assert_eq!(rep.failures.len(), 2);
    assert!(rep.records.is_empty() && rep.aggregate.is_empty());
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = short_unimodal(PlanSpec::Fixed(EnrichmentPlan::from_times(10, &[(5.0, 10, EnrichmentScheme::diffusion())], 0.05).unwrap()), 50);
    assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
    cfg.plan = PlanSpec::Fixed(EnrichmentPlan::none(10));
    cfg.record_every = 3;
    cfg.diagnostics.ep_every = 5;
    assert!(cfg.validate().is_err());
}
