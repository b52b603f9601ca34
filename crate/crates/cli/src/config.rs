//! Experiment files: a TOML description of one problem and several methods run on it.

use std::path::PathBuf;
use std::sync::Arc;

use lidl::enrichment::{EnrichmentPlan, EnrichmentScheme, KickScale};
use lidl::homotopy::{enrichment_times_from_switch, HomotopySchedule, SwitchShape};
use lidl::metrics::{HeuristicConfig, HeuristicKind};
use lidl::problems::{by_id, Problem};
use lidl::runner::{AdaptivePlan, Diagnostics, PlanSpec, RunConfig};
use lidl::{Propagator, SinkhornConfig};
use serde::{Deserialize, Serialize};

use crate::UsageError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub schema_version: u32,
    pub name: String,
    /// Built-in problem id, shared by every method.
    pub problem: String,
    pub seed: u64,
    pub runs: usize,
    /// Output directory; the `--out` flag takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// File caching posterior baseline values across invocations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pp_cache: Option<PathBuf>,
    #[serde(rename = "method")]
    pub methods: Vec<MethodSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub name: String,
    pub propagator: PropagatorName,
    pub dt: f64,
    pub steps: usize,
    pub record_every: usize,
    pub plan: PlanFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleFile>,
    #[serde(default)]
    pub diagnostics: DiagnosticsFile,
    #[serde(default, skip_serializing_if = "is_false")]
    pub silent: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropagatorName {
    Overdamped,
    Eks,
    Aldi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PlanFile {
    Fixed {
        initial_batch: usize,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        events: Vec<EventFile>,
        /// Events placed where the switch crosses `i / parts`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        switch_events: Option<SwitchEvents>,
    },
    Adaptive {
        initial_batch: usize,
        batches: Vec<usize>,
        scheme: SchemeFile,
        heuristic: HeuristicFile,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventFile {
    pub t: f64,
    pub add: usize,
    pub scheme: SchemeFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchEvents {
    pub parts: usize,
    #[serde(default = "one")]
    pub gamma: f64,
    pub add: usize,
    pub scheme: SchemeFile,
}

fn one() -> f64 {
    1.0
}

fn one_step() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SchemeFile {
    ForwardSlice {
        delta_steps: usize,
    },
    BackwardSlice {
        delta_steps: usize,
    },
    Diffusion {
        #[serde(default = "one_step")]
        step_multiple: u32,
    },
    /// Kick variance `variance`, or `dt` times the mean ensemble variance when absent.
    RandomKick {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        variance: Option<f64>,
    },
    GaussianTransport {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        jitter: Option<f64>,
    },
    /// `k` diffusion parts with step multiples `1..=k`, grown sequentially.
    StackedDiffusion {
        k: u32,
    },
    Stacked {
        parts: Vec<SchemeFile>,
        #[serde(default)]
        from_originals: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeuristicName {
    Difference,
    Slope,
}

/// Unset fields take the defaults of the chosen heuristic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeuristicFile {
    pub kind: HeuristicName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n1: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n2: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check_every: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reset_on_enrichment: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeName {
    Constant,
    Linear,
    Convex,
    Concave,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleFile {
    pub shape: ShapeName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsFile {
    /// 0 disables scoring.
    #[serde(default)]
    pub ep_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posterior_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pp_pairs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sinkhorn_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sinkhorn_max_iters: Option<usize>,
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

impl ExperimentFile {
    /// Parses and checks an experiment file. Errors carry line and column.
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let exp: ExperimentFile = toml::from_str(text).map_err(|e| usage(e.to_string()))?;
        if exp.schema_version != SCHEMA_VERSION {
            return Err(usage(format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", exp.schema_version)));
        }
        if exp.methods.is_empty() {
            return Err(usage("an experiment needs at least one [[method]]"));
        }
        if exp.runs == 0 {
            return Err(usage("runs must be positive"));
        }
        let mut names: Vec<&str> = exp.methods.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(usage("method names must be unique"));
        }
        if let Some(bad) = exp.methods.iter().find(|m| m.name.is_empty() || m.name.contains(['/', '\\', ',']) || m.name.starts_with('.')) {
            return Err(usage(format!("method name {:?} is not usable as a directory name", bad.name)));
        }
        Ok(exp)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment files serialize")
    }

    /// Run configurations for every method, sharing one problem instance.
    pub fn build(&self) -> anyhow::Result<Vec<(String, RunConfig)>> {
        let problem = by_id(&self.problem).map_err(|e| usage(e.to_string()))?;
        self.methods
            .iter()
            .map(|m| {
                let cfg = m.build(problem.clone(), self).map_err(|e| usage(format!("method {}: {e}", m.name)))?;
                Ok((m.name.clone(), cfg))
            })
            .collect()
    }
}

impl MethodSpec {
    fn build(&self, problem: Arc<dyn Problem>, exp: &ExperimentFile) -> lidl::Result<RunConfig> {
        let propagator = match self.propagator {
            PropagatorName::Overdamped => Propagator::overdamped(self.dt)?,
            PropagatorName::Eks => Propagator::eks(self.dt)?,
            PropagatorName::Aldi => Propagator::aldi(self.dt)?,
        };
        let horizon = self.steps as f64 * self.dt;
        let schedule = match &self.schedule {
            None => HomotopySchedule::target_only(horizon),
            Some(s) => s.build(horizon)?,
        };
        let plan = match &self.plan {
            PlanFile::Fixed { initial_batch, events, switch_events } => {
                let mut list: Vec<(f64, usize, EnrichmentScheme)> =
                    events.iter().map(|e| (e.t, e.add, e.scheme.build())).collect();
                if let Some(sw) = switch_events {
                    let times = enrichment_times_from_switch(&schedule, sw.parts, sw.gamma, self.dt)?;
                    list.extend(times.into_iter().map(|t| (t, sw.add, sw.scheme.build())));
                }
                list.sort_by(|a, b| a.0.total_cmp(&b.0));
                PlanSpec::Fixed(EnrichmentPlan::from_times(*initial_batch, &list, self.dt)?)
            }
            PlanFile::Adaptive { initial_batch, batches, scheme, heuristic } => PlanSpec::Adaptive(AdaptivePlan {
                initial_batch: *initial_batch,
                batches: batches.clone(),
                scheme: scheme.build(),
                heuristic: heuristic.build(),
            }),
        };
        let mut cfg = RunConfig::new(problem, propagator, plan, self.steps);
        cfg.schedule = schedule;
        cfg.record_every = self.record_every;
        cfg.silent = self.silent;
        cfg.master_seed = exp.seed;
        cfg.n_runs = exp.runs;
        let d = &self.diagnostics;
        let defaults = SinkhornConfig::default();
        cfg.diagnostics = Diagnostics {
            ep_every: d.ep_every,
            posterior_samples: d.posterior_samples,
            sinkhorn: SinkhornConfig {
                epsilon: d.epsilon.unwrap_or(defaults.epsilon),
                max_iters: d.sinkhorn_max_iters.unwrap_or(defaults.max_iters),
                tol: d.sinkhorn_tol.unwrap_or(defaults.tol),
            },
            pp_pairs: d.pp_pairs,
            pp_cache: exp.pp_cache.clone(),
            keep_snapshots: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl SchemeFile {
    pub fn build(&self) -> EnrichmentScheme {
        match self {
            SchemeFile::ForwardSlice { delta_steps } => EnrichmentScheme::ForwardSlice { delta_steps: *delta_steps },
            SchemeFile::BackwardSlice { delta_steps } => EnrichmentScheme::BackwardSlice { delta_steps: *delta_steps },
            SchemeFile::Diffusion { step_multiple } => EnrichmentScheme::DiffusionPropagation { step_multiple: *step_multiple },
            SchemeFile::RandomKick { variance } => EnrichmentScheme::RandomKick {
                scale: variance.map_or(KickScale::Covariance, KickScale::Fixed),
            },
            SchemeFile::GaussianTransport { jitter } => EnrichmentScheme::GaussianTransport { jitter: *jitter },
            SchemeFile::StackedDiffusion { k } => EnrichmentScheme::stacked_diffusion(*k),
            SchemeFile::Stacked { parts, from_originals } => EnrichmentScheme::Stacked {
                parts: parts.iter().map(SchemeFile::build).collect(),
                from_originals: *from_originals,
            },
        }
    }
}

impl HeuristicFile {
    pub fn build(&self) -> HeuristicConfig {
        let mut h = match self.kind {
            HeuristicName::Difference => HeuristicConfig::difference(),
            HeuristicName::Slope => HeuristicConfig::slope(),
        };
        match &mut h.kind {
            HeuristicKind::Difference { n1, n2 } => {
                *n1 = self.n1.unwrap_or(*n1);
                *n2 = self.n2.unwrap_or(*n2);
            }
            HeuristicKind::Slope { n } => *n = self.n.unwrap_or(*n),
        }
        h.tol = self.tol.unwrap_or(h.tol);
        h.reference = self.reference.unwrap_or(h.reference);
        h.check_every = self.check_every.unwrap_or(h.check_every);
        h.stride = self.stride.unwrap_or(h.stride);
        h.reset_on_enrichment = self.reset_on_enrichment.unwrap_or(h.reset_on_enrichment);
        h
    }
}

impl ScheduleFile {
    fn build(&self, horizon: f64) -> lidl::Result<HomotopySchedule> {
        let missing = |what: &str| lidl::Error::InvalidConfig(format!("schedule needs `{what}`"));
        let shape = match self.shape {
            ShapeName::Constant => {
                let s = HomotopySchedule::constant(self.value.ok_or_else(|| missing("value"))?, horizon);
                s.validate()?;
                return Ok(s);
            }
            ShapeName::Linear => SwitchShape::Linear,
            ShapeName::Convex => SwitchShape::Convex,
            ShapeName::Concave => SwitchShape::Concave,
        };
        HomotopySchedule::ramp(shape, self.start.ok_or_else(|| missing("start"))?, self.end.ok_or_else(|| missing("end"))?, horizon)
    }
}
