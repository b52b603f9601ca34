//! Benchmark inverse problems with reference posterior samplers.

use std::sync::Arc;

use crate::ensemble::DiscreteMeasure;
use crate::error::{Error, Result};
use crate::homotopy::default_aux;
use crate::metrics::PosteriorSampler;
use crate::potential::Potential;
use crate::rng::{SeedSpec, StreamRng};

pub mod darcy;
pub mod linear_gaussian;
pub mod mcmc;
pub mod mixture;

pub use darcy::DarcyProblem;
pub use linear_gaussian::LinearGaussianProblem;
pub use mixture::GaussianMixtureProblem;

/// Posterior samples plus sampler diagnostics.
#[derive(Debug, Clone)]
pub struct ReferenceSample {
    pub measure: DiscreteMeasure,
    /// Mean acceptance rate, for MCMC samplers.
    pub acceptance: Option<f64>,
    /// Set when the sampler ran with an acceptance rate below 5%.
    pub quality_warning: bool,
}

pub trait Problem: Send + Sync {
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    /// Uncounted target potential.
    fn potential(&self) -> Arc<dyn Potential>;
    /// Draws one particle of the initial density.
    fn sample_initial(&self, rng: &mut StreamRng, out: &mut [f64]);
    /// `n` posterior samples; `slot` separates independent draws under one seed.
    fn posterior_sample(&self, n: usize, seeds: &SeedSpec, slot: u32) -> Result<ReferenceSample>;
    fn aux_potential(&self) -> Arc<dyn Potential> {
        default_aux(self.dim())
    }
}

/// Reference posterior draws for `problem`.
pub fn reference_sampler(problem: &dyn Problem, n: usize, seeds: &SeedSpec) -> Result<ReferenceSample> {
    if n == 0 {
        return Err(Error::InvalidConfig("need at least one reference sample".into()));
    }
    problem.posterior_sample(n, seeds, 0)
}

/// Adapter exposing a problem's posterior draws to the metrics functions.
pub struct ProblemSampler<'a>(pub &'a dyn Problem);

impl PosteriorSampler for ProblemSampler<'_> {
    fn sample(&self, n: usize, seeds: &SeedSpec, slot: u32) -> Result<DiscreteMeasure> {
        Ok(self.0.posterior_sample(n, seeds, slot)?.measure)
    }
}

pub const PROBLEM_IDS: [&str; 5] = ["linear-gaussian-2d", "mixture-k1", "mixture-k4", "darcy-d20", "darcy-d50"];

/// Built-in problem by id.
pub fn by_id(id: &str) -> Result<Arc<dyn Problem>> {
    Ok(match id {
        "linear-gaussian-2d" => Arc::new(LinearGaussianProblem::identity_2d()),
        "mixture-k1" => Arc::new(GaussianMixtureProblem::new(1, mixture::DEFAULT_RADIUS)?),
        "mixture-k4" => Arc::new(GaussianMixtureProblem::new(4, mixture::DEFAULT_RADIUS)?),
        "darcy-d20" => Arc::new(DarcyProblem::new(20, 10, darcy::DEFAULT_DATA_SEED)?),
        "darcy-d50" => Arc::new(DarcyProblem::new(50, 10, darcy::DEFAULT_DATA_SEED)?),
        other => return Err(Error::UnknownProblem(other.to_string())),
    })
}
