//! Ensemble Langevin sampling (ALDI, EKS, overdamped) with mid-run ensemble
//! enrichment, homotopy-blended potentials, Sinkhorn divergence diagnostics and
//! forward-call accounting.

pub mod enrichment;
pub mod ensemble;
pub mod homotopy;
pub mod metrics;
pub mod error;
pub mod potential;
pub mod presets;
pub mod problems;
pub mod pp_cache;
pub mod propagators;
pub mod rng;
pub mod runner;
pub mod sinkhorn;

pub use ensemble::{compute_stats, empirical_measure, DiscreteMeasure, Ensemble, EnsembleStats};
pub use error::{Error, Result};
pub use potential::{CallCount, CallCounter, Counted, Potential};
pub use propagators::{Propagator, PropagatorKind};
pub use rng::{Lane, SeedSpec, Streams};
pub use sinkhorn::{sinkhorn_divergence, SinkhornConfig};
