//! Weak-error and density-distance experiments, the noise coupling used to
//! run several step sizes on one Brownian path, and log-log rate fitting.

mod density;
mod experiment;
mod fit;
mod functionals;
mod skeleton;

pub use density::{density_distance, DensityEstimate, DensityOptions, DensityReport, Estimator};
pub use experiment::{
    weak_error, Coupling, ExperimentConfig, FunctionalReport, Reference, WeakErrorReport,
    DEFAULT_BATCH, MAX_RELATIVE_STDERR, MIN_SAMPLES,
};
pub use fit::{fit_loglog, ErrorPoint, RateFitResult};
pub use functionals::TestFunctional;
pub use skeleton::NoiseSkeleton;

use serde::Serialize;

/// Outcome of a rate check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    /// Too few resolved points to judge.
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Inconclusive => "INCONCLUSIVE",
        })
    }
}

/// Stream id of `(element, path)`: the element selects the role of a draw
/// (skeleton, reference, independent level) and the path its sample index.
pub fn stream_id(element: u64, path: u64) -> u64 {
    (element << 40) | (path & ((1 << 40) - 1))
}
