use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::{fit_loglog, ErrorPoint, RateFitResult};
use super::functionals::TestFunctional;
use super::skeleton::NoiseSkeleton;
use super::stream_id;
use crate::drift::{parse_drift, tame, DriftField, MollifierSpec, TamingParams};
use crate::error::{config, Error, Result};
use crate::geometry::PhaseState;
use crate::noise::{sample_free_endpoint, RngStream};
use crate::scheme::{exact_kinetic_ou, InnerQuadrature, OuBridge, SchemeConfig, Stepper, StreamNoise};

/// Fewest paths an experiment accepts.
pub const MIN_SAMPLES: usize = 1000;
/// Points whose stderr exceeds this fraction of the error are not fitted.
pub const MAX_RELATIVE_STDERR: f64 = 0.3;
pub const DEFAULT_BATCH: usize = 4096;

/// Stream elements: what a draw is for.
const ELEM_SKELETON: u64 = 0;
const ELEM_REFERENCE: u64 = 1;
const ELEM_LEVEL_BASE: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Reference {
    /// Exact kinetic OU law; the drift must be `ou` with the same rate.
    ExactOu { gamma: f64 },
    /// The tamed scheme itself at a much finer step count.
    FineTamed { n_ref: usize },
    /// The driftless process; the drift must be zero.
    Free,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// Each level and the reference use their own noise.
    Independent,
    /// All levels and the reference run on one Brownian path per sample.
    CommonNoise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Catalog id of the drift.
    pub drift: String,
    pub dim: usize,
    pub taming: TamingParams,
    #[serde(default)]
    pub mollifier: MollifierSpec,
    #[serde(default)]
    pub inner: InnerQuadrature,
    pub z0: PhaseState,
    pub horizon: f64,
    pub n_set: Vec<usize>,
    pub reference: Reference,
    pub functionals: Vec<TestFunctional>,
    pub sample_count: usize,
    pub seed: u64,
    pub coupling: Coupling,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_batch() -> usize {
    DEFAULT_BATCH
}

impl ExperimentConfig {
    /// Checks the configuration and resolves the drift.
    pub fn validate(&self) -> Result<DriftField> {
        let b = parse_drift(&self.drift, self.dim)?;
        self.taming.validate()?;
        if self.z0.dim() != self.dim {
            return config(format!("z0 has dimension {} but dim = {}", self.z0.dim(), self.dim));
        }
        if !(self.horizon > 0.0 && self.horizon <= 1.0) {
            return config(format!("horizon must lie in (0, 1] (got {})", self.horizon));
        }
        if self.n_set.is_empty() {
            return config("n_set is empty");
        }
        if self.n_set.windows(2).any(|w| w[0] >= w[1]) || self.n_set[0] == 0 {
            return config("n_set must be strictly increasing positive integers");
        }
        if self.functionals.is_empty() {
            return config("at least one test functional is required");
        }
        if self.sample_count < MIN_SAMPLES {
            return config(format!(
                "sample_count must be >= {MIN_SAMPLES} (got {})",
                self.sample_count
            ));
        }
        if self.batch_size == 0 {
            return config("batch_size must be >= 1");
        }
        let max_n = *self.n_set.last().expect("nonempty");
        match self.reference {
            Reference::ExactOu { gamma } => match b.ou_rate() {
                Some(g) if g == gamma => {}
                _ => {
                    return config(format!(
                        "reference exact_ou(gamma={gamma}) needs drift ou:gamma={gamma}, got {:?}",
                        self.drift
                    ))
                }
            },
            Reference::Free => {
                if b.ou_rate() != Some(0.0) {
                    return config("reference free needs the zero drift");
                }
            }
            Reference::FineTamed { n_ref } => {
                if n_ref <= 4 * max_n {
                    return config(format!("n_ref = {n_ref} must exceed 4 × max(n_set) = {}", 4 * max_n));
                }
            }
        }
        let mut levels = self.n_set.clone();
        if let Reference::FineTamed { n_ref } = self.reference {
            levels.push(n_ref);
        }
        for &n in &levels {
            let raw = self.horizon * n as f64;
            if (raw - raw.round()).abs() > 1e-9 {
                return config(format!("horizon {} is not on the grid of n = {n}", self.horizon));
            }
        }
        if self.coupling == Coupling::CommonNoise {
            let base = levels[0];
            for &n in &levels {
                if n % base != 0 || !(n / base).is_power_of_two() {
                    return config(format!(
                        "common-noise coupling needs every level to be {base} × 2^k (got {n})"
                    ));
                }
            }
        }
        Ok(b)
    }

    fn reference_level(&self) -> usize {
        match self.reference {
            Reference::FineTamed { n_ref } => n_ref,
            _ => *self.n_set.last().expect("validated"),
        }
    }
}

enum RefEngine {
    ExactOu { gamma: f64, bridge: OuBridge },
    Free,
    Fine { n_ref: usize, drift: DriftField },
}

/// Everything needed to simulate one path at every level.
pub(super) struct Engine {
    cfg: ExperimentConfig,
    tamed: Vec<DriftField>,
    zero: DriftField,
    reference: RefEngine,
}

/// Per-path scratch owned by one worker.
pub(super) struct Workspace {
    stepper: Stepper,
    pub levels: Vec<Vec<f64>>,
    pub reference: Vec<f64>,
}

impl Engine {
    pub(super) fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let b = cfg.validate()?;
        let tamed = cfg
            .n_set
            .iter()
            .map(|&n| tame(b.clone(), &cfg.taming.at_level(n), &cfg.mollifier))
            .collect::<Result<Vec<_>>>()?;
        let reference = match cfg.reference {
            Reference::ExactOu { gamma } => RefEngine::ExactOu {
                gamma,
                bridge: OuBridge::new(gamma, 1.0 / cfg.reference_level() as f64)?,
            },
            Reference::Free => RefEngine::Free,
            Reference::FineTamed { n_ref } => RefEngine::Fine {
                n_ref,
                drift: tame(b.clone(), &cfg.taming.at_level(n_ref), &cfg.mollifier)?,
            },
        };
        Ok(Self {
            cfg: cfg.clone(),
            tamed,
            zero: parse_drift("zero", cfg.dim)?,
            reference,
        })
    }

    pub(super) fn workspace(&self) -> Result<Workspace> {
        let state = 2 * self.cfg.dim;
        Ok(Workspace {
            stepper: Stepper::new(self.cfg.inner, self.cfg.dim)?,
            levels: vec![vec![0.0; state]; self.cfg.n_set.len()],
            reference: vec![0.0; state],
        })
    }

    fn scheme_cfg(&self, n: usize) -> SchemeConfig {
        SchemeConfig {
            n,
            horizon: self.cfg.horizon,
            inner: self.cfg.inner,
            record_path: false,
        }
    }

    /// Simulates path `p`; endpoints land in `ws.levels` and `ws.reference`
    /// as `x` followed by `v`.
    pub(super) fn run_path(&self, p: u64, ws: &mut Workspace) -> Result<()> {
        match self.cfg.coupling {
            Coupling::CommonNoise => self.run_coupled(p, ws),
            Coupling::Independent => self.run_independent(p, ws),
        }
    }

    fn start(&self, out: &mut [f64]) {
        let d = self.cfg.dim;
        out[..d].copy_from_slice(self.cfg.z0.x());
        out[d..].copy_from_slice(self.cfg.z0.v());
    }

    fn run_on(&self, ws_stepper: &mut Stepper, out: &mut [f64], n: usize, b: &DriftField, noise: &mut dyn crate::scheme::NoiseSource) -> Result<()> {
        self.start(out);
        let d = self.cfg.dim;
        let (x, v) = out.split_at_mut(d);
        ws_stepper.run(x, v, &self.scheme_cfg(n), b.as_ref(), noise, |_, _, _| {})
    }

    fn run_coupled(&self, p: u64, ws: &mut Workspace) -> Result<()> {
        let cfg = &self.cfg;
        let mut rng = RngStream::new(cfg.seed, stream_id(ELEM_SKELETON, p));
        let mut skel = NoiseSkeleton::sample(cfg.n_set[0], cfg.horizon, cfg.dim, &mut rng)?;
        for (i, &n) in cfg.n_set.iter().enumerate() {
            while skel.level() < n {
                skel = skel.refine(2 * skel.level(), &mut rng)?;
            }
            self.run_on(&mut ws.stepper, &mut ws.levels[i], n, &self.tamed[i], &mut skel.replay())?;
        }
        let top = cfg.reference_level();
        while skel.level() < top {
            skel = skel.refine(2 * skel.level(), &mut rng)?;
        }
        match &self.reference {
            RefEngine::Fine { n_ref, drift } => {
                self.run_on(&mut ws.stepper, &mut ws.reference, *n_ref, drift, &mut skel.replay())?;
            }
            RefEngine::Free => {
                self.run_on(&mut ws.stepper, &mut ws.reference, top, &self.zero, &mut skel.replay())?;
            }
            RefEngine::ExactOu { bridge, .. } => {
                let d = cfg.dim;
                let mut extra = RngStream::new(cfg.seed, stream_id(ELEM_REFERENCE, p));
                self.start(&mut ws.reference);
                for step in 0..skel.steps() {
                    for k in 0..d {
                        let i = step * d + k;
                        let z1 = extra.standard_normal();
                        let z2 = extra.standard_normal();
                        let (x, v) = bridge.advance(
                            ws.reference[k],
                            ws.reference[d + k],
                            skel.integral()[i],
                            skel.increment()[i],
                            z1,
                            z2,
                        );
                        ws.reference[k] = x;
                        ws.reference[d + k] = v;
                    }
                }
            }
        }
        Ok(())
    }

    fn run_independent(&self, p: u64, ws: &mut Workspace) -> Result<()> {
        let cfg = &self.cfg;
        for (i, &n) in cfg.n_set.iter().enumerate() {
            let mut rng = RngStream::new(cfg.seed, stream_id(ELEM_LEVEL_BASE + i as u64, p));
            self.run_on(&mut ws.stepper, &mut ws.levels[i], n, &self.tamed[i], &mut StreamNoise(&mut rng))?;
        }
        let mut rng = RngStream::new(cfg.seed, stream_id(ELEM_REFERENCE, p));
        let d = cfg.dim;
        let end = match &self.reference {
            RefEngine::ExactOu { gamma, .. } => exact_kinetic_ou(&cfg.z0, cfg.horizon, *gamma, &mut rng)?,
            RefEngine::Free => sample_free_endpoint(&cfg.z0, cfg.horizon, &mut rng)?,
            RefEngine::Fine { n_ref, drift } => {
                self.run_on(&mut ws.stepper, &mut ws.reference, *n_ref, drift, &mut StreamNoise(&mut rng))?;
                return Ok(());
            }
        };
        ws.reference[..d].copy_from_slice(end.x());
        ws.reference[d..].copy_from_slice(end.v());
        Ok(())
    }

    /// Runs paths `0..count` in fixed-size batches and folds per-batch
    /// results in batch order, so the result does not depend on the number
    /// of worker threads.
    pub(super) fn map_batches<T, F>(&self, count: usize, per_batch: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(std::ops::Range<u64>, &mut Workspace) -> Result<T> + Sync,
    {
        let bs = self.cfg.batch_size as u64;
        let batches = (count as u64).div_ceil(bs);
        (0..batches)
            .into_par_iter()
            .map(|b| {
                let mut ws = self.workspace()?;
                let lo = b * bs;
                let hi = (lo + bs).min(count as u64);
                per_batch(lo..hi, &mut ws)
            })
            .collect()
    }

    /// Like [`Engine::map_batches`], folding into per-worker accumulators.
    /// `merge` must be exactly associative and commutative (integer sums)
    /// for the result to be independent of scheduling.
    pub(super) fn map_batches_reduce<T, I, F, M>(&self, count: usize, init: I, per_batch: F, merge: M) -> Result<T>
    where
        T: Send,
        I: Fn() -> T + Sync + Send,
        F: Fn(std::ops::Range<u64>, &mut Workspace, &mut T) -> Result<()> + Sync,
        M: Fn(T, T) -> T + Sync + Send,
    {
        let bs = self.cfg.batch_size as u64;
        let batches = (count as u64).div_ceil(bs);
        (0..batches)
            .into_par_iter()
            .fold(
                || self.workspace().map(|ws| (init(), ws)),
                |state: Result<(T, Workspace)>, b| {
                    let (mut acc, mut ws) = state?;
                    let lo = b * bs;
                    let hi = (lo + bs).min(count as u64);
                    per_batch(lo..hi, &mut ws, &mut acc)?;
                    Ok((acc, ws))
                },
            )
            .map(|r| r.map(|(acc, _)| acc))
            .try_reduce(&init, |a, b| Ok(merge(a, b)))
    }
}

/// Sums over one batch: per level and functional, of `φ(Z^n)`,
/// `φ(Z^n)²`, `φ(Z^n) - φ(Z)`, its square; per functional, `φ(Z)`, `φ(Z)²`.
#[derive(Clone, Debug, Default)]
struct Sums {
    level: Vec<[f64; 4]>,
    reference: Vec<[f64; 2]>,
}

/// Measured weak errors and the fit for one test functional.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FunctionalReport {
    pub functional_id: String,
    pub points: Vec<ErrorPoint>,
    /// Whether each point entered the fit.
    pub resolved: Vec<bool>,
    /// `E φ(Z^n)` per level and `E φ(Z)` of the reference.
    pub level_means: Vec<f64>,
    pub reference_mean: f64,
    pub fit: Option<RateFitResult>,
    /// No point was resolved at all.
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeakErrorReport {
    pub functionals: Vec<FunctionalReport>,
}

/// Estimates `|E φ(Z_T) - E φ(Z_T^n)|` for every `n` and test functional
/// and fits the decay in `n`.
pub fn weak_error(cfg: &ExperimentConfig) -> Result<WeakErrorReport> {
    let engine = Engine::new(cfg)?;
    let nl = cfg.n_set.len();
    let nf = cfg.functionals.len();
    let d = cfg.dim;
    let parts = engine.map_batches(cfg.sample_count, |range, ws| {
        let mut s = Sums {
            level: vec![[0.0; 4]; nl * nf],
            reference: vec![[0.0; 2]; nf],
        };
        for p in range {
            engine.run_path(p, ws)?;
            for (f, phi) in cfg.functionals.iter().enumerate() {
                let r = phi.eval(&ws.reference[..d], &ws.reference[d..]);
                s.reference[f][0] += r;
                s.reference[f][1] += r * r;
                for i in 0..nl {
                    let z = &ws.levels[i];
                    let val = phi.eval(&z[..d], &z[d..]);
                    let diff = val - r;
                    let acc = &mut s.level[i * nf + f];
                    acc[0] += val;
                    acc[1] += val * val;
                    acc[2] += diff;
                    acc[3] += diff * diff;
                }
            }
        }
        Ok(s)
    })?;
    let mut total = Sums {
        level: vec![[0.0; 4]; nl * nf],
        reference: vec![[0.0; 2]; nf],
    };
    for part in &parts {
        for (t, p) in total.level.iter_mut().zip(&part.level) {
            for k in 0..4 {
                t[k] += p[k];
            }
        }
        for (t, p) in total.reference.iter_mut().zip(&part.reference) {
            t[0] += p[0];
            t[1] += p[1];
        }
    }
    let m = cfg.sample_count as f64;
    let var = |s1: f64, s2: f64| ((s2 - s1 * s1 / m) / (m - 1.0)).max(0.0);
    let mut reports = Vec::with_capacity(nf);
    for (f, phi) in cfg.functionals.iter().enumerate() {
        let [r1, r2] = total.reference[f];
        let reference_mean = r1 / m;
        let mut points = Vec::with_capacity(nl);
        let mut level_means = Vec::with_capacity(nl);
        for (i, &n) in cfg.n_set.iter().enumerate() {
            let [v1, v2, d1, d2] = total.level[i * nf + f];
            level_means.push(v1 / m);
            let (error, stderr) = match cfg.coupling {
                Coupling::CommonNoise => ((d1 / m).abs(), (var(d1, d2) / m).sqrt()),
                Coupling::Independent => (
                    (v1 / m - reference_mean).abs(),
                    ((var(v1, v2) + var(r1, r2)) / m).sqrt(),
                ),
            };
            points.push(ErrorPoint { n, error, stderr });
        }
        let resolved: Vec<bool> = points
            .iter()
            .map(|p| p.error > 0.0 && p.stderr <= MAX_RELATIVE_STDERR * p.error)
            .collect();
        let fitted: Vec<ErrorPoint> = points
            .iter()
            .zip(&resolved)
            .filter(|(_, r)| **r)
            .map(|(p, _)| *p)
            .collect();
        let fit = match fit_loglog(&fitted) {
            Ok(f) => Some(f),
            Err(Error::Insufficient(_)) => None,
            Err(e) => return Err(e),
        };
        reports.push(FunctionalReport {
            functional_id: phi.id(),
            degenerate: fitted.is_empty(),
            points,
            resolved,
            level_means,
            reference_mean,
            fit,
        });
    }
    Ok(WeakErrorReport { functionals: reports })
}
