use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::experiment::{Engine, ExperimentConfig, MAX_RELATIVE_STDERR};
use super::fit::{fit_loglog, ErrorPoint, RateFitResult};
use crate::besov::fft_in_place;
use crate::error::{config, Error, Result};
use crate::geometry::{holder_conjugate, mixed_norm_of_values, MixedExponent};
use crate::grid::{GridFunction, GridSpec};

/// Paths used to size the grid before the main run.
const PILOT_PATHS: usize = 20_000;
/// Grid half-width in standard deviations around the origin-shifted mean.
const EXTENT_SIGMAS: f64 = 6.0;
/// Largest smoothed grid per axis, by phase-space dimension `2d`.
const KDE_MAX_RES: [usize; 2] = [512, 32];
/// Negative mass a smoothed estimate may carry before it is rejected.
const NEGATIVE_MASS_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[default]
    Histogram,
    /// Gaussian kernel with a per-axis Silverman bandwidth, applied to binned
    /// counts.
    Kde,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityOptions {
    /// Lebesgue exponent `q`; distances are measured in its conjugate.
    pub q: MixedExponent,
    #[serde(default)]
    pub estimator: Estimator,
    /// Cells per axis; chosen from the sample count when absent.
    #[serde(default)]
    pub bins: Option<usize>,
}

impl DensityOptions {
    pub fn histogram(q: MixedExponent) -> Self {
        Self {
            q,
            estimator: Estimator::Histogram,
            bins: None,
        }
    }
}

/// A probability density on a grid, nonnegative and of unit mass there.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityEstimate {
    density: GridFunction,
    /// Per-axis kernel widths; empty for a histogram.
    bandwidth: Vec<f64>,
}

impl DensityEstimate {
    /// Histogram of endpoints stored as `x` then `v`, one state after
    /// another. Points outside the box are dropped.
    pub fn histogram(spec: GridSpec, states: &[f64]) -> Result<Self> {
        let mut counts = vec![0u64; spec.len()];
        let w = 2 * spec.dim();
        if states.len() % w != 0 {
            return Err(Error::Mismatch(format!("state buffer is not a multiple of {w}")));
        }
        for z in states.chunks_exact(w) {
            if let Some(c) = cell_in_box(&spec, z) {
                counts[c] += 1;
            }
        }
        Self::from_counts(spec, &counts)
    }

    pub fn from_counts(spec: GridSpec, counts: &[u64]) -> Result<Self> {
        if counts.len() != spec.len() {
            return Err(Error::Mismatch("count buffer does not match the grid".into()));
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::Numerical("no sample fell inside the density grid".into()));
        }
        let scale = 1.0 / (total as f64 * spec.cell_volume());
        let values = counts.iter().map(|&c| c as f64 * scale).collect();
        Ok(Self {
            density: GridFunction::new(spec, values)?,
            bandwidth: Vec::new(),
        })
    }

    /// Smooths binned counts with a Gaussian of the given per-axis widths
    /// (`d` position widths then `d` velocity widths).
    pub fn smoothed(spec: GridSpec, counts: &[u64], bandwidth: &[f64]) -> Result<Self> {
        let d = spec.dim();
        if bandwidth.len() != 2 * d || bandwidth.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return config(format!("need {} positive bandwidths", 2 * d));
        }
        let hist = Self::from_counts(spec.clone(), counts)?;
        let shape = spec.shape();
        let mut data: Vec<Complex64> = hist
            .density
            .values()
            .iter()
            .map(|&c| Complex64::new(c, 0.0))
            .collect();
        fft_in_place(&mut data, &shape, false);
        // Per-axis Fourier multipliers, applied as one product per entry.
        let factors: Vec<Vec<f64>> = shape
            .iter()
            .enumerate()
            .map(|(a, &len)| {
                let vel = a >= d;
                (0..len)
                    .map(|k| {
                        let w = spec.frequency(k, vel);
                        (-0.5 * (bandwidth[a] * w).powi(2)).exp()
                    })
                    .collect()
            })
            .collect();
        for (idx, c) in data.iter_mut().enumerate() {
            let mut rem = idx;
            let mut m = 1.0;
            for a in (0..shape.len()).rev() {
                m *= factors[a][rem % shape[a]];
                rem /= shape[a];
            }
            *c *= m;
        }
        fft_in_place(&mut data, &shape, true);
        let vol = spec.cell_volume();
        let mut negative = 0.0;
        let mut values: Vec<f64> = data
            .iter()
            .map(|c| {
                if c.re < 0.0 {
                    negative -= c.re * vol;
                    0.0
                } else {
                    c.re
                }
            })
            .collect();
        if negative > NEGATIVE_MASS_TOL {
            return Err(Error::Numerical(format!(
                "kernel smoothing produced negative mass {negative:.3e}"
            )));
        }
        let mass: f64 = values.iter().sum::<f64>() * vol;
        for v in values.iter_mut() {
            *v /= mass;
        }
        Ok(Self {
            density: GridFunction::new(spec, values)?,
            bandwidth: bandwidth.to_vec(),
        })
    }

    pub fn grid(&self) -> &GridSpec {
        self.density.spec()
    }

    pub fn density(&self) -> &GridFunction {
        &self.density
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    pub fn mass(&self) -> f64 {
        self.density.integral()
    }

    /// Mixed norm of the difference with exponent `p`.
    pub fn distance(&self, other: &Self, p: MixedExponent) -> Result<f64> {
        let diff = self.density.sub(&other.density)?;
        Ok(mixed_norm_of_values(diff.spec(), diff.values(), p))
    }
}

fn cell_in_box(spec: &GridSpec, z: &[f64]) -> Option<usize> {
    let d = spec.dim();
    let axis = |c: f64, e: f64, res: usize| -> Option<usize> {
        let u = (c + e) / (2.0 * e);
        if (0.0..1.0).contains(&u) {
            Some(((u * res as f64) as usize).min(res - 1))
        } else {
            None
        }
    };
    let mut idx = 0;
    for &c in &z[..d] {
        idx = idx * spec.resolution_x() + axis(c, spec.extent_x(), spec.resolution_x())?;
    }
    for &c in &z[d..] {
        idx = idx * spec.resolution_v() + axis(c, spec.extent_v(), spec.resolution_v())?;
    }
    Some(idx)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityReport {
    pub estimator: Estimator,
    /// Exponent of the distance, conjugate to the requested `q`.
    pub distance_exponent: MixedExponent,
    pub extent_x: f64,
    pub extent_v: f64,
    pub resolution_x: usize,
    pub resolution_v: usize,
    pub bandwidth: Vec<f64>,
    /// Distance to the reference per level, with the noise floor as stderr.
    pub points: Vec<ErrorPoint>,
    pub resolved: Vec<bool>,
    /// Distance between the even- and odd-indexed halves of the reference.
    pub noise_floor: f64,
    pub fit: Option<RateFitResult>,
    /// Fewer than three levels rose clearly above the noise floor.
    pub inconclusive: bool,
}

/// Histogram counts for every level, the reference, and the reference
/// halves. Sums of counts are exact, so the reduction order is irrelevant.
struct Counts {
    cells: usize,
    data: Vec<u64>,
}

impl Counts {
    fn new(slots: usize, cells: usize) -> Self {
        Self {
            cells,
            data: vec![0; slots * cells],
        }
    }

    fn slot(&self, s: usize) -> &[u64] {
        &self.data[s * self.cells..(s + 1) * self.cells]
    }

    fn merge(mut self, other: Self) -> Self {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        self
    }
}

/// Measures the distance between the densities of the scheme at each level
/// and of the reference at time `T`, and fits its decay in `n`.
pub fn density_distance(cfg: &ExperimentConfig, opts: &DensityOptions) -> Result<DensityReport> {
    let d = cfg.dim;
    if d > 2 {
        return config(format!("density estimation is limited to d <= 2 (got d = {d})"));
    }
    let b = cfg.validate()?;
    let q = opts.q;
    if q.px.value() < 2.0 || q.pv.value() < 2.0 {
        return config(format!("q = {q} must be at least 2 in both components"));
    }
    // Drifts declared only in the sup class carry no integrability constraint.
    let p = b.meta().exponents;
    if p != MixedExponent::sup() && !q.dominates(&p) {
        return config(format!(
            "q = {q} must dominate the drift's exponent {}",
            b.meta().exponents
        ));
    }
    let engine = Engine::new(cfg)?;
    let nl = cfg.n_set.len();
    let m = cfg.sample_count;

    // Pilot: moments of the reference endpoints.
    let pilot = PILOT_PATHS.min(m);
    let moments = engine.map_batches(pilot, |range, ws| {
        let mut s = vec![[0.0f64; 2]; 2 * d];
        for p in range {
            engine.run_path(p, ws)?;
            for (acc, z) in s.iter_mut().zip(&ws.reference) {
                acc[0] += z;
                acc[1] += z * z;
            }
        }
        Ok(s)
    })?;
    let mut total = vec![[0.0f64; 2]; 2 * d];
    for part in &moments {
        for (t, s) in total.iter_mut().zip(part) {
            t[0] += s[0];
            t[1] += s[1];
        }
    }
    let pm = pilot as f64;
    let sd: Vec<f64> = total
        .iter()
        .map(|s| ((s[1] - s[0] * s[0] / pm) / (pm - 1.0)).max(0.0).sqrt())
        .collect();
    let reach: Vec<f64> = total
        .iter()
        .zip(&sd)
        .map(|(s, sd)| (s[0] / pm).abs() + EXTENT_SIGMAS * sd)
        .collect();
    let extent_x = reach[..d].iter().cloned().fold(0.0, f64::max);
    let extent_v = reach[d..].iter().cloned().fold(0.0, f64::max);
    if !(extent_x > 0.0 && extent_v > 0.0) {
        return Err(Error::Numerical("reference endpoints are degenerate".into()));
    }

    let dims = 2 * d;
    let bandwidth: Vec<f64> = match opts.estimator {
        Estimator::Histogram => Vec::new(),
        Estimator::Kde => {
            let factor = (4.0 / ((dims as f64 + 2.0) * m as f64)).powf(1.0 / (dims as f64 + 4.0));
            sd.iter().map(|s| s * factor).collect()
        }
    };
    let (res_x, res_v) = match opts.bins {
        Some(r) => (r, r),
        None => match opts.estimator {
            Estimator::Histogram => {
                let r = (m as f64).powf(1.0 / (3.0 * dims as f64)).ceil() as usize;
                let r = r.next_power_of_two().max(8);
                (r, r)
            }
            Estimator::Kde => {
                let cap = KDE_MAX_RES[d - 1];
                let per = |e: f64, h: &[f64]| {
                    let hmin = h.iter().cloned().fold(f64::INFINITY, f64::min);
                    ((4.0 * e / hmin).ceil() as usize).next_power_of_two().clamp(8, cap)
                };
                (per(extent_x, &bandwidth[..d]), per(extent_v, &bandwidth[d..]))
            }
        },
    };
    let spec = GridSpec::new(d, extent_x, extent_v, res_x, res_v)?;
    let cells = spec.len();

    // Slots: levels, reference, even half, odd half.
    let slots = nl + 3;
    let counts = engine
        .map_batches_reduce(
            m,
            || Counts::new(slots, cells),
            |range, ws, acc: &mut Counts| {
                for p in range {
                    engine.run_path(p, ws)?;
                    for i in 0..nl {
                        if let Some(c) = cell_in_box(&spec, &ws.levels[i]) {
                            acc.data[i * cells + c] += 1;
                        }
                    }
                    if let Some(c) = cell_in_box(&spec, &ws.reference) {
                        acc.data[nl * cells + c] += 1;
                        let half = nl + 1 + (p % 2) as usize;
                        acc.data[half * cells + c] += 1;
                    }
                }
                Ok(())
            },
            Counts::merge,
        )?;

    let build = |s: usize| -> Result<DensityEstimate> {
        match opts.estimator {
            Estimator::Histogram => DensityEstimate::from_counts(spec.clone(), counts.slot(s)),
            Estimator::Kde => DensityEstimate::smoothed(spec.clone(), counts.slot(s), &bandwidth),
        }
    };
    let qc = holder_conjugate(q);
    let reference = build(nl)?;
    let noise_floor = build(nl + 1)?.distance(&build(nl + 2)?, qc)?;
    let levels: Vec<DensityEstimate> = (0..nl).into_par_iter().map(build).collect::<Result<_>>()?;
    let mut points = Vec::with_capacity(nl);
    for (est, &n) in levels.iter().zip(&cfg.n_set) {
        points.push(ErrorPoint {
            n,
            error: est.distance(&reference, qc)?,
            stderr: noise_floor,
        });
    }
    let resolved: Vec<bool> = points
        .iter()
        .map(|p| p.error > 0.0 && noise_floor <= MAX_RELATIVE_STDERR * p.error)
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
    Ok(DensityReport {
        estimator: opts.estimator,
        distance_exponent: qc,
        extent_x,
        extent_v,
        resolution_x: res_x,
        resolution_v: res_v,
        bandwidth,
        inconclusive: fit.is_none(),
        points,
        resolved,
        noise_floor,
        fit,
    })
}
