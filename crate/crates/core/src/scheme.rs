//! Time stepping: the tamed Euler–Maruyama recursion, the standard
//! Euler–Maruyama scheme, and exact samplers for the kinetic OU process.
//!
//! One tamed step of size `h` from `z = (x, v)` at step index `k` is
//!
//! ```text
//! x' = x + h v + ∫_0^h (h - r) b_n(kh + r, x + r v, v) dr + I
//! v' = v       + ∫_0^h         b_n(kh + r, x + r v, v) dr + W
//! ```
//!
//! where `(I, W)` is a [`StepNoise`] sample of scale `h`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::drift::{tame, Drift, DriftField, MollifierSpec, TamingParams};
use crate::error::{config, domain, Error, Result};
use crate::geometry::PhaseState;
use crate::noise::{sample_step_into, step_covariance, RngStream, StepNoise};
use crate::quadrature::GaussLegendre;

/// How the time integrals of the drift inside a step are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum InnerQuadrature {
    /// Drift frozen at the start of the step.
    Frozen,
    /// `m`-point Gauss–Legendre along the free characteristic.
    Gauss(usize),
}

impl Default for InnerQuadrature {
    fn default() -> Self {
        InnerQuadrature::Gauss(4)
    }
}

impl fmt::Display for InnerQuadrature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InnerQuadrature::Frozen => write!(f, "frozen"),
            InnerQuadrature::Gauss(m) => write!(f, "gauss:{m}"),
        }
    }
}

impl TryFrom<String> for InnerQuadrature {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        let s = s.trim();
        if s == "frozen" {
            return Ok(InnerQuadrature::Frozen);
        }
        let m = s
            .strip_prefix("gauss")
            .map(|r| r.trim_start_matches(':'))
            .and_then(|r| r.parse::<usize>().ok())
            .ok_or_else(|| Error::Config(format!("inner quadrature {s:?} is not 'frozen' or 'gauss:<m>'")))?;
        if m < 1 {
            return config("inner quadrature needs at least one node");
        }
        Ok(InnerQuadrature::Gauss(m))
    }
}

impl From<InnerQuadrature> for String {
    fn from(q: InnerQuadrature) -> Self {
        q.to_string()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchemeConfig {
    /// Steps per unit time; `h = 1/n`.
    pub n: usize,
    /// Final time in `(0, 1]`.
    pub horizon: f64,
    pub inner: InnerQuadrature,
    pub record_path: bool,
}

impl SchemeConfig {
    pub fn new(n: usize, horizon: f64) -> Self {
        Self {
            n,
            horizon,
            inner: InnerQuadrature::default(),
            record_path: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return config("scheme needs n >= 1");
        }
        if !(self.horizon > 0.0 && self.horizon <= 1.0) {
            return config(format!("horizon must lie in (0, 1] (got {})", self.horizon));
        }
        Ok(())
    }

    pub fn step_size(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Number of full steps and the length of the trailing partial step
    /// (zero when the horizon lies on the grid).
    pub fn step_plan(&self) -> (usize, f64) {
        let h = self.step_size();
        let raw = self.horizon * self.n as f64;
        let full = (raw + 1e-9).floor() as usize;
        let rest = self.horizon - full as f64 * h;
        if rest > 1e-12 * h.max(1.0) {
            (full, rest)
        } else {
            (full, 0.0)
        }
    }
}

/// A simulated trajectory. Without `record_path` only the initial and final
/// states are kept.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSample {
    pub times: Vec<f64>,
    pub states: Vec<PhaseState>,
    pub endpoint: PhaseState,
}

/// Supplies the noise of step `k` with scale `h`.
pub trait NoiseSource {
    fn fill(&mut self, k: usize, h: f64, out: &mut StepNoise) -> Result<()>;
}

/// Fresh draws from a random stream.
pub struct StreamNoise<'a>(pub &'a mut RngStream);

impl NoiseSource for StreamNoise<'_> {
    fn fill(&mut self, _: usize, h: f64, out: &mut StepNoise) -> Result<()> {
        sample_step_into(self.0, h, out)
    }
}

/// No noise at all: the deterministic skeleton of the scheme.
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn fill(&mut self, _: usize, h: f64, out: &mut StepNoise) -> Result<()> {
        out.h = h;
        out.integral_part.fill(0.0);
        out.increment_part.fill(0.0);
        Ok(())
    }
}

/// Replays a recorded noise sequence, stored step-major with `d` entries per
/// step.
pub struct ReplayNoise<'a> {
    pub h: f64,
    pub integral: &'a [f64],
    pub increment: &'a [f64],
}

impl NoiseSource for ReplayNoise<'_> {
    fn fill(&mut self, k: usize, h: f64, out: &mut StepNoise) -> Result<()> {
        if (h - self.h).abs() > 1e-12 * self.h {
            return Err(Error::Mismatch(format!(
                "replayed noise has scale {} but step needs {h}",
                self.h
            )));
        }
        let d = out.dim();
        let range = k * d..(k + 1) * d;
        if range.end > self.integral.len() {
            return Err(Error::Mismatch(format!("replayed noise has no step {k}")));
        }
        out.h = h;
        out.integral_part.copy_from_slice(&self.integral[range.clone()]);
        out.increment_part.copy_from_slice(&self.increment[range]);
        Ok(())
    }
}

/// Reusable state for stepping: the inner rule on `[0, 1]` and scratch.
pub struct Stepper {
    inner: InnerQuadrature,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    px: Vec<f64>,
    bval: Vec<f64>,
}

impl Stepper {
    pub fn new(inner: InnerQuadrature, d: usize) -> Result<Self> {
        let (nodes, weights) = match inner {
            InnerQuadrature::Frozen => (vec![0.0], vec![1.0]),
            InnerQuadrature::Gauss(m) => GaussLegendre::new(m)?.on_interval(0.0, 1.0),
        };
        Ok(Self {
            inner,
            nodes,
            weights,
            px: vec![0.0; d],
            bval: vec![0.0; d],
        })
    }

    /// Advances `(x, v)` in place by one tamed step starting at time `t0`.
    pub fn step(
        &mut self,
        x: &mut [f64],
        v: &mut [f64],
        t0: f64,
        h: f64,
        b: &dyn Drift,
        noise: &StepNoise,
    ) -> Result<()> {
        if (noise.h - h).abs() > 1e-12 * h {
            return Err(Error::Mismatch(format!(
                "mismatched noise scale: step h={h}, noise h={}",
                noise.h
            )));
        }
        let d = x.len();
        let mut dx = [0.0f64; 8];
        let mut dv = [0.0f64; 8];
        let mut dx_big;
        let mut dv_big;
        let (dx, dv): (&mut [f64], &mut [f64]) = if d <= 8 {
            (&mut dx[..d], &mut dv[..d])
        } else {
            dx_big = vec![0.0; d];
            dv_big = vec![0.0; d];
            (&mut dx_big, &mut dv_big)
        };
        match self.inner {
            InnerQuadrature::Frozen => {
                b.eval(t0, x, v, &mut self.bval);
                for k in 0..d {
                    dx[k] = 0.5 * h * h * self.bval[k];
                    dv[k] = h * self.bval[k];
                }
            }
            InnerQuadrature::Gauss(_) => {
                for (u, w) in self.nodes.iter().zip(&self.weights) {
                    let r = u * h;
                    for k in 0..d {
                        self.px[k] = x[k] + r * v[k];
                    }
                    b.eval(t0 + r, &self.px, v, &mut self.bval);
                    let wv = w * h;
                    let wx = wv * (h - r);
                    for k in 0..d {
                        dx[k] += wx * self.bval[k];
                        dv[k] += wv * self.bval[k];
                    }
                }
            }
        }
        for k in 0..d {
            x[k] += h * v[k] + dx[k] + noise.integral_part[k];
            v[k] += dv[k] + noise.increment_part[k];
        }
        Ok(())
    }

    /// Runs the tamed scheme in place over the plan of `cfg`, calling
    /// `record` after every step with the current time.
    pub fn run<R: FnMut(f64, &[f64], &[f64])>(
        &mut self,
        x: &mut [f64],
        v: &mut [f64],
        cfg: &SchemeConfig,
        b: &dyn Drift,
        noise: &mut dyn NoiseSource,
        mut record: R,
    ) -> Result<()> {
        let h = cfg.step_size();
        let (full, rest) = cfg.step_plan();
        let mut xi = StepNoise::zeros(h, x.len());
        for k in 0..full {
            noise.fill(k, h, &mut xi)?;
            let t0 = k as f64 * h;
            self.step(x, v, t0, h, b, &xi)?;
            record(t0 + h, x, v);
        }
        if rest > 0.0 {
            noise.fill(full, rest, &mut xi)?;
            self.step(x, v, full as f64 * h, rest, b, &xi)?;
            record(cfg.horizon, x, v);
        }
        Ok(())
    }
}

/// One step of the tamed scheme.
pub fn tamed_em_step(
    z: &PhaseState,
    k: usize,
    h: f64,
    b_n: &dyn Drift,
    xi: &StepNoise,
    inner: InnerQuadrature,
) -> Result<PhaseState> {
    if !(h > 0.0) {
        return domain(format!("step size must be positive (got {h})"));
    }
    if xi.dim() != z.dim() || b_n.dim() != z.dim() {
        return Err(Error::Mismatch("state, noise and drift dimensions differ".into()));
    }
    let mut out = z.clone();
    let mut st = Stepper::new(inner, z.dim())?;
    let (x, v) = out.parts_mut();
    st.step(x, v, k as f64 * h, h, b_n, xi)?;
    Ok(out)
}

/// Runs the tamed scheme with an already tamed drift and any noise source.
pub fn simulate_tamed_em_with(
    z0: &PhaseState,
    cfg: &SchemeConfig,
    b_n: &dyn Drift,
    noise: &mut dyn NoiseSource,
) -> Result<PathSample> {
    cfg.validate()?;
    if b_n.dim() != z0.dim() {
        return Err(Error::Mismatch("drift and initial state dimensions differ".into()));
    }
    let mut st = Stepper::new(cfg.inner, z0.dim())?;
    let mut z = z0.clone();
    let mut times = vec![0.0];
    let mut states = vec![z0.clone()];
    let (x, v) = z.parts_mut();
    st.run(x, v, cfg, b_n, noise, |t, x, v| {
        if cfg.record_path {
            times.push(t);
            states.push(PhaseState::new(x.to_vec(), v.to_vec()).expect("finite state"));
        }
    })?;
    if !z.is_finite() {
        return Err(Error::Numerical("scheme produced a non-finite state".into()));
    }
    if !cfg.record_path {
        times.push(cfg.horizon);
        states.push(z.clone());
    }
    Ok(PathSample {
        times,
        states,
        endpoint: z,
    })
}

/// Tames `b` at level `cfg.n` (default mollifier when mollifying) and runs
/// the scheme on fresh noise from `rng`.
pub fn simulate_tamed_em(
    z0: &PhaseState,
    cfg: &SchemeConfig,
    b: DriftField,
    taming: &TamingParams,
    rng: &mut RngStream,
) -> Result<PathSample> {
    let b_n = tame(b, &taming.at_level(cfg.n), &MollifierSpec::default())?;
    simulate_tamed_em_with(z0, cfg, b_n.as_ref(), &mut StreamNoise(rng))
}

/// The untamed comparison scheme `x' = x + h v`, `v' = v + h b(kh, z) + W`.
/// Only bounded drifts are accepted.
pub fn simulate_standard_em_with(
    z0: &PhaseState,
    cfg: &SchemeConfig,
    b: &dyn Drift,
    noise: &mut dyn NoiseSource,
) -> Result<PathSample> {
    cfg.validate()?;
    match b.meta().sup_bound {
        Some(s) if s.is_finite() => {}
        _ => return config("standard Euler–Maruyama needs a drift with finite sup bound; tame it first"),
    }
    let d = z0.dim();
    let h = cfg.step_size();
    let (full, rest) = cfg.step_plan();
    let mut z = z0.clone();
    let mut xi = StepNoise::zeros(h, d);
    let mut bval = vec![0.0; d];
    let mut times = vec![0.0];
    let mut states = vec![z0.clone()];
    let steps = full + usize::from(rest > 0.0);
    for k in 0..steps {
        let hk = if k < full { h } else { rest };
        noise.fill(k, hk, &mut xi)?;
        let (x, v) = z.parts_mut();
        b.eval(k as f64 * h, x, v, &mut bval);
        for i in 0..d {
            x[i] += hk * v[i];
            v[i] += hk * bval[i] + xi.increment_part[i];
        }
        if cfg.record_path {
            times.push((k as f64 * h + hk).min(cfg.horizon));
            states.push(z.clone());
        }
    }
    if !z.is_finite() {
        return Err(Error::Numerical("scheme produced a non-finite state".into()));
    }
    if !cfg.record_path {
        times.push(cfg.horizon);
        states.push(z.clone());
    }
    Ok(PathSample {
        times,
        states,
        endpoint: z,
    })
}

pub fn simulate_standard_em(
    z0: &PhaseState,
    cfg: &SchemeConfig,
    b: &dyn Drift,
    rng: &mut RngStream,
) -> Result<PathSample> {
    simulate_standard_em_with(z0, cfg, b, &mut StreamNoise(rng))
}

/// `(1 - e^{-γt})/γ` and `(1 - e^{-2γt})/(2γ)`, continuous at `γ = 0`.
fn decay_integrals(gamma: f64, t: f64) -> (f64, f64) {
    if gamma == 0.0 {
        return (t, t);
    }
    (-(-gamma * t).exp_m1() / gamma, -(-2.0 * gamma * t).exp_m1() / (2.0 * gamma))
}

/// Mean and per-dimension covariance `[[C_xx, C_xv], [C_xv, C_vv]]` of the
/// kinetic OU process `dX = V dt, dV = -γ V dt + dW` at time `t`.
pub fn ou_moments(z0: &PhaseState, t: f64, gamma: f64) -> Result<(PhaseState, [[f64; 2]; 2])> {
    if !(t > 0.0 && t.is_finite()) {
        return domain(format!("OU time must be positive (got {t})"));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return domain(format!("OU rate must be >= 0 (got {gamma})"));
    }
    if gamma == 0.0 {
        let mean = crate::geometry::gamma_transport(t, z0);
        return Ok((mean, step_covariance(t)?));
    }
    let (e1, e2) = decay_integrals(gamma, t);
    let y = gamma * t;
    let (cxx, cxv) = if y < 0.5 {
        // Series in y = γt; the closed forms cancel catastrophically here.
        let mut sxx = 0.0;
        let mut sxv = 0.0;
        let mut fact = 1.0;
        for k in 1..40 {
            fact *= (k + 1) as f64;
            let two_k = 2f64.powi(k);
            sxv -= (1.0 - two_k) * (-y).powi(k - 1) / fact;
            if k >= 2 {
                sxx += (-y).powi(k - 2) * (two_k - 2.0) / fact;
            }
        }
        (t * t * t * sxx, t * t * sxv)
    } else {
        ((t - 2.0 * e1 + e2) / (gamma * gamma), (e1 - e2) / gamma)
    };
    let x: Vec<f64> = z0.x().iter().zip(z0.v()).map(|(x, v)| x + v * e1).collect();
    let decay = (-gamma * t).exp();
    let v: Vec<f64> = z0.v().iter().map(|v| decay * v).collect();
    Ok((PhaseState::new(x, v)?, [[cxx, cxv], [cxv, e2]]))
}

/// Lower Cholesky factor of a symmetric positive semidefinite 2×2 matrix;
/// tiny negative pivots from round-off are clamped to zero.
pub fn cholesky2(c: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let l00 = c[0][0].max(0.0).sqrt();
    let l10 = if l00 > 0.0 { c[1][0] / l00 } else { 0.0 };
    let l11 = (c[1][1] - l10 * l10).max(0.0).sqrt();
    [[l00, 0.0], [l10, l11]]
}

/// Exact draw of the kinetic OU state at time `t`.
pub fn exact_kinetic_ou(z0: &PhaseState, t: f64, gamma: f64, rng: &mut RngStream) -> Result<PhaseState> {
    let (mean, cov) = ou_moments(z0, t, gamma)?;
    let l = cholesky2(cov);
    let mut out = mean;
    let (x, v) = out.parts_mut();
    for k in 0..x.len() {
        let z1 = rng.standard_normal();
        let z2 = rng.standard_normal();
        x[k] += l[0][0] * z1;
        v[k] += l[1][0] * z1 + l[1][1] * z2;
    }
    Ok(out)
}

/// Exact OU transition over one step of size `h` conditioned on the driving
/// noise `(I, W) = (∫_0^h W_s ds, W_h)` of that step.
///
/// Per dimension the update is `state' = E state + K (I, W) + L ζ` with
/// `ζ ~ N(0, I_2)`; the pair `K (I, W) + L ζ` then has the exact OU step
/// covariance, jointly with the noise.
#[derive(Clone, Debug, PartialEq)]
pub struct OuBridge {
    pub transition: [[f64; 2]; 2],
    pub gain: [[f64; 2]; 2],
    pub residual: [[f64; 2]; 2],
}

impl OuBridge {
    pub fn new(gamma: f64, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return domain(format!("bridge step must be positive (got {h})"));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return domain(format!("OU rate must be >= 0 (got {gamma})"));
        }
        let (e1, _) = decay_integrals(gamma, h);
        let transition = [[1.0, e1], [0.0, (-gamma * h).exp()]];
        // Kernels in u = h - s of the OU increment and of the noise pair.
        let eta = |u: f64| {
            let ex = if gamma == 0.0 { u } else { -(-gamma * u).exp_m1() / gamma };
            [ex, (-gamma * u).exp()]
        };
        let xi = |u: f64| [u, 1.0];
        let rule = GaussLegendre::new(24)?;
        let (nodes, weights) = rule.on_interval(0.0, h);
        let mut cross = [[0.0; 2]; 2];
        for (u, w) in nodes.iter().zip(&weights) {
            let (a, b) = (eta(*u), xi(*u));
            for i in 0..2 {
                for j in 0..2 {
                    cross[i][j] += w * a[i] * b[j];
                }
            }
        }
        let s = step_covariance(h)?;
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        let inv = [[s[1][1] / det, -s[0][1] / det], [-s[1][0] / det, s[0][0] / det]];
        let mut gain = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                gain[i][j] = cross[i][0] * inv[0][j] + cross[i][1] * inv[1][j];
            }
        }
        let mut res = [[0.0; 2]; 2];
        for (u, w) in nodes.iter().zip(&weights) {
            let (a, b) = (eta(*u), xi(*u));
            let r = [
                a[0] - gain[0][0] * b[0] - gain[0][1] * b[1],
                a[1] - gain[1][0] * b[0] - gain[1][1] * b[1],
            ];
            for i in 0..2 {
                for j in 0..2 {
                    res[i][j] += w * r[i] * r[j];
                }
            }
        }
        Ok(Self {
            transition,
            gain,
            residual: cholesky2(res),
        })
    }

    /// Advances one dimension's `(x, v)`; `z1, z2` are independent standard
    /// normals.
    #[inline]
    pub fn advance(&self, x: f64, v: f64, integral: f64, increment: f64, z1: f64, z2: f64) -> (f64, f64) {
        let (e, k, l) = (&self.transition, &self.gain, &self.residual);
        let nx = e[0][0] * x + e[0][1] * v + k[0][0] * integral + k[0][1] * increment + l[0][0] * z1;
        let nv = e[1][1] * v + k[1][0] * integral + k[1][1] * increment + l[1][0] * z1 + l[1][1] * z2;
        (nx, nv)
    }
}
