//! Drift fields `b(t, x, v)`, a small catalog of test drifts, and the two
//! taming constructions (cutoff and mollification).

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::geometry::{Exponent, MixedExponent};
use crate::noise::RngStream;
use crate::quadrature::GaussLegendre;

/// Declared integrability data of a drift.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftMeta {
    /// The mixed Lebesgue class the drift belongs to.
    pub exponents: MixedExponent,
    /// Upper bound of `sup_t ‖b(t)‖_p`, when known.
    pub mixed_norm_bound: Option<f64>,
    /// Upper bound of `|b|`; `None` means unbounded.
    pub sup_bound: Option<f64>,
    pub time_dependent: bool,
}

/// A vector field `b(t, x, v)` on `[0, 1] × R^d × R^d`.
///
/// Implementations must be reentrant: `eval` may be called from many
/// threads at once.
pub trait Drift: Send + Sync {
    fn dim(&self) -> usize;

    /// Writes `b(t, x, v)` into `out` (length `d`).
    fn eval(&self, t: f64, x: &[f64], v: &[f64], out: &mut [f64]);

    fn meta(&self) -> &DriftMeta;

    /// `Some(γ)` if the field is exactly `-γ v`.
    fn ou_rate(&self) -> Option<f64> {
        None
    }
}

pub type DriftField = Arc<dyn Drift>;

/// Convenience wrapper returning a fresh vector.
pub fn eval_vec(b: &dyn Drift, t: f64, x: &[f64], v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; b.dim()];
    b.eval(t, x, v, &mut out);
    out
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|c| c * c).sum::<f64>().sqrt()
}

fn bounded_meta(sup: f64) -> DriftMeta {
    DriftMeta {
        exponents: MixedExponent::sup(),
        mixed_norm_bound: Some(sup),
        sup_bound: Some(sup),
        time_dependent: false,
    }
}

fn check_dim(d: usize) -> Result<()> {
    if d == 0 {
        return config("drift dimension must be at least 1");
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Zero {
    d: usize,
    meta: DriftMeta,
}

impl Zero {
    pub fn new(d: usize) -> Result<Self> {
        check_dim(d)?;
        Ok(Self {
            d,
            meta: bounded_meta(0.0),
        })
    }
}

impl Drift for Zero {
    fn dim(&self) -> usize {
        self.d
    }
    fn eval(&self, _: f64, _: &[f64], _: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn meta(&self) -> &DriftMeta {
        &self.meta
    }
    fn ou_rate(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// `b = -γ v`.
#[derive(Clone, Debug)]
pub struct KineticOu {
    d: usize,
    gamma: f64,
    meta: DriftMeta,
}

impl KineticOu {
    pub fn new(d: usize, gamma: f64) -> Result<Self> {
        check_dim(d)?;
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return config(format!("OU rate gamma must be >= 0 (got {gamma})"));
        }
        Ok(Self {
            d,
            gamma,
            meta: DriftMeta {
                exponents: MixedExponent::sup(),
                mixed_norm_bound: None,
                sup_bound: if gamma == 0.0 { Some(0.0) } else { None },
                time_dependent: false,
            },
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

impl Drift for KineticOu {
    fn dim(&self) -> usize {
        self.d
    }
    fn eval(&self, _: f64, _: &[f64], v: &[f64], out: &mut [f64]) {
        for (o, vi) in out.iter_mut().zip(v) {
            *o = -self.gamma * vi;
        }
    }
    fn meta(&self) -> &DriftMeta {
        &self.meta
    }
    fn ou_rate(&self) -> Option<f64> {
        Some(self.gamma)
    }
}

/// `b = A sgn(v_1) 1_{|v| <= 1} e_1`, with `sgn(0) = 0`.
#[derive(Clone, Debug)]
pub struct SignVelocity {
    d: usize,
    amp: f64,
    meta: DriftMeta,
}

impl SignVelocity {
    pub fn new(d: usize, amp: f64) -> Result<Self> {
        check_dim(d)?;
        if !amp.is_finite() {
            return config("sign drift amplitude must be finite");
        }
        Ok(Self {
            d,
            amp,
            meta: bounded_meta(amp.abs()),
        })
    }
}

impl Drift for SignVelocity {
    fn dim(&self) -> usize {
        self.d
    }
    fn eval(&self, _: f64, _: &[f64], v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        if norm(v) <= 1.0 {
            let s = if v[0] > 0.0 {
                1.0
            } else if v[0] < 0.0 {
                -1.0
            } else {
                0.0
            };
            out[0] = self.amp * s;
        }
    }
    fn meta(&self) -> &DriftMeta {
        &self.meta
    }
}

/// Floor applied to `|v|` in [`PowerLaw`] so the singular set never
/// overflows.
pub const POWER_LAW_FLOOR: f64 = 1e-12;

/// `b = A 1_{|x| <= 1} 1_{|v| <= 1} |v|^{-β} e_1`.
///
/// The mixed norm with `p_x = ∞` is finite iff `β p_v < d`; the declared
/// class is `p = (∞, d / (2β))` (clamped to `p_v >= 1`), and `(∞, ∞)` for
/// `β = 0`.
#[derive(Clone, Debug)]
pub struct PowerLaw {
    d: usize,
    amp: f64,
    beta: f64,
    meta: DriftMeta,
}

/// Surface measure of the unit sphere in `R^d`.
fn sphere_area(d: usize) -> f64 {
    let d = d as f64;
    2.0 * std::f64::consts::PI.powf(d / 2.0) / gamma_fn(d / 2.0)
}

/// Gamma function at half-integers and integers, which is all we need.
fn gamma_fn(s: f64) -> f64 {
    if (s - 0.5).abs() < 1e-12 {
        return std::f64::consts::PI.sqrt();
    }
    if (s - 1.0).abs() < 1e-12 {
        return 1.0;
    }
    (s - 1.0) * gamma_fn(s - 1.0)
}

impl PowerLaw {
    pub fn new(d: usize, amp: f64, beta: f64) -> Result<Self> {
        check_dim(d)?;
        if !amp.is_finite() {
            return config("power-law amplitude must be finite");
        }
        if !(beta >= 0.0 && beta < d as f64) {
            return config(format!("power-law exponent needs 0 <= beta < d (got {beta})"));
        }
        let meta = if beta == 0.0 {
            bounded_meta(amp.abs())
        } else {
            let pv = (d as f64 / (2.0 * beta)).max(1.0);
            let bound = amp.abs() * (sphere_area(d) / (d as f64 - beta * pv)).powf(1.0 / pv);
            DriftMeta {
                exponents: MixedExponent {
                    px: Exponent::Infinity,
                    pv: Exponent::finite(pv)?,
                },
                mixed_norm_bound: Some(bound),
                sup_bound: None,
                time_dependent: false,
            }
        };
        Ok(Self { d, amp, beta, meta })
    }
}

impl Drift for PowerLaw {
    fn dim(&self) -> usize {
        self.d
    }
    fn eval(&self, _: f64, x: &[f64], v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let r = norm(v);
        if norm(x) <= 1.0 && r <= 1.0 {
            out[0] = if self.beta == 0.0 {
                self.amp
            } else {
                self.amp * r.max(POWER_LAW_FLOOR).powf(-self.beta)
            };
        }
    }
    fn meta(&self) -> &DriftMeta {
        &self.meta
    }
}

/// A constant vector field.
#[derive(Clone, Debug)]
pub struct Constant {
    value: Vec<f64>,
    meta: DriftMeta,
}

impl Constant {
    pub fn new(value: Vec<f64>) -> Result<Self> {
        check_dim(value.len())?;
        if value.iter().any(|c| !c.is_finite()) {
            return config("constant drift must be finite");
        }
        let sup = norm(&value);
        let meta = DriftMeta {
            exponents: MixedExponent::sup(),
            mixed_norm_bound: Some(sup),
            sup_bound: Some(sup),
            time_dependent: false,
        };
        Ok(Self { value, meta })
    }
}

impl Drift for Constant {
    fn dim(&self) -> usize {
        self.value.len()
    }
    fn eval(&self, _: f64, _: &[f64], _: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.value);
    }
    fn meta(&self) -> &DriftMeta {
        &self.meta
    }
}

type EvalFn = dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync;

/// A drift given by a closure and caller-supplied metadata.
pub struct FnDrift {
    d: usize,
    f: Box<EvalFn>,
    meta: DriftMeta,
}

impl FnDrift {
    pub fn new<F>(d: usize, meta: DriftMeta, f: F) -> Result<Self>
    where
        F: Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        check_dim(d)?;
        Ok(Self {
            d,
            f: Box::new(f),
            meta,
        })
    }
}

impl fmt::Debug for FnDrift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnDrift").field("d", &self.d).finish()
    }
}

impl Drift for FnDrift {
    fn dim(&self) -> usize {
        self.d
    }
    fn eval(&self, t: f64, x: &[f64], v: &[f64], out: &mut [f64]) {
        (self.f)(t, x, v, out)
    }
    fn meta(&self) -> &DriftMeta {
        &self.meta
    }
}

/// Parses a catalog id such as `"ou:gamma=1.0"` or `"powerlaw:A=1,beta=0.25"`.
///
/// Known ids: `zero`, `ou` (`gamma`), `signv` (`A`), `powerlaw` (`A`, `beta`),
/// `const` (`c`, applied to the first component).
pub fn parse_drift(id: &str, d: usize) -> Result<DriftField> {
    let (name, args) = match id.split_once(':') {
        Some((n, a)) => (n.trim(), a.trim()),
        None => (id.trim(), ""),
    };
    let mut params: Vec<(String, f64)> = Vec::new();
    for part in args.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("drift parameter {part:?} is not key=value")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("drift parameter {part:?} is not a number")))?;
        params.push((k.trim().to_string(), v));
    }
    let allowed: &[&str] = match name {
        "zero" => &[],
        "ou" => &["gamma"],
        "signv" => &["A"],
        "powerlaw" => &["A", "beta"],
        "const" => &["c"],
        _ => return config(format!("unknown drift id {name:?}")),
    };
    for (k, _) in &params {
        if !allowed.contains(&k.as_str()) {
            return config(format!("drift {name:?} has no parameter {k:?}"));
        }
    }
    let get = |k: &str, default: f64| {
        params
            .iter()
            .find(|(key, _)| key == k)
            .map(|p| p.1)
            .unwrap_or(default)
    };
    Ok(match name {
        "zero" => Arc::new(Zero::new(d)?),
        "ou" => Arc::new(KineticOu::new(d, get("gamma", 1.0))?),
        "signv" => Arc::new(SignVelocity::new(d, get("A", 1.0))?),
        "powerlaw" => Arc::new(PowerLaw::new(d, get("A", 1.0), get("beta", 0.25))?),
        "const" => {
            let mut c = vec![0.0; d];
            c[0] = get("c", 1.0);
            Arc::new(Constant::new(c)?)
        }
        _ => unreachable!(),
    })
}

/// The catalog with default parameters, keyed by id.
pub fn builtin_drifts(d: usize) -> Result<Vec<(String, DriftField)>> {
    ["zero", "ou:gamma=1", "signv:A=1", "powerlaw:A=1,beta=0.25"]
        .iter()
        .map(|id| Ok((id.to_string(), parse_drift(id, d)?)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TamingKind {
    Mollify,
    Cutoff,
}

/// Parameters of a taming sequence `b_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TamingParams {
    pub kind: TamingKind,
    /// Step count; `h = 1/n`.
    #[serde(default = "default_n")]
    pub n: usize,
    /// Mollifier scale exponent.
    #[serde(default = "default_theta")]
    pub theta: f64,
    /// Cutoff growth exponent.
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    /// Cutoff level constant.
    #[serde(default = "default_one")]
    pub c2: f64,
    /// Allowed small-time growth exponent.
    #[serde(default)]
    pub zeta: f64,
    /// Besov regularity used by rate checks.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Uniform growth constant.
    #[serde(default = "default_one")]
    pub kappa_b: f64,
}

fn default_n() -> usize {
    1
}
fn default_theta() -> f64 {
    0.5
}
fn default_kappa() -> f64 {
    0.25
}
fn default_one() -> f64 {
    1.0
}
fn default_delta() -> f64 {
    1.5
}

impl TamingParams {
    pub fn cutoff(c2: f64, kappa: f64) -> Self {
        Self {
            kind: TamingKind::Cutoff,
            n: 1,
            theta: default_theta(),
            kappa,
            c2,
            zeta: 0.0,
            delta: default_delta(),
            kappa_b: 1.0,
        }
    }

    pub fn mollify(theta: f64) -> Self {
        Self {
            kind: TamingKind::Mollify,
            theta,
            ..Self::cutoff(1.0, default_kappa())
        }
    }

    pub fn at_level(&self, n: usize) -> Self {
        Self { n, ..self.clone() }
    }

    /// Checks every constraint; the message names the first one violated.
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return config("taming requires n >= 1");
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return config(format!("taming requires theta > 0 (got {})", self.theta));
        }
        if !(self.kappa > 0.0) {
            return config(format!("taming requires kappa > 0 (got {})", self.kappa));
        }
        if !(self.kappa < 0.5) {
            return config(format!("taming requires kappa < 1/2 (got {})", self.kappa));
        }
        if !(self.c2 > 0.0 && self.c2.is_finite()) {
            return config(format!("taming requires c2 > 0 (got {})", self.c2));
        }
        if !(0.0..=0.5).contains(&self.zeta) {
            return config(format!("taming requires 0 <= zeta <= 1/2 (got {})", self.zeta));
        }
        if !(self.delta > 1.0 && self.delta < 2.0) {
            return config(format!("taming requires 1 < delta < 2 (got {})", self.delta));
        }
        if !(self.kappa_b > 0.0 && self.kappa_b.is_finite()) {
            return config(format!("taming requires kappa_b > 0 (got {})", self.kappa_b));
        }
        Ok(())
    }

    /// `C_2 n^κ`.
    pub fn cutoff_level(&self) -> f64 {
        self.c2 * (self.n as f64).powf(self.kappa)
    }
}

/// `b_n = (|b| ∧ C_2 n^κ) / |b| · b` where `b ≠ 0`.
pub struct CutoffTamed {
    inner: DriftField,
    level: f64,
    meta: DriftMeta,
}

impl CutoffTamed {
    pub fn level(&self) -> f64 {
        self.level
    }
}

impl Drift for CutoffTamed {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval(&self, t: f64, x: &[f64], v: &[f64], out: &mut [f64]) {
        self.inner.eval(t, x, v, out);
        let m = norm(out);
        if m > self.level {
            let mut s = self.level / m;
            // Rounding may leave the rescaled norm an ulp above the level.
            loop {
                if out.iter().map(|o| (o * s) * (o * s)).sum::<f64>().sqrt() <= self.level {
                    break;
                }
                s *= 1.0 - f64::EPSILON;
            }
            for o in out.iter_mut() {
                *o *= s;
            }
        }
    }
    fn meta(&self) -> &DriftMeta {
        &self.meta
    }
}

pub fn cutoff_tame(b: DriftField, params: &TamingParams) -> Result<DriftField> {
    params.validate()?;
    if params.kind != TamingKind::Cutoff {
        return config("cutoff_tame needs kind = cutoff");
    }
    let level = params.cutoff_level();
    let meta = DriftMeta {
        sup_bound: Some(level),
        ..b.meta().clone()
    };
    Ok(Arc::new(CutoffTamed {
        inner: b,
        level,
        meta,
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MollifierShape {
    /// `c exp(-1/(1 - r²))` on `(-1, 1)` per axis.
    Bump,
    /// Standard normal per axis, truncated at ±8.
    Gaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MollifierSpec {
    pub shape: MollifierShape,
    /// Gauss–Legendre points per panel and axis.
    #[serde(default = "default_order")]
    pub order: usize,
    /// Composite panels per axis.
    #[serde(default = "default_panels")]
    pub panels: usize,
}

fn default_order() -> usize {
    16
}
fn default_panels() -> usize {
    1
}

impl Default for MollifierSpec {
    fn default() -> Self {
        Self {
            shape: MollifierShape::Bump,
            order: default_order(),
            panels: default_panels(),
        }
    }
}

/// `∫_{-1}^{1} exp(-1/(1 - r²)) dr`.
pub const BUMP_MASS: f64 = 0.443_993_816_168_079_4;

impl MollifierShape {
    /// Unnormalized one-dimensional profile and its support half-width.
    fn profile(self) -> (fn(f64) -> f64, f64) {
        match self {
            MollifierShape::Bump => (
                |r| {
                    if r.abs() < 1.0 {
                        (-1.0 / (1.0 - r * r)).exp()
                    } else {
                        0.0
                    }
                },
                1.0,
            ),
            MollifierShape::Gaussian => (|r| (-0.5 * r * r).exp(), 8.0),
        }
    }
}

impl MollifierSpec {
    /// Nodes and weights of the one-dimensional rule, weights summing to 1.
    pub fn axis_rule(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.order < 2 {
            return config(format!("mollifier quadrature order must be >= 2 (got {})", self.order));
        }
        if self.panels < 1 {
            return config("mollifier needs at least one panel");
        }
        let (phi, half) = self.shape.profile();
        let gl = GaussLegendre::new(self.order)?;
        let (nodes, w) = gl.composite(-half, half, self.panels);
        let mut weights: Vec<f64> = nodes.iter().zip(&w).map(|(u, w)| w * phi(*u)).collect();
        let total: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= total;
        }
        Ok((nodes, weights))
    }
}

/// `b_n = b * φ_n` with `φ_n(x, v) = n^{4dθ} φ(n^{3θ} x, n^θ v)`, evaluated
/// pointwise by a tensor Gauss–Legendre rule.
pub struct Mollified {
    inner: DriftField,
    scale_x: f64,
    scale_v: f64,
    /// Flattened tensor rule: `2d` unit offsets per node followed by the weight.
    rule: Vec<f64>,
    meta: DriftMeta,
}

impl Mollified {
    pub fn scales(&self) -> (f64, f64) {
        (self.scale_x, self.scale_v)
    }
}

impl Drift for Mollified {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval(&self, t: f64, x: &[f64], v: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let stride = 2 * d + 1;
        let mut px = vec![0.0; d];
        let mut pv = vec![0.0; d];
        let mut tmp = vec![0.0; d];
        out.fill(0.0);
        for node in self.rule.chunks_exact(stride) {
            for k in 0..d {
                px[k] = x[k] - self.scale_x * node[k];
                pv[k] = v[k] - self.scale_v * node[d + k];
            }
            self.inner.eval(t, &px, &pv, &mut tmp);
            let w = node[2 * d];
            for (o, b) in out.iter_mut().zip(&tmp) {
                *o += w * b;
            }
        }
    }
    fn meta(&self) -> &DriftMeta {
        &self.meta
    }
}

pub fn mollify_tame(b: DriftField, params: &TamingParams, phi: &MollifierSpec) -> Result<DriftField> {
    params.validate()?;
    if params.kind != TamingKind::Mollify {
        return config("mollify_tame needs kind = mollify");
    }
    let (nodes, weights) = phi.axis_rule()?;
    // `-γ v` is fixed by any unit-mass profile that is even in `v`.
    if b.ou_rate().is_some() {
        return Ok(b);
    }
    let d = b.dim();
    let axes = 2 * d;
    let m = nodes.len();
    let count = m.pow(axes as u32);
    let mut rule = Vec::with_capacity(count * (axes + 1));
    let mut idx = vec![0usize; axes];
    for _ in 0..count {
        let mut w = 1.0;
        for &i in &idx {
            rule.push(nodes[i]);
            w *= weights[i];
        }
        rule.push(w);
        for a in (0..axes).rev() {
            idx[a] += 1;
            if idx[a] < m {
                break;
            }
            idx[a] = 0;
        }
    }
    let n = params.n as f64;
    Ok(Arc::new(Mollified {
        meta: b.meta().clone(),
        inner: b,
        scale_x: n.powf(-3.0 * params.theta),
        scale_v: n.powf(-params.theta),
        rule,
    }))
}

/// Dispatches on `params.kind`.
pub fn tame(b: DriftField, params: &TamingParams, phi: &MollifierSpec) -> Result<DriftField> {
    match params.kind {
        TamingKind::Cutoff => cutoff_tame(b, params),
        TamingKind::Mollify => mollify_tame(b, params, phi),
    }
}

/// Result of [`verify_taming_growth`] for one level.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthRow {
    pub n: usize,
    pub sup: f64,
    /// `n^{-ζ} sup`.
    pub normalized: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TamingGrowthReport {
    pub rows: Vec<GrowthRow>,
    pub passed: bool,
    /// Least-squares slope of `log sup` against `log n`; `None` when every
    /// sup is zero or fewer than two levels are given.
    pub growth_exponent: Option<f64>,
}

/// Half-width of the probe box.
pub const PROBE_BOX: f64 = 2.0;

/// Estimates `sup_{t <= 1/n, z} |b_n(t, z)|` for each level from random
/// probes in the box plus structured probes: a tensor grid, the origin, and
/// points approaching the origin along each axis as `±10^{-k}`.
pub fn verify_taming_growth(
    family: &[(usize, DriftField)],
    params: &TamingParams,
    sample_budget: usize,
    seed: u64,
) -> Result<TamingGrowthReport> {
    if family.is_empty() {
        return Err(Error::Insufficient("taming family is empty".into()));
    }
    params.validate()?;
    let d = family[0].1.dim();
    let structured = structured_probes(d);
    let per_level = sample_budget / family.len();
    let mut rows = Vec::with_capacity(family.len());
    for (i, (n, b)) in family.iter().enumerate() {
        let horizon = 1.0 / *n as f64;
        let mut rng = RngStream::new(seed, i as u64);
        let mut out = vec![0.0; d];
        let mut sup = 0.0f64;
        for (x, v) in &structured {
            for t in [0.0, horizon] {
                b.eval(t, x, v, &mut out);
                sup = sup.max(norm(&out));
            }
        }
        let mut x = vec![0.0; d];
        let mut v = vec![0.0; d];
        for _ in 0..per_level {
            let t = horizon * rng.uniform();
            for c in x.iter_mut().chain(v.iter_mut()) {
                *c = PROBE_BOX * (2.0 * rng.uniform() - 1.0);
            }
            b.eval(t, &x, &v, &mut out);
            sup = sup.max(norm(&out));
        }
        rows.push(GrowthRow {
            n: *n,
            sup,
            normalized: (*n as f64).powf(-params.zeta) * sup,
        });
    }
    // Compare against the bound itself; dividing by `n^ζ` can round an
    // exact equality upward.
    let passed = rows
        .iter()
        .all(|r| r.sup <= params.kappa_b * (r.n as f64).powf(params.zeta));
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.sup > 0.0)
        .map(|r| ((r.n as f64).ln(), r.sup.ln()))
        .collect();
    let growth_exponent = if pts.len() >= 2 && pts.len() == rows.len() {
        let m = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        (sxx > 0.0).then(|| sxy / sxx)
    } else {
        None
    };
    Ok(TamingGrowthReport {
        rows,
        passed,
        growth_exponent,
    })
}

fn structured_probes(d: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut out = vec![(vec![0.0; d], vec![0.0; d])];
    for axis in 0..2 * d {
        for k in 1..=12 {
            for sign in [-1.0, 1.0] {
                let mut z = vec![0.0; 2 * d];
                z[axis] = sign * 10f64.powi(-k);
                out.push((z[..d].to_vec(), z[d..].to_vec()));
            }
        }
    }
    // Tensor grid with 9 nodes per axis (capped for larger d).
    let per_axis: usize = if d == 1 { 9 } else { 5 };
    let total = per_axis.pow(2 * d as u32);
    for idx in 0..total {
        let mut rem = idx;
        let mut z = vec![0.0; 2 * d];
        for c in z.iter_mut() {
            let i = rem % per_axis;
            rem /= per_axis;
            *c = -PROBE_BOX + 2.0 * PROBE_BOX * i as f64 / (per_axis - 1) as f64;
        }
        out.push((z[..d].to_vec(), z[d..].to_vec()));
    }
    out
}
