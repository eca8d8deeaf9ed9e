//! Phase-space points, the free transport, the anisotropic distance and mixed
//! Lebesgue norms.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::grid::GridFunction;

/// Scaling weights of position and velocity: position scales like `t^{3/2}`
/// and velocity like `t^{1/2}` under the free kernel.
pub const ANISOTROPY: [f64; 2] = [3.0, 1.0];

/// A point `z = (x, v)` of `R^d × R^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawState")]
pub struct PhaseState {
    x: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawState {
    x: Vec<f64>,
    v: Vec<f64>,
}

impl TryFrom<RawState> for PhaseState {
    type Error = Error;

    fn try_from(raw: RawState) -> Result<Self> {
        PhaseState::new(raw.x, raw.v)
    }
}

impl PhaseState {
    pub fn new(x: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if x.is_empty() || x.len() != v.len() {
            return domain(format!(
                "position and velocity must have equal length >= 1 (got {} and {})",
                x.len(),
                v.len()
            ));
        }
        if x.iter().chain(&v).any(|c| !c.is_finite()) {
            return domain("phase state components must be finite");
        }
        Ok(Self { x, v })
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            x: vec![0.0; d.max(1)],
            v: vec![0.0; d.max(1)],
        }
    }

    /// One-dimensional convenience constructor.
    pub fn scalar(x: f64, v: f64) -> Result<Self> {
        Self::new(vec![x], vec![v])
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    /// Mutable access for in-place integrators; callers keep components finite.
    pub fn parts_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.x, &mut self.v)
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.v).all(|c| c.is_finite())
    }
}

/// `Γ_t z = (x + t v, v)`, the deterministic flow of the driftless system.
/// Negative `t` is allowed: `Γ` is a group.
pub fn gamma_transport(t: f64, z: &PhaseState) -> PhaseState {
    let x = z.x.iter().zip(&z.v).map(|(x, v)| x + t * v).collect();
    PhaseState { x, v: z.v.clone() }
}

/// `|x1 - x2|^{1/3} + |v1 - v2|` with Euclidean norms on each block.
pub fn anisotropic_distance(z1: &PhaseState, z2: &PhaseState) -> Result<f64> {
    if z1.dim() != z2.dim() {
        return Err(Error::Mismatch("phase states of different dimension".into()));
    }
    Ok(euclid_diff(&z1.x, &z2.x).cbrt() + euclid_diff(&z1.v, &z2.v))
}

fn euclid_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

/// An integrability exponent in `[1, ∞]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawExponent", into = "RawExponent")]
pub enum Exponent {
    Finite(f64),
    Infinity,
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum RawExponent {
    Number(f64),
    Text(String),
}

impl TryFrom<RawExponent> for Exponent {
    type Error = Error;

    fn try_from(raw: RawExponent) -> Result<Self> {
        match raw {
            RawExponent::Number(p) => Exponent::finite(p),
            RawExponent::Text(s) if matches!(s.as_str(), "inf" | "infinity" | "∞") => {
                Ok(Exponent::Infinity)
            }
            RawExponent::Text(s) => s
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("cannot parse exponent {s:?}")))
                .and_then(Exponent::finite),
        }
    }
}

impl From<Exponent> for RawExponent {
    fn from(e: Exponent) -> Self {
        match e {
            Exponent::Finite(p) => RawExponent::Number(p),
            Exponent::Infinity => RawExponent::Text("inf".into()),
        }
    }
}

impl Exponent {
    pub fn finite(p: f64) -> Result<Self> {
        if p.is_nan() || p < 1.0 {
            return domain(format!("exponent {p} must be >= 1"));
        }
        if p.is_infinite() {
            return Ok(Exponent::Infinity);
        }
        Ok(Exponent::Finite(p))
    }

    /// `1/p` with the convention `1/∞ = 0`.
    pub fn recip(self) -> f64 {
        match self {
            Exponent::Finite(p) => 1.0 / p,
            Exponent::Infinity => 0.0,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Exponent::Infinity)
    }

    /// `p / (p - 1)`, mapping 1 and ∞ onto each other.
    pub fn conjugate(self) -> Self {
        match self {
            Exponent::Infinity => Exponent::Finite(1.0),
            Exponent::Finite(p) if p == 1.0 => Exponent::Infinity,
            Exponent::Finite(p) => Exponent::Finite(1.0 / (1.0 - 1.0 / p)),
        }
    }

    /// Finite value, or `f64::INFINITY`.
    pub fn value(self) -> f64 {
        match self {
            Exponent::Finite(p) => p,
            Exponent::Infinity => f64::INFINITY,
        }
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exponent::Finite(p) => write!(f, "{p}"),
            Exponent::Infinity => write!(f, "inf"),
        }
    }
}

/// Mixed exponent `(p_x, p_v)`: inner norm in position, outer in velocity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedExponent {
    pub px: Exponent,
    pub pv: Exponent,
}

impl MixedExponent {
    pub fn new(px: f64, pv: f64) -> Result<Self> {
        Ok(Self {
            px: Exponent::finite(px)?,
            pv: Exponent::finite(pv)?,
        })
    }

    pub const fn sup() -> Self {
        Self {
            px: Exponent::Infinity,
            pv: Exponent::Infinity,
        }
    }

    /// `a · (d/p) = 3d/p_x + d/p_v`.
    pub fn anisotropic_weight(&self, d: usize) -> f64 {
        let d = d as f64;
        ANISOTROPY[0] * d * self.px.recip() + ANISOTROPY[1] * d * self.pv.recip()
    }

    /// Componentwise `q ≥ p`.
    pub fn dominates(&self, other: &Self) -> bool {
        self.px.value() >= other.px.value() && self.pv.value() >= other.pv.value()
    }
}

impl fmt::Display for MixedExponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.px, self.pv)
    }
}

pub fn holder_conjugate(p: MixedExponent) -> MixedExponent {
    MixedExponent {
        px: p.px.conjugate(),
        pv: p.pv.conjugate(),
    }
}

/// Midpoint-rule approximation of the mixed norm
/// `(∫ ‖f(·, v)‖_{p_x}^{p_v} dv)^{1/p_v}`.
///
/// Infinite exponents use the grid maximum, which is a lower bound of the
/// true supremum.
pub fn mixed_norm(f: &GridFunction, p: MixedExponent) -> f64 {
    mixed_norm_of_values(f.spec(), f.values(), p)
}

pub(crate) fn mixed_norm_of_values(
    spec: &crate::grid::GridSpec,
    values: &[f64],
    p: MixedExponent,
) -> f64 {
    let nx = spec.x_len();
    let nv = spec.v_len();
    let dvx = spec.cell_volume_x();
    let dvv = spec.cell_volume_v();
    let mut outer_acc = 0.0f64;
    let mut outer_max = 0.0f64;
    let mut inner = vec![0.0f64; nv];
    // Values are laid out x-major, so each x index owns a contiguous v-row.
    match p.px {
        Exponent::Infinity => {
            for ix in 0..nx {
                let row = &values[ix * nv..(ix + 1) * nv];
                for (acc, val) in inner.iter_mut().zip(row) {
                    *acc = acc.max(val.abs());
                }
            }
        }
        Exponent::Finite(px) => {
            for ix in 0..nx {
                let row = &values[ix * nv..(ix + 1) * nv];
                for (acc, val) in inner.iter_mut().zip(row) {
                    *acc += pow_abs(*val, px);
                }
            }
            for acc in inner.iter_mut() {
                *acc = (*acc * dvx).powf(1.0 / px);
            }
        }
    }
    match p.pv {
        Exponent::Infinity => {
            for a in &inner {
                outer_max = outer_max.max(*a);
            }
            outer_max
        }
        Exponent::Finite(pv) => {
            for a in &inner {
                outer_acc += pow_abs(*a, pv);
            }
            (outer_acc * dvv).powf(1.0 / pv)
        }
    }
}

#[inline]
fn pow_abs(v: f64, p: f64) -> f64 {
    let a = v.abs();
    if p == 1.0 {
        a
    } else if p == 2.0 {
        a * a
    } else {
        a.powf(p)
    }
}
