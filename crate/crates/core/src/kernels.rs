//! The free kinetic kernel `g_t`, its sheared form and the free semigroup
//! `P_t f(z) = E f(Γ_t z + G_t)`.
//!
//! Functions are sheared by `(Γ_t g)(x, v) = g(x + t v, v)`.
//! All operations require `t >= MIN_TIME`; the kernel is too stiff below it.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{config, domain, Error, Result};
use crate::geometry::{gamma_transport, mixed_norm, MixedExponent, PhaseState};
use crate::grid::{GridFunction, GridSpec};
use crate::noise::{sample_step_into, RngStream, StepNoise};

pub const MIN_TIME: f64 = 1e-6;

/// Minimum box half-width, in standard deviations of `G_t`, accepted by the
/// quadrature evaluator.
pub const MIN_SIGMAS: f64 = 6.0;

const MC_BATCH: usize = 4096;

fn check_time(t: f64) -> Result<()> {
    if !(t >= MIN_TIME && t.is_finite()) {
        return domain(format!("kernel time t must be finite and >= {MIN_TIME} (got {t})"));
    }
    Ok(())
}

/// Standard deviations `(σ_x, σ_v)` of one component of `G_t`.
pub fn free_sigmas(t: f64) -> (f64, f64) {
    ((t * t * t / 3.0).sqrt(), t.sqrt())
}

/// Density of `G_t`:
/// `(π² t⁴ / 3)^{-d/2} exp(-(3|x|² + |3x - 2tv|²) / (2t³))`.
pub fn free_density(t: f64, x: &[f64], v: &[f64]) -> Result<f64> {
    check_time(t)?;
    if x.len() != v.len() || x.is_empty() {
        return Err(Error::Mismatch("x and v must have equal nonzero length".into()));
    }
    Ok(free_density_unchecked(t, x, v))
}

#[inline]
fn free_density_unchecked(t: f64, x: &[f64], v: &[f64]) -> f64 {
    let d = x.len() as f64;
    let mut q = 0.0;
    for (xi, vi) in x.iter().zip(v) {
        let s = 3.0 * xi - 2.0 * t * vi;
        q += 3.0 * xi * xi + s * s;
    }
    let norm = (PI * PI * t.powi(4) / 3.0).powf(-0.5 * d);
    norm * (-q / (2.0 * t * t * t)).exp()
}

/// `(Γ_t g_t)(x, v) = g_t(x + t v, v)`.
pub fn gamma_twisted_density(t: f64, x: &[f64], v: &[f64]) -> Result<f64> {
    check_time(t)?;
    if x.len() != v.len() || x.is_empty() {
        return Err(Error::Mismatch("x and v must have equal nonzero length".into()));
    }
    let shifted: Vec<f64> = x.iter().zip(v).map(|(x, v)| x + t * v).collect();
    Ok(free_density_unchecked(t, &shifted, v))
}

/// How [`semigroup_apply`] evaluates the expectation.
#[derive(Clone, Debug)]
pub enum KernelEvalConfig {
    /// Midpoint quadrature of `∫ g_t(y) f(Γ_t z + y) dy` on a box centred at
    /// the origin.
    Quadrature(GridSpec),
    /// Plain Monte Carlo over `sample_count` draws of `G_t`.
    MonteCarlo {
        sample_count: usize,
        seed: u64,
        stream_base: u64,
    },
}

impl KernelEvalConfig {
    /// A quadrature grid with half-widths of 8 standard deviations at time `t`.
    pub fn quadrature_for(t: f64, d: usize, resolution: usize) -> Result<Self> {
        check_time(t)?;
        let (sx, sv) = free_sigmas(t);
        Ok(Self::Quadrature(GridSpec::new(
            d,
            8.0 * sx,
            8.0 * sv,
            resolution,
            resolution,
        )?))
    }
}

/// An estimate of `P_t f(z)`; `stderr` is zero for quadrature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SemigroupValue {
    pub value: f64,
    pub stderr: f64,
}

pub fn semigroup_apply<F>(f: &F, t: f64, z: &PhaseState, cfg: &KernelEvalConfig) -> Result<SemigroupValue>
where
    F: Fn(&[f64], &[f64]) -> f64 + Sync + ?Sized,
{
    check_time(t)?;
    let d = z.dim();
    let centre = gamma_transport(t, z);
    match cfg {
        KernelEvalConfig::Quadrature(spec) => {
            if spec.dim() != d {
                return Err(Error::Mismatch(format!(
                    "quadrature grid has d={} but state has d={d}",
                    spec.dim()
                )));
            }
            let (sx, sv) = free_sigmas(t);
            if spec.extent_x() < MIN_SIGMAS * sx || spec.extent_v() < MIN_SIGMAS * sv {
                return config(format!(
                    "quadrature box ({}, {}) is narrower than {MIN_SIGMAS} standard deviations ({}, {}) at t={t}",
                    spec.extent_x(),
                    spec.extent_v(),
                    MIN_SIGMAS * sx,
                    MIN_SIGMAS * sv
                ));
            }
            let mut y = vec![0.0; d];
            let mut w = vec![0.0; d];
            let mut px = vec![0.0; d];
            let mut pv = vec![0.0; d];
            let mut acc = 0.0;
            for idx in 0..spec.len() {
                spec.point(idx, &mut y, &mut w);
                let g = free_density_unchecked(t, &y, &w);
                if g == 0.0 {
                    continue;
                }
                for k in 0..d {
                    px[k] = centre.x()[k] + y[k];
                    pv[k] = centre.v()[k] + w[k];
                }
                acc += g * f(&px, &pv);
            }
            Ok(SemigroupValue {
                value: acc * spec.cell_volume(),
                stderr: 0.0,
            })
        }
        KernelEvalConfig::MonteCarlo {
            sample_count,
            seed,
            stream_base,
        } => {
            if *sample_count == 0 {
                return domain("Monte Carlo semigroup needs sample_count >= 1");
            }
            let batches = sample_count.div_ceil(MC_BATCH);
            let partial: Vec<(f64, f64)> = (0..batches)
                .into_par_iter()
                .map(|b| {
                    let mut rng = RngStream::new(*seed, stream_base.wrapping_add(b as u64));
                    let mut noise = StepNoise::zeros(t, d);
                    let mut px = vec![0.0; d];
                    let mut pv = vec![0.0; d];
                    let count = MC_BATCH.min(sample_count - b * MC_BATCH);
                    let (mut s1, mut s2) = (0.0, 0.0);
                    for _ in 0..count {
                        sample_step_into(&mut rng, t, &mut noise).expect("t checked");
                        for k in 0..d {
                            px[k] = centre.x()[k] + noise.integral_part[k];
                            pv[k] = centre.v()[k] + noise.increment_part[k];
                        }
                        let val = f(&px, &pv);
                        s1 += val;
                        s2 += val * val;
                    }
                    (s1, s2)
                })
                .collect();
            let (s1, s2) = partial
                .iter()
                .fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
            let m = *sample_count as f64;
            let mean = s1 / m;
            let var = if *sample_count > 1 {
                ((s2 - m * mean * mean) / (m - 1.0)).max(0.0)
            } else {
                0.0
            };
            Ok(SemigroupValue {
                value: mean,
                stderr: (var / m).sqrt(),
            })
        }
    }
}

/// Grid estimate of `‖g_t‖_p` on a box of 8 standard deviations.
pub fn kernel_norm(t: f64, d: usize, p: MixedExponent, resolution: usize) -> Result<f64> {
    check_time(t)?;
    let (sx, sv) = free_sigmas(t);
    let spec = GridSpec::new(d, 8.0 * sx, 8.0 * sv, resolution, resolution)?;
    let g = GridFunction::from_fn(spec, |x, v| free_density_unchecked(t, x, v))?;
    Ok(mixed_norm(&g, p))
}

/// The exponent `β` in `‖g_t‖_p ∝ t^β`: `-2d + (3d/p_x + d/p_v)/2`.
pub fn kernel_norm_exponent(d: usize, p: MixedExponent) -> f64 {
    -2.0 * d as f64 + 0.5 * p.anisotropic_weight(d)
}

/// Outcome of one check of the fixed kernel battery.
#[derive(Clone, Debug, serde::Serialize)]
pub struct KernelCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl KernelCheck {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

type TestFn = fn(&[f64], &[f64]) -> f64;

fn battery_functions() -> [(&'static str, TestFn); 3] {
    [
        ("cos", |x, v| x[0].cos() + v[0].cos()),
        ("gauss", |x, v| (-(x[0] * x[0] + v[0] * v[0])).exp()),
        ("tanh", |x, v| (x[0] + 0.5 * v[0] + 0.1).tanh()),
    ]
}

/// Chapman–Kolmogorov defect `P_{s+t} f(z) - P_s(P_t f)(z)` for `d = 1`.
///
/// The left side is evaluated by quadrature. The right side averages the
/// inner quadrature `P_t f` over `outer_samples` draws of `Γ_s z + G_s`.
/// Returns `(defect, stderr)`.
pub fn chapman_kolmogorov_defect<F>(
    f: &F,
    s: f64,
    t: f64,
    z: &PhaseState,
    outer_samples: usize,
    rng: &mut RngStream,
) -> Result<(f64, f64)>
where
    F: Fn(&[f64], &[f64]) -> f64 + Sync + ?Sized,
{
    let d = z.dim();
    let lhs = semigroup_apply(f, s + t, z, &KernelEvalConfig::quadrature_for(s + t, d, 64)?)?;
    let inner = KernelEvalConfig::quadrature_for(t, d, 32)?;
    let mut noise = StepNoise::zeros(s, d);
    let base = gamma_transport(s, z);
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..outer_samples {
        sample_step_into(rng, s, &mut noise)?;
        let x: Vec<f64> = (0..d).map(|k| base.x()[k] + noise.integral_part[k]).collect();
        let v: Vec<f64> = (0..d).map(|k| base.v()[k] + noise.increment_part[k]).collect();
        let val = semigroup_apply(f, t, &PhaseState::new(x, v)?, &inner)?.value;
        s1 += val;
        s2 += val * val;
    }
    let m = outer_samples as f64;
    let mean = s1 / m;
    let var = ((s2 - m * mean * mean) / (m - 1.0)).max(0.0);
    Ok((lhs.value - mean, (var / m).sqrt()))
}

/// Runs the fixed invariant battery for `d = 1`: normalization of `g_1` and
/// of the sheared kernel, the scaling identity, Chapman–Kolmogorov at
/// `s = t = 1/4`, and the `‖g_t‖_{(2,2)}` scaling slope.
pub fn kernel_battery(seed: u64) -> Result<Vec<KernelCheck>> {
    let mut out = Vec::new();

    let spec = GridSpec::square(1, 8.0, 256)?;
    let mass = GridFunction::from_fn(spec.clone(), |x, v| free_density_unchecked(1.0, x, v))?.integral();
    out.push(KernelCheck::new(
        "normalization",
        (mass - 1.0).abs() <= 1e-6,
        format!("∫g_1 = {mass:.12}"),
    ));

    let spec = GridSpec::new(1, 8.0 * free_sigmas(0.5).0 + 8.0 * 0.5 * free_sigmas(0.5).1, 8.0 * free_sigmas(0.5).1, 512, 256)?;
    let mass = GridFunction::from_fn(spec, |x, v| {
        gamma_twisted_density(0.5, x, v).unwrap_or(f64::NAN)
    })?
    .integral();
    out.push(KernelCheck::new(
        "twisted normalization",
        (mass - 1.0).abs() <= 1e-6,
        format!("∫Γg_0.5 = {mass:.12}"),
    ));

    let mut rng = RngStream::new(seed, 0);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let t = 0.05 + 0.95 * rng.uniform();
        // Points on the kernel's own scale keep the values out of the
        // subnormal range.
        let (sx, sv) = free_sigmas(t);
        let x = [2.0 * sx * rng.standard_normal()];
        let v = [2.0 * sv * rng.standard_normal()];
        let lhs = free_density(t, &x, &v)?;
        let rhs = t.powi(-2) * free_density(1.0, &[x[0] * t.powf(-1.5)], &[v[0] * t.powf(-0.5)])?;
        if lhs > 0.0 {
            worst = worst.max(((lhs - rhs) / lhs).abs());
        }
    }
    out.push(KernelCheck::new(
        "scaling identity",
        worst <= 1e-12,
        format!("max relative error {worst:.3e} over 1000 points"),
    ));

    let mut rng = RngStream::new(seed, 1);
    for (name, f) in battery_functions() {
        let z = PhaseState::scalar(rng.standard_normal(), rng.standard_normal())?;
        let (defect, se) = chapman_kolmogorov_defect(&f, 0.25, 0.25, &z, 2000, &mut rng)?;
        out.push(KernelCheck::new(
            &format!("chapman-kolmogorov {name}"),
            defect.abs() <= 3.0 * se + 1e-9,
            format!("defect {defect:.3e}, stderr {se:.3e}"),
        ));
    }

    let p = MixedExponent::new(2.0, 2.0)?;
    let times: [f64; 3] = [0.25, 0.5, 1.0];
    let mut pts = Vec::new();
    for t in times {
        pts.push((t.ln(), kernel_norm(t, 1, p, 128)?.ln()));
    }
    let slope = ols_slope(&pts);
    let want = kernel_norm_exponent(1, p);
    out.push(KernelCheck::new(
        "norm scaling",
        (slope - want).abs() <= 0.1,
        format!("slope {slope:.4}, expected {want:.4}"),
    ));
    Ok(out)
}

fn ols_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn origin_value() {
        let g = free_density(1.0, &[0.0], &[0.0]).unwrap();
        assert!((g - (PI * PI / 3.0).powf(-0.5)).abs() < 1e-15);
        assert!((g - 0.551_328_895_421_792).abs() < 1e-12);
        assert_eq!(gamma_twisted_density(1.0, &[0.0], &[0.0]).unwrap(), g);
    }

    #[test]
    fn small_times_rejected() {
        assert!(free_density(0.0, &[0.0], &[0.0]).is_err());
        assert!(free_density(1e-7, &[0.0], &[0.0]).is_err());
        assert!(gamma_twisted_density(-1.0, &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn narrow_quadrature_box_rejected() {
        let spec = GridSpec::square(1, 1.0, 16).unwrap();
        let z = PhaseState::zeros(1);
        let err = semigroup_apply(&|_: &[f64], _: &[f64]| 1.0, 1.0, &z, &KernelEvalConfig::Quadrature(spec));
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn zero_samples_rejected() {
        let cfg = KernelEvalConfig::MonteCarlo {
            sample_count: 0,
            seed: 1,
            stream_base: 0,
        };
        let z = PhaseState::zeros(1);
        assert!(semigroup_apply(&|_: &[f64], _: &[f64]| 1.0, 1.0, &z, &cfg).is_err());
    }

    #[test]
    fn constant_is_preserved() {
        let z = PhaseState::scalar(0.3, -1.0).unwrap();
        let one = |_: &[f64], _: &[f64]| 1.0;
        let q = semigroup_apply(&one, 0.7, &z, &KernelEvalConfig::quadrature_for(0.7, 1, 64).unwrap()).unwrap();
        assert!((q.value - 1.0).abs() < 1e-6);
        let mc = KernelEvalConfig::MonteCarlo {
            sample_count: 5000,
            seed: 3,
            stream_base: 0,
        };
        let m = semigroup_apply(&one, 0.7, &z, &mc).unwrap();
        assert_eq!(m.value, 1.0);
        assert_eq!(m.stderr, 0.0);
    }

    #[test]
    fn linear_moments() {
        let z = PhaseState::scalar(0.5, 2.0).unwrap();
        let t = 0.4;
        let cfg = KernelEvalConfig::quadrature_for(t, 1, 64).unwrap();
        let mx = semigroup_apply(&|x: &[f64], _: &[f64]| x[0], t, &z, &cfg).unwrap();
        let mv = semigroup_apply(&|_: &[f64], v: &[f64]| v[0], t, &z, &cfg).unwrap();
        assert!((mx.value - (0.5 + t * 2.0)).abs() < 1e-9);
        assert!((mv.value - 2.0).abs() < 1e-9);
        let mc = KernelEvalConfig::MonteCarlo {
            sample_count: 100_000,
            seed: 9,
            stream_base: 0,
        };
        let ex = semigroup_apply(&|x: &[f64], _: &[f64]| x[0], t, &z, &mc).unwrap();
        assert!((ex.value - 1.3).abs() < 5.0 * ex.stderr);
    }

    #[test]
    fn norm_exponent_for_two_two() {
        let p = MixedExponent::new(2.0, 2.0).unwrap();
        assert_eq!(kernel_norm_exponent(1, p), -1.0);
    }

    proptest! {
        #[test]
        fn scaling_identity(t in 0.01f64..3.0, x in -2.0f64..2.0, v in -3.0f64..3.0) {
            let lhs = free_density(t, &[x], &[v]).unwrap();
            let rhs = t.powi(-2) * free_density(1.0, &[x * t.powf(-1.5)], &[v * t.powf(-0.5)]).unwrap();
            prop_assume!(lhs > 1e-250);
            prop_assert!(((lhs - rhs) / lhs).abs() <= 1e-12);
        }

        #[test]
        fn twisted_scaling_identity(x in -1.0f64..1.0, v in -2.0f64..2.0) {
            let t = 0.25;
            let lhs = gamma_twisted_density(t, &[x], &[v]).unwrap();
            let rhs = t.powi(-2)
                * free_density(1.0, &[t.powf(-1.5) * x + t.powf(-0.5) * v], &[t.powf(-0.5) * v]).unwrap();
            prop_assume!(lhs > 1e-250);
            prop_assert!(((lhs - rhs) / lhs).abs() <= 1e-12);
        }

        #[test]
        fn symmetric_and_positive(t in 0.01f64..2.0, x in proptest::collection::vec(-1.0f64..1.0, 2), v in proptest::collection::vec(-2.0f64..2.0, 2)) {
            let g = free_density(t, &x, &v).unwrap();
            let nx: Vec<f64> = x.iter().map(|c| -c).collect();
            let nv: Vec<f64> = v.iter().map(|c| -c).collect();
            prop_assert!(g >= 0.0);
            prop_assert_eq!(g, free_density(t, &nx, &nv).unwrap());
        }
    }
}
