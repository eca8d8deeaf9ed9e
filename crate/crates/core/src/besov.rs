//! Discrete anisotropic Littlewood–Paley blocks on a periodic grid and the
//! Besov norms built from them.
//!
//! Frequencies are measured by the anisotropic radius
//! `r(ξ) = |ξ_x|^{1/3} + |ξ_v|` (Euclidean within each block). With the
//! smooth cutoff `χ` (equal to 1 on `r <= 1`, 0 on `r >= 2`) the blocks are
//! `φ_0 = χ(r)` and `φ_j = χ(2^{-j} r) - χ(2^{1-j} r)`, so that
//! `Σ_{j<=J} φ_j = χ(2^{-J} r)`.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::drift::{tame, Drift, DriftField, MollifierSpec, TamingKind, TamingParams};
use crate::error::{config, Error, Result};
use crate::geometry::{mixed_norm_of_values, Exponent, MixedExponent};
use crate::grid::{GridFunction, GridSpec};
use crate::harness::{fit_loglog, ErrorPoint, RateFitResult};

/// `e^{-1/s}` for `s > 0`, else 0.
fn glue(s: f64) -> f64 {
    if s > 0.0 {
        (-1.0 / s).exp()
    } else {
        0.0
    }
}

/// Smooth radial cutoff: 1 on `[0, 1]`, 0 on `[2, ∞)`.
pub fn cutoff(r: f64) -> f64 {
    if r <= 1.0 {
        return 1.0;
    }
    if r >= 2.0 {
        return 0.0;
    }
    let a = glue(2.0 - r);
    a / (a + glue(r - 1.0))
}

/// Multiplier of block `j` at anisotropic radius `r`.
pub fn block_multiplier(j: usize, r: f64) -> f64 {
    if j == 0 {
        cutoff(r)
    } else {
        let s = 2f64.powi(-(j as i32));
        cutoff(s * r) - cutoff(2.0 * s * r)
    }
}

/// In-place multidimensional DFT over a row-major array of the given shape.
/// The inverse is normalized by the total length.
pub fn fft_in_place(data: &mut [Complex64], shape: &[usize], inverse: bool) {
    let total: usize = shape.iter().product();
    assert_eq!(total, data.len());
    let mut planner = FftPlanner::new();
    let mut stride = 1;
    let mut line = Vec::new();
    for &len in shape.iter().rev() {
        let fft = if inverse {
            planner.plan_fft_inverse(len)
        } else {
            planner.plan_fft_forward(len)
        };
        if stride == 1 {
            fft.process(data);
        } else {
            line.resize(len, Complex64::new(0.0, 0.0));
            let block = len * stride;
            for outer in (0..total).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    for (k, c) in line.iter_mut().enumerate() {
                        *c = data[base + k * stride];
                    }
                    fft.process(&mut line);
                    for (k, c) in line.iter().enumerate() {
                        data[base + k * stride] = *c;
                    }
                }
            }
        }
        stride *= len;
    }
    if inverse {
        let s = 1.0 / total as f64;
        for c in data.iter_mut() {
            *c *= s;
        }
    }
}

/// Block multipliers on the frequency grid of a [`GridSpec`].
///
/// Only the anisotropic radius of each frequency is stored; multipliers are
/// evaluated on demand.
#[derive(Clone, Debug)]
pub struct BlockSystem {
    spec: GridSpec,
    levels: usize,
    radii: Vec<f64>,
}

/// Largest anisotropic radius representable on the grid:
/// `(√d N_x)^{1/3} + √d N_v` with `N = π · resolution / (2 · extent)`.
pub fn nyquist_radius(spec: &GridSpec) -> f64 {
    let sd = (spec.dim() as f64).sqrt();
    let nx = std::f64::consts::PI * spec.resolution_x() as f64 / (2.0 * spec.extent_x());
    let nv = std::f64::consts::PI * spec.resolution_v() as f64 / (2.0 * spec.extent_v());
    (sd * nx).cbrt() + sd * nv
}

/// Largest `J` accepted by [`build_block_system`] for this grid.
pub fn max_levels(spec: &GridSpec) -> usize {
    let r = nyquist_radius(spec);
    let mut j = 0;
    while 2f64.powi(j as i32 + 2) <= r {
        j += 1;
    }
    j
}

pub fn build_block_system(spec: &GridSpec, levels: usize) -> Result<BlockSystem> {
    if levels < 1 {
        return config("block system needs J >= 1");
    }
    let rn = nyquist_radius(spec);
    if 2f64.powi(levels as i32 + 1) > rn {
        return config(format!(
            "J = {levels} exceeds the grid: 2^(J+1) = {} > Nyquist radius {rn:.3}",
            2f64.powi(levels as i32 + 1)
        ));
    }
    let d = spec.dim();
    let shape = spec.shape();
    let mut radii = Vec::with_capacity(spec.len());
    let mut idx = vec![0usize; 2 * d];
    for _ in 0..spec.len() {
        let mut sx = 0.0;
        let mut sv = 0.0;
        for a in 0..d {
            let fx = spec.frequency(idx[a], false);
            let fv = spec.frequency(idx[d + a], true);
            sx += fx * fx;
            sv += fv * fv;
        }
        radii.push(sx.sqrt().cbrt() + sv.sqrt());
        for a in (0..2 * d).rev() {
            idx[a] += 1;
            if idx[a] < shape[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    let sys = BlockSystem {
        spec: spec.clone(),
        levels,
        radii,
    };
    let defect = sys.partition_defect();
    if defect > 1e-12 {
        return Err(Error::Numerical(format!("partition of unity defect {defect:.3e}")));
    }
    Ok(sys)
}

impl BlockSystem {
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// `J`: blocks are indexed `0..=J`.
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    /// Max over the grid of `|Σ_{j<=J} φ_j - χ(2^{-J} r)|`.
    pub fn partition_defect(&self) -> f64 {
        let top = 2f64.powi(-(self.levels as i32));
        self.radii
            .iter()
            .map(|&r| {
                let s: f64 = (0..=self.levels).map(|j| block_multiplier(j, r)).sum();
                (s - cutoff(top * r)).abs()
            })
            .fold(0.0, f64::max)
    }

    fn check(&self, f: &GridFunction) -> Result<()> {
        if f.spec() != &self.spec {
            return Err(Error::Mismatch("grid function and block system use different grids".into()));
        }
        Ok(())
    }
}

fn to_complex(values: &[f64]) -> Vec<Complex64> {
    values.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

/// Applies block `j` to an already transformed field; returns the real part
/// and checks the imaginary residue against `scale`.
fn block_from_spectrum(spectrum: &[Complex64], sys: &BlockSystem, j: usize, scale: f64) -> Result<Vec<f64>> {
    let mut buf: Vec<Complex64> = spectrum
        .iter()
        .zip(&sys.radii)
        .map(|(c, &r)| c * block_multiplier(j, r))
        .collect();
    fft_in_place(&mut buf, &sys.spec.shape(), true);
    let residue = buf.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
    if residue > 1e-10 * scale.max(1.0) {
        return Err(Error::Numerical(format!("imaginary residue {residue:.3e} in block {j}")));
    }
    Ok(buf.into_iter().map(|c| c.re).collect())
}

fn sup_abs(values: &[f64]) -> f64 {
    values.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

/// `R_j f`: the inverse transform of `φ_j f̂`.
pub fn block_apply(f: &GridFunction, sys: &BlockSystem, j: usize) -> Result<GridFunction> {
    sys.check(f)?;
    if j > sys.levels {
        return config(format!("block {j} outside 0..={}", sys.levels));
    }
    let mut spec_vals = to_complex(f.values());
    fft_in_place(&mut spec_vals, &sys.spec.shape(), false);
    let out = block_from_spectrum(&spec_vals, sys, j, sup_abs(f.values()))?;
    GridFunction::new(sys.spec.clone(), out)
}

/// Per-block mixed norms `‖R_j f‖_p`, `j = 0..=J`, of a vector field given
/// by components; blocks are measured through the pointwise Euclidean norm.
pub fn block_norms(components: &[GridFunction], p: MixedExponent, sys: &BlockSystem) -> Result<Vec<f64>> {
    if components.is_empty() {
        return Err(Error::Mismatch("no components".into()));
    }
    let len = sys.spec.len();
    let spectra: Vec<(Vec<Complex64>, f64)> = components
        .iter()
        .map(|f| {
            sys.check(f)?;
            let mut s = to_complex(f.values());
            fft_in_place(&mut s, &sys.spec.shape(), false);
            Ok((s, sup_abs(f.values())))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(sys.levels + 1);
    for j in 0..=sys.levels {
        let mut mag = vec![0.0; len];
        for (s, scale) in &spectra {
            let blk = block_from_spectrum(s, sys, j, *scale)?;
            for (m, b) in mag.iter_mut().zip(&blk) {
                *m += b * b;
            }
        }
        for m in mag.iter_mut() {
            *m = m.sqrt();
        }
        out.push(mixed_norm_of_values(&sys.spec, &mag, p));
    }
    Ok(out)
}

/// `(Σ_j (2^{js} ‖R_j f‖_p)^q)^{1/q}` truncated at `J`, sup at `q = ∞`.
pub fn besov_norm(f: &GridFunction, s: f64, q: Exponent, p: MixedExponent, sys: &BlockSystem) -> Result<f64> {
    besov_norm_vector(std::slice::from_ref(f), s, q, p, sys)
}

pub fn besov_norm_vector(
    components: &[GridFunction],
    s: f64,
    q: Exponent,
    p: MixedExponent,
    sys: &BlockSystem,
) -> Result<f64> {
    let norms = block_norms(components, p, sys)?;
    Ok(combine_blocks(&norms, s, q))
}

fn combine_blocks(norms: &[f64], s: f64, q: Exponent) -> f64 {
    let terms = norms.iter().enumerate().map(|(j, n)| 2f64.powf(j as f64 * s) * n);
    match q {
        Exponent::Infinity => terms.fold(0.0, f64::max),
        Exponent::Finite(q) => terms.map(|t| t.powf(q)).sum::<f64>().powf(1.0 / q),
    }
}

/// Samples each component of `b(t, ·)` on the grid.
pub fn rasterize(b: &dyn Drift, t: f64, spec: &GridSpec) -> Result<Vec<GridFunction>> {
    let d = b.dim();
    if d != spec.dim() {
        return Err(Error::Mismatch(format!("drift has d={d}, grid has d={}", spec.dim())));
    }
    let len = spec.len();
    let mut comps = vec![vec![0.0; len]; d];
    let mut x = vec![0.0; d];
    let mut v = vec![0.0; d];
    let mut out = vec![0.0; d];
    for idx in 0..len {
        spec.point(idx, &mut x, &mut v);
        b.eval(t, &x, &v, &mut out);
        for k in 0..d {
            comps[k][idx] = out[k];
        }
    }
    comps
        .into_iter()
        .map(|c| GridFunction::new(spec.clone(), c))
        .collect()
}

/// Result of [`taming_rate_fit`].
#[derive(Clone, Debug, serde::Serialize)]
pub struct TamingRateReport {
    /// `(n, ‖b_n - b‖_{B^{-δ,1}_p})`.
    pub distances: Vec<(usize, f64)>,
    /// `None` when taming is exact on the grid.
    pub fit: Option<RateFitResult>,
    pub target_slope: Option<f64>,
    pub exact: bool,
    pub passed: bool,
}

/// Tolerance added to the target slope when judging a fit.
pub const RATE_SLACK: f64 = 0.15;

/// Measures `‖b_n - b‖` in `B^{-δ,1}_{p;a}` at `t = 0` for each `n`, with
/// `p` taken from the drift's declared class, and fits the decay in `n`.
///
/// The target slope is `-δθ` for mollification and `-δκ / (a·d/p)` for the
/// cutoff.
pub fn taming_rate_fit(
    b: DriftField,
    taming: &TamingParams,
    mollifier: &MollifierSpec,
    n_set: &[usize],
    sys: &BlockSystem,
) -> Result<TamingRateReport> {
    if n_set.len() < 4 {
        return Err(Error::Insufficient(format!(
            "taming rate fit needs at least 4 levels (got {})",
            n_set.len()
        )));
    }
    if b.meta().time_dependent {
        return config("taming rate fit only supports time-independent drifts");
    }
    taming.validate()?;
    let p = b.meta().exponents;
    let spec = sys.spec();
    let base = rasterize(b.as_ref(), 0.0, spec)?;
    let mut distances = Vec::with_capacity(n_set.len());
    for &n in n_set {
        let b_n = tame(b.clone(), &taming.at_level(n), mollifier)?;
        let tamed = rasterize(b_n.as_ref(), 0.0, spec)?;
        let diff: Vec<GridFunction> = tamed
            .iter()
            .zip(&base)
            .map(|(a, c)| a.sub(c))
            .collect::<Result<_>>()?;
        let all_zero = diff.iter().all(|f| f.values().iter().all(|v| *v == 0.0));
        let dist = if all_zero {
            0.0
        } else {
            besov_norm_vector(&diff, -taming.delta, Exponent::Finite(1.0), p, sys)?
        };
        distances.push((n, dist));
    }
    if distances.iter().all(|(_, d)| *d == 0.0) {
        return Ok(TamingRateReport {
            distances,
            fit: None,
            target_slope: None,
            exact: true,
            passed: true,
        });
    }
    let target = match taming.kind {
        TamingKind::Mollify => -taming.delta * taming.theta,
        TamingKind::Cutoff => {
            let w = p.anisotropic_weight(spec.dim());
            if w <= 0.0 {
                return config("cutoff rate target needs a·d/p > 0; the drift is bounded");
            }
            -taming.delta * taming.kappa / w
        }
    };
    let points: Vec<ErrorPoint> = distances
        .iter()
        .filter(|(_, d)| *d > 0.0)
        .map(|&(n, d)| ErrorPoint {
            n,
            error: d,
            stderr: 0.0,
        })
        .collect();
    let fit = fit_loglog(&points)?;
    let passed = fit.slope <= target + RATE_SLACK;
    Ok(TamingRateReport {
        distances,
        fit: Some(fit),
        target_slope: Some(target),
        exact: false,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_system() -> BlockSystem {
        let spec = GridSpec::square(1, std::f64::consts::PI, 64).unwrap();
        build_block_system(&spec, 3).unwrap()
    }

    #[test]
    fn cutoff_shape() {
        assert_eq!(cutoff(0.0), 1.0);
        assert_eq!(cutoff(1.0), 1.0);
        assert_eq!(cutoff(2.0), 0.0);
        assert!((cutoff(1.5) - 0.5).abs() < 1e-15);
        let mut last = 1.0;
        for i in 0..100 {
            let c = cutoff(1.0 + i as f64 / 100.0);
            assert!(c <= last);
            last = c;
        }
    }

    #[test]
    fn block_supports() {
        for r in [0.0, 0.3, 1.0] {
            assert_eq!(block_multiplier(1, r), 0.0);
        }
        let s: f64 = (0..=5).map(|j| block_multiplier(j, 0.0)).sum();
        assert_eq!(s, 1.0);
        // j >= 1 lives on 2^{j-1} <= r <= 2^{j+1}.
        for j in 1..5 {
            let lo = 2f64.powi(j - 1);
            let hi = 2f64.powi(j + 1);
            assert_eq!(block_multiplier(j as usize, 0.99 * lo), 0.0);
            assert_eq!(block_multiplier(j as usize, 1.01 * hi), 0.0);
        }
    }

    #[test]
    fn levels_limited_by_grid() {
        let spec = GridSpec::square(1, std::f64::consts::PI, 64).unwrap();
        // N = 32, radius = 32^{1/3} + 32 ≈ 35.2, so J = 4 fits and J = 5 does not.
        assert!(build_block_system(&spec, 4).is_ok());
        assert!(build_block_system(&spec, 5).is_err());
        assert!(build_block_system(&spec, 0).is_err());
        assert_eq!(max_levels(&spec), 4);
    }

    #[test]
    fn plane_wave_sits_in_one_block() {
        let sys = small_system();
        // v-frequency 4: r = 4, inside block 2 only (φ_1(4) = 0, φ_3(4) = 0 since 4 <= 2^{3-1}).
        let f = GridFunction::from_fn(sys.spec().clone(), |_, v| (4.0 * v[0]).cos()).unwrap();
        for j in 0..=3 {
            let out = block_apply(&f, &sys, j).unwrap();
            let err: f64 = if j == 2 {
                out.values().iter().zip(f.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            } else {
                sup_abs(out.values())
            };
            assert!(err <= 1e-10, "block {j}: {err}");
        }
    }

    #[test]
    fn anisotropic_block_location() {
        let spec = GridSpec::square(1, std::f64::consts::PI, 128).unwrap();
        let sys = build_block_system(&spec, 4).unwrap();
        let p = MixedExponent::new(2.0, 2.0).unwrap();
        // x-frequency 8 and v-frequency 2 both have radius 2.
        let fx = GridFunction::from_fn(spec.clone(), |x, _| (8.0 * x[0]).sin()).unwrap();
        let fv = GridFunction::from_fn(spec, |_, v| (2.0 * v[0]).sin()).unwrap();
        let argmax = |n: Vec<f64>| n.iter().enumerate().fold((0, 0.0), |a, (j, &v)| if v > a.1 { (j, v) } else { a }).0;
        let jx = argmax(block_norms(&[fx], p, &sys).unwrap());
        let jv = argmax(block_norms(&[fv], p, &sys).unwrap());
        assert_eq!(jx, jv);
        assert_eq!(jx, 1);
    }

    #[test]
    fn zero_function_blocks_vanish() {
        let sys = small_system();
        let z = GridFunction::zeros(sys.spec().clone());
        assert!(block_apply(&z, &sys, 1).unwrap().values().iter().all(|v| *v == 0.0));
        let p = MixedExponent::new(2.0, 2.0).unwrap();
        assert_eq!(besov_norm(&z, -1.0, Exponent::Finite(1.0), p, &sys).unwrap(), 0.0);
    }

    #[test]
    fn mismatched_grid_rejected() {
        let sys = small_system();
        let f = GridFunction::zeros(GridSpec::square(1, 1.0, 64).unwrap());
        assert!(matches!(block_apply(&f, &sys, 0), Err(Error::Mismatch(_))));
    }

    #[test]
    fn fft_round_trip() {
        let mut data: Vec<Complex64> = (0..8 * 16).map(|i| Complex64::new((i as f64).sin(), 0.0)).collect();
        let orig = data.clone();
        fft_in_place(&mut data, &[8, 16], false);
        // DC coefficient is the plain sum.
        let sum: f64 = orig.iter().map(|c| c.re).sum();
        assert!((data[0].re - sum).abs() < 1e-12);
        fft_in_place(&mut data, &[8, 16], true);
        for (a, b) in data.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn reconstruction_and_embedding(a in proptest::collection::vec(-1.0f64..1.0, 4), c in -10.0f64..10.0) {
            let sys = small_system();
            // Band-limited: radius at most 2 + 3 = 5 < 2^3.
            let f = GridFunction::from_fn(sys.spec().clone(), |x, v| {
                a[0] * (8.0 * x[0]).cos() + a[1] * (2.0 * v[0]).sin() + a[2] * (x[0] + 3.0 * v[0]).cos() + a[3]
            }).unwrap();
            let mut sum = vec![0.0; f.values().len()];
            for j in 0..=sys.levels() {
                for (s, b) in sum.iter_mut().zip(block_apply(&f, &sys, j).unwrap().values()) {
                    *s += b;
                }
            }
            let err = sum.iter().zip(f.values()).map(|(s, v)| (s - v).abs()).fold(0.0, f64::max);
            prop_assert!(err <= 1e-9);

            let p = MixedExponent::new(2.0, 3.0).unwrap();
            let b1 = besov_norm(&f, 0.5, Exponent::Finite(1.0), p, &sys).unwrap();
            let b2 = besov_norm(&f, 0.5, Exponent::Finite(2.0), p, &sys).unwrap();
            let binf = besov_norm(&f, 0.5, Exponent::Infinity, p, &sys).unwrap();
            prop_assert!(b1 >= b2 * (1.0 - 1e-12) && b2 >= binf * (1.0 - 1e-12));

            let scaled = besov_norm(&f.scaled(c), 0.5, Exponent::Finite(1.0), p, &sys).unwrap();
            prop_assert!((scaled - c.abs() * b1).abs() <= 1e-12 * c.abs() * b1 + 1e-300);
        }
    }
}
