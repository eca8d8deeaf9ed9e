//! Exact sampling of the per-step noise `(∫_0^h W_s ds, W_h)` and of the free
//! process `G_t`.
//!
//! Per dimension the pair is centred Gaussian with covariance
//!
//! ```text
//! [ h³/3  h²/2 ]
//! [ h²/2  h    ]
//! ```
//!
//! and dimensions are independent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{domain, Result};
use crate::geometry::{gamma_transport, PhaseState};

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// Backed by ChaCha8, a counter-based generator: the seed selects the key,
/// the stream id selects the nonce, and the draw index is the block counter.
/// Output is identical on every platform.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

/// One sample of `(∫_0^h W_s ds, W_h)` per dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct StepNoise {
    pub h: f64,
    pub integral_part: Vec<f64>,
    pub increment_part: Vec<f64>,
}

impl StepNoise {
    pub fn zeros(h: f64, d: usize) -> Self {
        Self {
            h,
            integral_part: vec![0.0; d],
            increment_part: vec![0.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.integral_part.len()
    }
}

fn check_h(h: f64) -> Result<()> {
    if !(h > 0.0 && h.is_finite()) {
        return domain(format!("step size h must be positive and finite (got {h})"));
    }
    Ok(())
}

pub fn step_covariance(h: f64) -> Result<[[f64; 2]; 2]> {
    check_h(h)?;
    Ok([[h * h * h / 3.0, h * h / 2.0], [h * h / 2.0, h]])
}

/// Closed-form lower Cholesky factor of [`step_covariance`].
pub fn step_cholesky(h: f64) -> Result<[[f64; 2]; 2]> {
    check_h(h)?;
    let sh = h.sqrt();
    let s3 = 3f64.sqrt();
    Ok([[h * sh / s3, 0.0], [0.5 * s3 * sh, 0.5 * sh]])
}

pub fn sample_step(rng: &mut RngStream, h: f64, d: usize) -> Result<StepNoise> {
    let mut out = StepNoise::zeros(h, d);
    sample_step_into(rng, h, &mut out)?;
    Ok(out)
}

/// Allocation-free variant of [`sample_step`]; the dimension is taken from
/// `out`. Draws two standard normals per dimension, in dimension order.
pub fn sample_step_into(rng: &mut RngStream, h: f64, out: &mut StepNoise) -> Result<()> {
    let l = step_cholesky(h)?;
    out.h = h;
    for (i, w) in out
        .integral_part
        .iter_mut()
        .zip(out.increment_part.iter_mut())
    {
        let z1 = rng.standard_normal();
        let z2 = rng.standard_normal();
        *i = l[0][0] * z1;
        *w = l[1][0] * z1 + l[1][1] * z2;
    }
    Ok(())
}

/// `M_t(z) = Γ_t z + G_t`: exact endpoint of the driftless system.
pub fn sample_free_endpoint(z: &PhaseState, t: f64, rng: &mut RngStream) -> Result<PhaseState> {
    if !(t > 0.0) {
        return domain(format!("free endpoint needs t > 0 (got {t})"));
    }
    let g = sample_step(rng, t, z.dim())?;
    let mut out = gamma_transport(t, z);
    let (x, v) = out.parts_mut();
    for k in 0..x.len() {
        x[k] += g.integral_part[k];
        v[k] += g.increment_part[k];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn covariance_examples() {
        let c = step_covariance(1.0).unwrap();
        assert_eq!(c, [[1.0 / 3.0, 0.5], [0.5, 1.0]]);
        let c = step_covariance(2.0).unwrap();
        assert!(close(c[0][0], 8.0 / 3.0, 1e-15));
        assert_eq!(c[0][1], 2.0);
        assert_eq!(c[1][1], 2.0);
        let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
        assert!(close(det, 16.0 / 12.0, 1e-14));
        let c1 = step_covariance(1.0).unwrap();
        assert!(close(c1[0][0] * c1[1][1] - c1[0][1] * c1[0][1], 1.0 / 12.0, 1e-15));
    }

    #[test]
    fn nonpositive_h_is_a_domain_error() {
        assert!(step_covariance(0.0).is_err());
        assert!(step_cholesky(-1.0).is_err());
        assert!(sample_step(&mut RngStream::new(1, 0), 0.0, 1).is_err());
        assert!(sample_free_endpoint(&PhaseState::zeros(1), 0.0, &mut RngStream::new(1, 0)).is_err());
    }

    #[test]
    fn cholesky_examples() {
        let l = step_cholesky(1.0).unwrap();
        assert!(close(l[0][0], 1.0 / 3f64.sqrt(), 1e-16));
        let c = step_covariance(1.0).unwrap();
        let prod = [
            [l[0][0] * l[0][0], l[0][0] * l[1][0]],
            [l[1][0] * l[0][0], l[1][0] * l[1][0] + l[1][1] * l[1][1]],
        ];
        for i in 0..2 {
            for j in 0..2 {
                assert!(close(prod[i][j], c[i][j], 1e-15));
            }
        }
    }

    #[test]
    fn same_stream_is_bit_identical_and_streams_differ() {
        let a = sample_step(&mut RngStream::new(7, 3), 0.1, 4).unwrap();
        let b = sample_step(&mut RngStream::new(7, 3), 0.1, 4).unwrap();
        let c = sample_step(&mut RngStream::new(7, 4), 0.1, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn stream_outputs_do_not_depend_on_evaluation_order() {
        let forward: Vec<f64> = (0..8)
            .map(|s| RngStream::new(11, s).standard_normal())
            .collect();
        let mut backward: Vec<(u64, f64)> = (0..8)
            .rev()
            .map(|s| (s, RngStream::new(11, s).standard_normal()))
            .collect();
        backward.sort_by_key(|p| p.0);
        let backward: Vec<f64> = backward.into_iter().map(|p| p.1).collect();
        assert_eq!(forward, backward);
    }

    proptest! {
        #[test]
        fn cholesky_reproduces_covariance(h in 1e-6f64..50.0) {
            let l = step_cholesky(h).unwrap();
            let c = step_covariance(h).unwrap();
            let prod = [
                [l[0][0] * l[0][0], l[0][0] * l[1][0]],
                [l[1][0] * l[1][0] + l[1][1] * l[1][1], 0.0],
            ];
            prop_assert!(((prod[0][0] - c[0][0]) / c[0][0]).abs() < 1e-14);
            prop_assert!(((prod[0][1] - c[0][1]) / c[0][1]).abs() < 1e-14);
            prop_assert!(((prod[1][0] - c[1][1]) / c[1][1]).abs() < 1e-14);
        }

        #[test]
        fn covariance_scaling(h in 1e-3f64..5.0, c in 1e-2f64..10.0) {
            let base = step_covariance(h).unwrap();
            let scaled = step_covariance(c * h).unwrap();
            let dc = [c.powf(1.5), c.sqrt()];
            for i in 0..2 {
                for j in 0..2 {
                    let want = dc[i] * base[i][j] * dc[j];
                    prop_assert!(((scaled[i][j] - want) / want).abs() < 1e-13);
                }
            }
        }
    }
}
