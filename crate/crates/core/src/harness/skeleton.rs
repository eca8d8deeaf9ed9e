use crate::error::{config, Error, Result};
use crate::noise::{sample_step_into, RngStream, StepNoise};
use crate::scheme::ReplayNoise;

/// The noise of one path at step count `level`: per step and dimension the
/// pair `(∫ (W_s - W_{t_k}) ds, W_{t_{k+1}} - W_{t_k})`, stored step-major.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSkeleton {
    level: usize,
    horizon: f64,
    d: usize,
    integral: Vec<f64>,
    increment: Vec<f64>,
}

/// Conditional law of the first half-step given the full step, in units
/// where `τ = 1` (integrals scale by `τ^{3/2}`, increments by `τ^{1/2}`):
/// gain `C Σ⁻¹` and the Cholesky factor of the residual covariance.
struct HalfStepLaw {
    gain: [[f64; 2]; 2],
    chol: [[f64; 2]; 2],
}

fn half_step_law() -> HalfStepLaw {
    // Half-step covariance, cross covariance with the full step, full-step
    // covariance, all at τ = 1.
    let sigma = [[1.0 / 3.0, 0.5], [0.5, 1.0]];
    let cross = [[5.0 / 6.0, 0.5], [1.5, 1.0]];
    let full = [[8.0 / 3.0, 2.0], [2.0, 2.0]];
    let det = full[0][0] * full[1][1] - full[0][1] * full[1][0];
    let inv = [[full[1][1] / det, -full[0][1] / det], [-full[1][0] / det, full[0][0] / det]];
    let mut gain = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            gain[i][j] = cross[i][0] * inv[0][j] + cross[i][1] * inv[1][j];
        }
    }
    let mut cov = sigma;
    for i in 0..2 {
        for j in 0..2 {
            cov[i][j] -= gain[i][0] * cross[j][0] + gain[i][1] * cross[j][1];
        }
    }
    HalfStepLaw {
        gain,
        chol: crate::scheme::cholesky2(cov),
    }
}

impl NoiseSkeleton {
    fn steps_for(level: usize, horizon: f64) -> Result<usize> {
        if level == 0 {
            return config("skeleton level must be >= 1");
        }
        if !(horizon > 0.0 && horizon <= 1.0) {
            return config(format!("horizon must lie in (0, 1] (got {horizon})"));
        }
        let raw = horizon * level as f64;
        let steps = raw.round();
        if (raw - steps).abs() > 1e-9 || steps < 1.0 {
            return config(format!("horizon {horizon} is not on the grid of step count {level}"));
        }
        Ok(steps as usize)
    }

    /// Direct sampling at `level`.
    pub fn sample(level: usize, horizon: f64, d: usize, rng: &mut RngStream) -> Result<Self> {
        let steps = Self::steps_for(level, horizon)?;
        let h = 1.0 / level as f64;
        let mut integral = Vec::with_capacity(steps * d);
        let mut increment = Vec::with_capacity(steps * d);
        let mut xi = StepNoise::zeros(h, d);
        for _ in 0..steps {
            sample_step_into(rng, h, &mut xi)?;
            integral.extend_from_slice(&xi.integral_part);
            increment.extend_from_slice(&xi.increment_part);
        }
        Ok(Self {
            level,
            horizon,
            d,
            integral,
            increment,
        })
    }

    /// Builds a skeleton from recorded values.
    pub fn from_parts(level: usize, horizon: f64, d: usize, integral: Vec<f64>, increment: Vec<f64>) -> Result<Self> {
        let steps = Self::steps_for(level, horizon)?;
        if integral.len() != steps * d || increment.len() != steps * d {
            return Err(Error::Mismatch(format!("skeleton needs {} values per component", steps * d)));
        }
        Ok(Self {
            level,
            horizon,
            d,
            integral,
            increment,
        })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn steps(&self) -> usize {
        self.integral.len() / self.d
    }

    pub fn step_size(&self) -> f64 {
        1.0 / self.level as f64
    }

    pub fn integral(&self) -> &[f64] {
        &self.integral
    }

    pub fn increment(&self) -> &[f64] {
        &self.increment
    }

    pub fn replay(&self) -> ReplayNoise<'_> {
        ReplayNoise {
            h: self.step_size(),
            integral: &self.integral,
            increment: &self.increment,
        }
    }

    /// Samples the half-steps of every step conditionally on the recorded
    /// values. Draws two normals per step and dimension, in step order.
    pub fn refine(&self, target: usize, rng: &mut RngStream) -> Result<Self> {
        if target != 2 * self.level {
            return Err(Error::Mismatch(format!(
                "refinement goes from level {} to {}, not {target}",
                self.level,
                2 * self.level
            )));
        }
        let law = half_step_law();
        let tau = 0.5 * self.step_size();
        let (s3, s1) = (tau * tau.sqrt(), tau.sqrt());
        let n = self.integral.len();
        let d = self.d;
        let mut integral = vec![0.0; 2 * n];
        let mut increment = vec![0.0; 2 * n];
        for step in 0..self.steps() {
            for k in 0..d {
                let i = step * d + k;
                let (ci, cw) = (self.integral[i] / s3, self.increment[i] / s1);
                let z1 = rng.standard_normal();
                let z2 = rng.standard_normal();
                let g = &law.gain;
                let l = &law.chol;
                let i1 = s3 * (g[0][0] * ci + g[0][1] * cw + l[0][0] * z1);
                let w1 = s1 * (g[1][0] * ci + g[1][1] * cw + l[1][0] * z1 + l[1][1] * z2);
                let w2 = self.increment[i] - w1;
                let i2 = self.integral[i] - i1 - tau * w1;
                let first = 2 * step * d + k;
                integral[first] = i1;
                increment[first] = w1;
                integral[first + d] = i2;
                increment[first + d] = w2;
            }
        }
        Ok(Self {
            level: target,
            horizon: self.horizon,
            d,
            integral,
            increment,
        })
    }

    /// Merges pairs of steps: `W = W_1 + W_2`, `I = I_1 + I_2 + τ W_1`.
    pub fn coarsen(&self, target: usize) -> Result<Self> {
        if 2 * target != self.level || self.steps() % 2 != 0 {
            return Err(Error::Mismatch(format!(
                "cannot coarsen level {} to {target}",
                self.level
            )));
        }
        let tau = self.step_size();
        let d = self.d;
        let half = self.integral.len() / 2;
        let mut integral = vec![0.0; half];
        let mut increment = vec![0.0; half];
        for step in 0..self.steps() / 2 {
            for k in 0..d {
                let a = 2 * step * d + k;
                let b = a + d;
                increment[step * d + k] = self.increment[a] + self.increment[b];
                integral[step * d + k] = self.integral[a] + self.integral[b] + tau * self.increment[a];
            }
        }
        Ok(Self {
            level: target,
            horizon: self.horizon,
            d,
            integral,
            increment,
        })
    }
}
