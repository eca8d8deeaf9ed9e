use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One measured error at step count `n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorPoint {
    pub n: usize,
    pub error: f64,
    pub stderr: f64,
}

/// Weighted least-squares line through `(log n, log error)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFitResult {
    pub slope: f64,
    pub intercept: f64,
    pub stderr_slope: f64,
    /// The points that entered the fit.
    pub per_n_errors: Vec<ErrorPoint>,
    pub residuals: Vec<f64>,
}

impl RateFitResult {
    /// Fitted error at `n`.
    pub fn predict(&self, n: f64) -> f64 {
        (self.intercept + self.slope * n.ln()).exp()
    }
}

/// Fits `log error = intercept + slope · log n`.
///
/// Points are weighted by `(error / stderr)²`, the inverse variance of
/// `log error`; if any stderr is zero all weights are equal. The slope's
/// standard error is the larger of the residual-based and the
/// stderr-propagated value.
pub fn fit_loglog(points: &[ErrorPoint]) -> Result<RateFitResult> {
    if points.len() < 3 {
        return Err(Error::Insufficient(format!(
            "log-log fit needs at least 3 points (got {})",
            points.len()
        )));
    }
    if points.iter().any(|p| !(p.error > 0.0 && p.error.is_finite()) || p.n == 0) {
        return Err(Error::Insufficient("log-log fit needs positive finite errors".into()));
    }
    let propagated = points.iter().all(|p| p.stderr > 0.0);
    let w: Vec<f64> = points
        .iter()
        .map(|p| if propagated { (p.error / p.stderr).powi(2) } else { 1.0 })
        .collect();
    let xs: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.error.ln()).collect();
    let sw: f64 = w.iter().sum();
    let mx = w.iter().zip(&xs).map(|(w, x)| w * x).sum::<f64>() / sw;
    let my = w.iter().zip(&ys).map(|(w, y)| w * y).sum::<f64>() / sw;
    let sxx: f64 = w.iter().zip(&xs).map(|(w, x)| w * (x - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::Insufficient("log-log fit needs at least two distinct n".into()));
    }
    let sxy: f64 = w
        .iter()
        .zip(xs.iter().zip(&ys))
        .map(|(w, (x, y))| w * (x - mx) * (y - my))
        .sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| y - intercept - slope * x)
        .collect();
    let dof = (points.len() - 2) as f64;
    let rss: f64 = w.iter().zip(&residuals).map(|(w, r)| w * r * r).sum();
    let mut stderr_slope = (rss / dof / sxx).sqrt();
    if propagated {
        stderr_slope = stderr_slope.max((1.0 / sxx).sqrt());
    }
    Ok(RateFitResult {
        slope,
        intercept,
        stderr_slope,
        per_n_errors: points.to_vec(),
        residuals,
    })
}
