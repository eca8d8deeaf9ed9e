//! Monte Carlo laboratory for kinetic SDEs with singular drifts.
//!
//! The system under study is
//!
//! ```text
//! dX_t = V_t dt,   dV_t = b(t, X_t, V_t) dt + dW_t,
//! ```
//!
//! discretized by a tamed Euler–Maruyama scheme in which the drift `b` is
//! replaced by a bounded approximation `b_n` and the position is advanced
//! along the exact free characteristic inside each step. The crate provides
//! the scheme, exact samplers for its degenerate Gaussian noise, the free
//! kinetic kernel and semigroup, taming constructions, discrete anisotropic
//! Besov norms, and a harness that measures weak convergence rates.

pub mod besov;
pub mod drift;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod harness;
pub mod kernels;
pub mod noise;
pub mod quadrature;
pub mod scheme;

pub use error::{Error, Result};
pub use geometry::{Exponent, MixedExponent, PhaseState};
pub use grid::{GridFunction, GridSpec};
pub use noise::{RngStream, StepNoise};
