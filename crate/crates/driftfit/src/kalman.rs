//! Exact filter for scalar linear-Gaussian state-space models.
//!
//! The particle filter admits a closed-form check on the model
//!
//! ```text
//! x_t = a x_{t-1} + sqrt(q) v_t,    y_t = h x_t + sqrt(r) w_t,
//! ```
//!
//! whose posterior is Gaussian with mean/variance given by the classic
//! predict/update recursion. This module is that reference solution; the
//! SIR counterpart lives in [`crate::pf::bootstrap_linear_gaussian`].

use crate::error::{Error, Result};

/// Scalar linear-Gaussian state-space model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearGaussianModel {
    /// State transition multiplier.
    pub a: f64,
    /// Observation multiplier (`h = 0` models uninformative observations).
    pub h: f64,
    /// Process noise variance, `q >= 0`.
    pub q: f64,
    /// Observation noise variance, `r > 0`.
    pub r: f64,
    pub init_mean: f64,
    /// Prior variance of the initial state, `>= 0`.
    pub init_var: f64,
}

/// Gaussian posterior at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanEstimate {
    pub mean: f64,
    pub var: f64,
}

impl LinearGaussianModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("a", self.a), ("h", self.h), ("init mean", self.init_mean)] {
            if !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite")));
            }
        }
        if !(self.q >= 0.0 && self.q.is_finite()) {
            return Err(Error::invalid(format!("process variance must be >= 0, got {}", self.q)));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::invalid(format!("observation variance must be > 0, got {}", self.r)));
        }
        if !(self.init_var >= 0.0 && self.init_var.is_finite()) {
            return Err(Error::invalid(format!("initial variance must be >= 0, got {}", self.init_var)));
        }
        Ok(())
    }
}

/// Run the exact filter, returning one posterior per observation.
///
/// The first observation measures the initial state directly (update
/// without a preceding predict); every later step is predict-then-update.
pub fn kalman_oracle(model: &LinearGaussianModel, observations: &[f64]) -> Result<Vec<KalmanEstimate>> {
    model.validate()?;
    if observations.is_empty() {
        return Err(Error::invalid("kalman oracle requires at least one observation"));
    }
    let mut mean = model.init_mean;
    let mut var = model.init_var;
    let mut out = Vec::with_capacity(observations.len());
    for (t, &y) in observations.iter().enumerate() {
        if t > 0 {
            mean = model.a * mean;
            var = model.a * model.a * var + model.q;
        }
        let innovation_var = model.h * model.h * var + model.r;
        let gain = var * model.h / innovation_var;
        mean += gain * (y - model.h * mean);
        var *= 1.0 - gain * model.h;
        out.push(KalmanEstimate { mean, var });
    }
    Ok(out)
}
