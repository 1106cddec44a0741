//! Noise schedule and deterministic sampler arithmetic.
//!
//! Training uses `T = 1000` steps with a linear beta ramp. Sampling visits
//! a strided subsequence of `S` timesteps, descending; each transition is
//! the deterministic (eta = 0) update
//! `x_prev = sqrt(abar_prev) * x0_hat + sqrt(1 - abar_prev) * eps_hat`,
//! and the final visited timestep resolves straight to `x0_hat`.

use crate::error::{contract, Result};

pub const TRAIN_STEPS: usize = 1000;
pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 0.02;
pub const DEFAULT_SAMPLE_STEPS: usize = 50;

#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear() -> Self {
        let mut alpha_bar = Vec::with_capacity(TRAIN_STEPS);
        let mut acc = 1.0f64;
        for t in 0..TRAIN_STEPS {
            let beta = BETA_START + (BETA_END - BETA_START) * t as f64 / (TRAIN_STEPS - 1) as f64;
            acc *= 1.0 - beta;
            alpha_bar.push(acc);
        }
        Self { alpha_bar }
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// Coefficients `(a, b)` of the forward corruption
    /// `x_t = a * x0 + b * noise`.
    pub fn q_sample_coeffs(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bar[t];
        (ab.sqrt(), (1.0 - ab).sqrt())
    }

    /// Coefficients `(a, b)` of the clean estimate
    /// `x0_hat = a * x_t + b * eps_hat`.
    pub fn x0_coeffs(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bar[t];
        (1.0 / ab.sqrt(), -((1.0 - ab) / ab).sqrt())
    }

    /// Coefficients `(a, b)` of the deterministic transition
    /// `x_prev = a * x_t + b * eps_hat`.
    pub fn ddim_coeffs(&self, t: usize, t_prev: usize) -> (f64, f64) {
        let ab = self.alpha_bar[t];
        let abp = self.alpha_bar[t_prev];
        let a = (abp / ab).sqrt();
        let b = (1.0 - abp).sqrt() - (abp * (1.0 - ab) / ab).sqrt();
        (a, b)
    }
}

/// The descending list of timesteps visited when sampling in `steps`
/// denoiser evaluations: `t_i = (i + 1) * T / S - 1` for `i = S-1 .. 0`.
pub fn sample_timesteps(steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > TRAIN_STEPS || TRAIN_STEPS % steps != 0 {
        return Err(contract("sampling step count must divide the training step count"));
    }
    let stride = TRAIN_STEPS / steps;
    Ok((0..steps).rev().map(|i| (i + 1) * stride - 1).collect())
}
