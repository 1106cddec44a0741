//! Stage-2 training schedule: the annealed timestep window, loss-weight
//! ramps, and the render-resolution switch.
//!
//! Everything interpolates linearly over the joint-phase step range
//! `[warmup_steps, total_steps]`; queries outside that range clamp to the
//! nearest endpoint with a warning.

use crate::diffusion::schedule::{NoiseSchedule, TRAIN_STEPS};
use crate::error::{contract, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Per-timestep SDS weight `omega(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OmegaKind {
    /// `1 - abar_t`: the usual sigma^2 weighting.
    #[default]
    OneMinusAlphaBar,
    Constant,
    /// `abar_t * (1 - abar_t)`: additionally damps the high-noise tail.
    AlphaBarScaled,
}

impl OmegaKind {
    pub fn value(&self, schedule: &NoiseSchedule, t: usize) -> f64 {
        let ab = schedule.alpha_bar(t);
        match self {
            OmegaKind::OneMinusAlphaBar => 1.0 - ab,
            OmegaKind::Constant => 1.0,
            OmegaKind::AlphaBarScaled => ab * (1.0 - ab),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    /// Reconstruction-only steps before the SDS term switches on.
    pub warmup_steps: usize,
    pub total_steps: usize,
    /// Upper timestep-window endpoints at the start and end of the joint
    /// phase. The warm-start default begins well below the top of the
    /// noise range so guidance refines the warm-up content instead of
    /// repainting it.
    pub t_max: (usize, usize),
    pub t_min: (usize, usize),
    pub lambda_img: (f64, f64),
    pub lambda_sds: (f64, f64),
    /// Step at which the reconstruction render resolution switches from
    /// `low_res` to `high_res`.
    pub switch_step: usize,
    pub low_res: usize,
    pub high_res: usize,
    pub omega: OmegaKind,
    /// Classifier-free guidance scale used inside the SDS critic.
    pub sds_cfg_scale: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            warmup_steps: 200,
            total_steps: 10_000,
            t_max: (680, 500),
            t_min: (380, 20),
            lambda_img: (1000.0, 100.0),
            lambda_sds: (0.025, 0.25),
            switch_step: 5000,
            low_res: 64,
            high_res: 256,
            omega: OmegaKind::OneMinusAlphaBar,
            sds_cfg_scale: 50.0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps >= self.total_steps {
            return Err(contract("warmup_steps must be below total_steps"));
        }
        for e in [self.t_max.0, self.t_max.1, self.t_min.0, self.t_min.1] {
            if e >= TRAIN_STEPS {
                return Err(contract("timestep endpoints must lie below the training range"));
            }
        }
        // Both schedules are affine in i, so endpoint ordering implies
        // ordering over the whole joint phase. A degenerate window at the
        // start is legal: the high-start ablation opens at [980, 980].
        if self.t_min.0 > self.t_max.0 || self.t_min.1 >= self.t_max.1 {
            return Err(contract("t_min must stay below t_max across the run"));
        }
        for w in [
            self.lambda_img.0,
            self.lambda_img.1,
            self.lambda_sds.0,
            self.lambda_sds.1,
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(contract("loss weights must be finite and non-negative"));
            }
        }
        if self.low_res == 0 || self.high_res < self.low_res {
            return Err(contract("resolutions must satisfy 0 < low <= high"));
        }
        Ok(())
    }

    /// Progress through the joint phase in [0, 1], clamped with a warning
    /// outside it.
    fn frac(&self, i: usize) -> f64 {
        let a = self.warmup_steps as f64;
        let b = self.total_steps as f64;
        let x = i as f64;
        if x < a || x > b {
            log::warn!("schedule query at step {i} outside [{a}, {b}]; clamping");
        }
        ((x - a) / (b - a)).clamp(0.0, 1.0)
    }

    pub fn t_max_schedule(&self, i: usize) -> usize {
        lerp_round(self.t_max, self.frac(i))
    }

    pub fn t_min_schedule(&self, i: usize) -> usize {
        lerp_round(self.t_min, self.frac(i))
    }

    pub fn loss_weights(&self, i: usize) -> (f64, f64) {
        let f = self.frac(i);
        (
            self.lambda_img.0 + (self.lambda_img.1 - self.lambda_img.0) * f,
            self.lambda_sds.0 + (self.lambda_sds.1 - self.lambda_sds.0) * f,
        )
    }

    /// Uniform integer draw from the current window, both bounds included.
    pub fn sample_timestep(&self, i: usize, rng: &mut impl Rng) -> usize {
        rng.gen_range(self.t_min_schedule(i)..=self.t_max_schedule(i))
    }

    pub fn resolution_at(&self, i: usize) -> usize {
        if i < self.switch_step {
            self.low_res
        } else {
            self.high_res
        }
    }
}

fn lerp_round((c1, c2): (usize, usize), f: f64) -> usize {
    (c1 as f64 + (c2 as f64 - c1 as f64) * f).round() as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn window_endpoints_are_exact() {
        let s = TrainSchedule::default();
        assert_eq!(s.t_max_schedule(200), 680);
        assert_eq!(s.t_max_schedule(10_000), 500);
        assert_eq!(s.t_min_schedule(200), 380);
        assert_eq!(s.t_min_schedule(10_000), 20);
        assert_eq!(s.loss_weights(200), (1000.0, 0.025));
        assert_eq!(s.loss_weights(10_000), (100.0, 0.25));
    }

    #[test]
    fn midpoint_values_interpolate_linearly() {
        let s = TrainSchedule::default();
        assert_eq!(s.t_max_schedule(5100), 590);
        assert_eq!(s.t_min_schedule(5100), 200);
        assert_eq!(s.loss_weights(5100), (550.0, 0.1375));
    }

    #[test]
    fn queries_outside_the_joint_phase_clamp() {
        let s = TrainSchedule::default();
        assert_eq!(s.t_max_schedule(0), 680);
        assert_eq!(s.t_min_schedule(199), 380);
        assert_eq!(s.t_max_schedule(50_000), 500);
        assert_eq!(s.loss_weights(0), (1000.0, 0.025));
    }

    #[test]
    fn windows_shrink_monotonically_and_never_cross() {
        let s = TrainSchedule::default();
        let mut prev_max = usize::MAX;
        let mut prev_min = usize::MAX;
        for i in 200..=10_000 {
            let hi = s.t_max_schedule(i);
            let lo = s.t_min_schedule(i);
            assert!(lo < hi, "window empty at {i}: [{lo}, {hi}]");
            assert!(hi <= prev_max && lo <= prev_min);
            prev_max = hi;
            prev_min = lo;
        }
    }

    #[test]
    fn timestep_draws_cover_both_bounds() {
        let mut s = TrainSchedule::default();
        s.t_min = (5, 5);
        s.t_max = (7, 7);
        let mut r = rng::stream(3, "sched-test");
        let mut seen = [false; 3];
        for _ in 0..200 {
            let t = s.sample_timestep(200, &mut r);
            assert!((5..=7).contains(&t));
            seen[t - 5] = true;
        }
        assert_eq!(seen, [true; 3]);
    }

    #[test]
    fn timestep_draws_are_uniform_by_ks_test() {
        let s = TrainSchedule::default();
        let i = 200;
        let (lo, hi) = (s.t_min_schedule(i), s.t_max_schedule(i));
        let n = 10_000usize;
        let mut r = rng::stream(11, "sched-ks");
        let mut hist = vec![0usize; hi - lo + 1];
        for _ in 0..n {
            hist[s.sample_timestep(i, &mut r) - lo] += 1;
        }
        // empirical vs model CDF at every lattice point; the continuous
        // 1% critical value is conservative for discrete support
        let span = (hi - lo + 1) as f64;
        let mut cum = 0usize;
        let mut d = 0.0f64;
        for (k, &c) in hist.iter().enumerate() {
            cum += c;
            let model = (k + 1) as f64 / span;
            d = d.max((cum as f64 / n as f64 - model).abs());
        }
        let crit = 1.63 / (n as f64).sqrt();
        assert!(d <= crit, "ks statistic {d} above {crit}");
    }

    #[test]
    fn resolution_switches_at_the_configured_step() {
        let s = TrainSchedule::default();
        assert_eq!(s.resolution_at(4999), 64);
        assert_eq!(s.resolution_at(5000), 256);
        assert_eq!(s.resolution_at(0), 64);
    }

    #[test]
    fn omega_variants_follow_alpha_bar() {
        let ns = NoiseSchedule::linear();
        let t = 400;
        let ab = ns.alpha_bar(t);
        assert_eq!(OmegaKind::OneMinusAlphaBar.value(&ns, t), 1.0 - ab);
        assert_eq!(OmegaKind::Constant.value(&ns, t), 1.0);
        assert_eq!(OmegaKind::AlphaBarScaled.value(&ns, t), ab * (1.0 - ab));
    }

    #[test]
    fn validation_rejects_inverted_or_crossing_schedules() {
        let mut s = TrainSchedule::default();
        s.warmup_steps = 10_000;
        assert!(s.validate().is_err());
        let mut s = TrainSchedule::default();
        s.t_min = (700, 20);
        assert!(s.validate().is_err());
        let mut s = TrainSchedule::default();
        s.t_max = (1000, 500);
        assert!(s.validate().is_err());
        let mut s = TrainSchedule::default();
        s.lambda_sds = (-0.1, 0.25);
        assert!(s.validate().is_err());
        assert!(TrainSchedule::default().validate().is_ok());
        // degenerate start window (the high-start ablation) is legal
        let mut s = TrainSchedule::default();
        s.t_max = (980, 500);
        s.t_min = (980, 20);
        assert!(s.validate().is_ok());
        assert_eq!(s.t_min_schedule(200), s.t_max_schedule(200));
    }

    #[test]
    fn serde_roundtrips_and_rejects_unknown_keys() {
        let s = TrainSchedule::default();
        let json = serde_json::to_string(&s).unwrap();
        let back: TrainSchedule = serde_json::from_str(&json).unwrap();
        assert_eq!(s, back);
        let bad = r#"{"warmup_steps": 10, "typo_key": 3}"#;
        assert!(serde_json::from_str::<TrainSchedule>(bad).is_err());
    }
}
