//! Adam over the flat field parameter vector, with separate learning
//! rates for the feature tables and the MLP heads. No weight decay.

use crate::field::{Layout, Real};

pub const DEFAULT_LR_TABLES: f64 = 1e-2;
pub const DEFAULT_LR_HEADS: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    step: usize,
    /// First index of the head span; parameters below it are table entries.
    tables_end: usize,
    lr_tables: f64,
    lr_heads: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl<T: Real> Adam<T> {
    pub fn new(layout: &Layout, lr_tables: f64, lr_heads: f64) -> Self {
        Self {
            m: vec![T::zero(); layout.total],
            v: vec![T::zero(); layout.total],
            step: 0,
            tables_end: layout.tables,
            lr_tables,
            lr_heads,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.step += 1;
        let b1 = T::from_f64(self.beta1).unwrap();
        let b2 = T::from_f64(self.beta2).unwrap();
        let one = T::one();
        let bc1 = T::from_f64(1.0 - self.beta1.powi(self.step as i32)).unwrap();
        let bc2 = T::from_f64(1.0 - self.beta2.powi(self.step as i32)).unwrap();
        let eps = T::from_f64(self.eps).unwrap();
        let lr_t = T::from_f64(self.lr_tables).unwrap();
        let lr_h = T::from_f64(self.lr_heads).unwrap();
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            let lr = if i < self.tables_end { lr_t } else { lr_h };
            params[i] = params[i] - lr * mhat / (vhat.sqrt() + eps);
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldCfg;

    fn toy_layout() -> Layout {
        // micro: 2 table parameters followed by 14 head parameters
        Layout::new(&FieldCfg::micro())
    }

    #[test]
    fn first_two_steps_match_the_reference_formulas() {
        let layout = toy_layout();
        let mut opt = Adam::<f64>::new(&layout, 1e-2, 1e-3);
        let mut params = vec![0.0f64; layout.total];
        let grad = vec![0.5f64; layout.total];

        opt.step(&mut params, &grad);
        // bias-corrected first step reduces to lr * g / (|g| + eps)
        let expect_t = -1e-2 * 0.5 / (0.5 + 1e-8);
        let expect_h = -1e-3 * 0.5 / (0.5 + 1e-8);
        assert!((params[0] - expect_t).abs() < 1e-12, "table step {}", params[0]);
        assert!((params[5] - expect_h).abs() < 1e-12, "head step {}", params[5]);

        let p1 = params[5];
        opt.step(&mut params, &grad);
        let m = 0.9 * (0.1 * 0.5) + 0.1 * 0.5;
        let v = 0.99 * (0.01 * 0.25) + 0.01 * 0.25;
        let mhat = m / (1.0 - 0.9f64.powi(2));
        let vhat = v / (1.0 - 0.99f64.powi(2));
        let expect = p1 - 1e-3 * mhat / (vhat.sqrt() + 1e-8);
        assert!((params[5] - expect).abs() < 1e-12);
    }

    #[test]
    fn converges_on_a_separable_quadratic() {
        let layout = toy_layout();
        let mut opt = Adam::<f64>::new(&layout, 1e-2, 1e-2);
        let target: Vec<f64> = (0..layout.total).map(|i| (i as f64 - 8.0) / 10.0).collect();
        let mut params = vec![0.0f64; layout.total];
        for _ in 0..4000 {
            let grad: Vec<f64> = params.iter().zip(&target).map(|(p, t)| 2.0 * (p - t)).collect();
            opt.step(&mut params, &grad);
        }
        for (p, t) in params.iter().zip(&target) {
            assert!((p - t).abs() < 1e-4, "{p} vs {t}");
        }
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let layout = toy_layout();
        let run = || {
            let mut opt = Adam::<f32>::new(&layout, 1e-2, 1e-3);
            let mut params = vec![0.1f32; layout.total];
            for k in 0..50 {
                let grad: Vec<f32> = params.iter().map(|p| p.sin() + k as f32 * 0.01).collect();
                opt.step(&mut params, &grad);
            }
            params
        };
        assert_eq!(run(), run());
    }
}
