use serde::{Deserialize, Serialize};

use super::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected adaptive-moment optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub steps: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            steps: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T]) {
        assert_eq!(params.len(), self.m.len(), "parameter length mismatch");
        assert_eq!(grad.len(), self.m.len(), "gradient length mismatch");
        self.steps += 1;
        let c = &self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let one = T::one();
        let bc1 = T::of(1.0 - c.beta1.powi(self.steps.min(i32::MAX as u64) as i32));
        let bc2 = T::of(1.0 - c.beta2.powi(self.steps.min(i32::MAX as u64) as i32));
        let lr = T::of(c.learning_rate);
        let eps = T::of(c.epsilon);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![0.5f32, -1.0, 3.0];
        let before = p.clone();
        let mut opt = Adam::new(3, AdamConfig::default());
        for _ in 0..10 {
            opt.step(&mut p, &[0.0; 3]);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn constant_gradient_steps_approach_learning_rate() {
        let cfg = AdamConfig::default();
        let mut p = vec![0.0f64, 0.0];
        let mut opt = Adam::new(2, cfg);
        let g = [0.3, -7.0];
        let mut prev = p.clone();
        for _ in 0..5000 {
            opt.step(&mut p, &g);
            for i in 0..2 {
                let step = (p[i] - prev[i]).abs();
                assert!((step - cfg.learning_rate).abs() < 1e-3 * cfg.learning_rate, "{step}");
            }
            prev = p.clone();
        }
        assert!(p[0] < 0.0 && p[1] > 0.0);
    }

    #[test]
    fn identical_runs_identical_trajectories() {
        let run = || {
            let mut p = vec![1.0f32; 4];
            let mut opt = Adam::new(4, AdamConfig::default());
            for k in 0..100 {
                let g: Vec<f32> = (0..4).map(|i| ((k * 4 + i) as f32).sin()).collect();
                opt.step(&mut p, &g);
            }
            p
        };
        assert_eq!(run(), run());
    }
}
