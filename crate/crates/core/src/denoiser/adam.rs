//! Bias-corrected Adam.

use alloc::vec;
use alloc::vec::Vec;

pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grad.len(), self.m.len(), "gradient length mismatch");
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - libm::pow(self.beta1, t);
        let c2 = 1.0 - libm::pow(self.beta2, t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (libm::sqrt(v_hat) + self.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut adam = AdamState::new(2, 0.1);
        let mut p = [1.0, -1.0];
        adam.update(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-8);
        assert!((p[1] + 0.9).abs() < 1e-8);
    }

    #[test]
    fn zero_rate_is_a_no_op() {
        let mut adam = AdamState::new(3, 0.0);
        let mut p = [0.25, -3.5, 1e-300];
        let before = p;
        for _ in 0..5 {
            adam.update(&mut p, &[1.0, -2.0, 7.0]);
        }
        assert_eq!(p.map(f64::to_bits), before.map(f64::to_bits));
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut adam = AdamState::new(1, 0.05);
        let mut p = [3.0];
        for _ in 0..2000 {
            let g = 2.0 * (p[0] - 1.0);
            adam.update(&mut p, &[g]);
        }
        assert!((p[0] - 1.0).abs() < 1e-3);
    }
}
