//! Adam update rule over a flat parameter vector.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(config: AdamConfig, n: usize) -> Self {
        Adam {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Updates the moment estimates with `grad` and returns the step to add
    /// to the parameters. Entries where `mask` is false get a zero step.
    pub fn step(&mut self, grad: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
        let c = self.config;
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        grad.iter()
            .enumerate()
            .map(|(i, &g)| {
                if mask.is_some_and(|m| !m[i]) {
                    return 0.0;
                }
                self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
                self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
                let mhat = self.m[i] / bc1;
                let vhat = self.v[i] / bc2;
                -c.lr * mhat / (vhat.sqrt() + c.eps)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_has_magnitude_lr() {
        let mut a = Adam::new(AdamConfig::with_lr(0.1), 2);
        let s = a.step(&[3.0, -0.5], None);
        assert!((s[0] + 0.1).abs() < 1e-6);
        assert!((s[1] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn masked_entries_do_not_move() {
        let mut a = Adam::new(AdamConfig::default(), 2);
        let s = a.step(&[1.0, 1.0], Some(&[true, false]));
        assert_eq!(s[1], 0.0);
        assert!(s[0] < 0.0);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut a = Adam::new(AdamConfig::with_lr(0.05), 1);
        let mut x = [5.0];
        for _ in 0..2000 {
            let s = a.step(&[2.0 * (x[0] - 1.0)], None);
            x[0] += s[0];
        }
        assert!((x[0] - 1.0).abs() < 1e-3);
    }
}
