//! Adam over Gaussian parameters.
//!
//! Scale and opacity are stepped in log and logit space respectively, the
//! quaternion is re-normalized after each step and color is clamped to
//! `[0, 1]`. Updated parameters are rounded to single precision, the
//! precision scenes are stored at.

use serde::{Deserialize, Serialize};

use crate::render::SplatGradients;
use crate::scene::{normalize_quat, Gaussian, PARAMS_PER_GAUSSIAN};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub position: f64,
    pub color: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
    pub identity: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            position: 1.6e-4,
            color: 2.5e-3,
            opacity: 5e-2,
            scale: 5e-3,
            rotation: 1e-3,
            identity: 2.5e-3,
        }
    }
}

impl LearningRates {
    fn for_param(&self, k: usize) -> f64 {
        match k {
            0..=2 => self.position,
            3..=5 => self.scale,
            6..=9 => self.rotation,
            10 => self.opacity,
            11..=13 => self.color,
            _ => self.identity,
        }
    }
}

const OPACITY_EPS: f64 = 1e-6;

fn logit(p: f64) -> f64 {
    let p = p.clamp(OPACITY_EPS, 1.0 - OPACITY_EPS);
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: LearningRates,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<[f64; PARAMS_PER_GAUSSIAN]>,
    v: Vec<[f64; PARAMS_PER_GAUSSIAN]>,
    steps: u64,
}

impl Adam {
    pub fn new(n: usize, lr: LearningRates) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![[0.0; PARAMS_PER_GAUSSIAN]; n],
            v: vec![[0.0; PARAMS_PER_GAUSSIAN]; n],
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update of every Gaussian with `trainable[i]` set. Parameter groups
    /// whose learning rate is zero are left untouched.
    pub fn step(&mut self, gaussians: &mut [Gaussian], grads: &SplatGradients, trainable: &[bool]) {
        assert_eq!(gaussians.len(), grads.len());
        assert_eq!(gaussians.len(), self.m.len());
        assert_eq!(gaussians.len(), trainable.len());
        self.steps += 1;
        let t = self.steps as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);

        for (i, g) in gaussians.iter_mut().enumerate() {
            if !trainable[i] {
                continue;
            }
            let natural = g.to_params();
            let raw_grad = &grads.params[i];
            // gradient in the stepping parameterization
            let mut grad = *raw_grad;
            for k in 3..6 {
                grad[k] *= natural[k];
            }
            grad[10] *= natural[10] * (1.0 - natural[10]);

            let mut delta = [0.0; PARAMS_PER_GAUSSIAN];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for k in 0..PARAMS_PER_GAUSSIAN {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * grad[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
                let lr = self.lr.for_param(k);
                if lr != 0.0 {
                    delta[k] = -lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + self.eps);
                }
            }
            if delta.iter().all(|&d| d == 0.0) {
                continue;
            }

            let mut p = natural;
            for k in 0..3 {
                p[k] += delta[k];
            }
            for k in 3..6 {
                if delta[k] != 0.0 {
                    p[k] = (natural[k].ln() + delta[k]).exp();
                }
            }
            if delta[6..10].iter().any(|&d| d != 0.0) {
                let q = [
                    p[6] + delta[6],
                    p[7] + delta[7],
                    p[8] + delta[8],
                    p[9] + delta[9],
                ];
                p[6..10].copy_from_slice(&normalize_quat(q));
            }
            if delta[10] != 0.0 {
                p[10] = sigmoid(logit(natural[10]) + delta[10]);
            }
            for k in 11..14 {
                p[k] = (p[k] + delta[k]).clamp(0.0, 1.0);
            }
            for k in 14..PARAMS_PER_GAUSSIAN {
                p[k] += delta[k];
            }
            *g = Gaussian::from_params(&p);
            g.round_to_f32();
        }
    }
}
