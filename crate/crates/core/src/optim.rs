//! First/second-moment adaptive optimizer with bias correction, applied
//! per parameter entry.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

/// Moments for a flat block of parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn reset(&mut self, i: usize) {
        self.m[i] = 0.0;
        self.v[i] = 0.0;
    }
}

/// One update of entry `i`. `step` is the 1-based global step for bias correction.
#[inline]
pub fn adam_update(p: &AdamParams, mom: &mut Moments, i: usize, x: &mut f64, g: f64, lr: f64, step: u64) {
    let m = p.beta1 * mom.m[i] + (1.0 - p.beta1) * g;
    let v = p.beta2 * mom.v[i] + (1.0 - p.beta2) * g * g;
    mom.m[i] = m;
    mom.v[i] = v;
    let t = step as i32;
    let mh = m / (1.0 - p.beta1.powi(t));
    let vh = v / (1.0 - p.beta2.powi(t));
    *x -= lr * mh / (vh.sqrt() + p.eps);
}

/// Log-linear interpolation from `init` to `fin` over `max_steps`.
pub fn exp_decay(init: f64, fin: f64, step: u64, max_steps: u64) -> f64 {
    if init <= 0.0 || fin <= 0.0 {
        return 0.0;
    }
    let t = (step as f64 / max_steps.max(1) as f64).clamp(0.0, 1.0);
    (init.ln() * (1.0 - t) + fin.ln() * t).exp()
}
