//! Adam optimizer, one state per parameter tensor.

use ndarray::{Array, Axis, Dimension, Zip};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment estimates with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<D: Dimension> {
    m: Array<f64, D>,
    v: Array<f64, D>,
    step: i32,
}

impl<D: Dimension> Adam<D> {
    /// Zero-initialised state shaped like `param`.
    pub fn for_param(param: &Array<f64, D>) -> Self {
        Self {
            m: Array::zeros(param.raw_dim()),
            v: Array::zeros(param.raw_dim()),
            step: 0,
        }
    }

    pub fn step(&mut self, param: &mut Array<f64, D>, grad: &Array<f64, D>, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step);
        Zip::from(param)
            .and(&mut self.m)
            .and(&mut self.v)
            .and(grad)
            .for_each(|p, m, v, &g| {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            });
    }

}

impl<D: Dimension + ndarray::RemoveAxis> Adam<D> {
    /// Clear the moments for one slot along the first axis (used when a dead
    /// neuron is resampled and its history no longer applies).
    pub fn reset_lane(&mut self, index: usize) {
        self.m.index_axis_mut(Axis(0), index).fill(0.0);
        self.v.index_axis_mut(Axis(0), index).fill(0.0);
    }
}

/// Cosine-annealed learning rate over `total` epochs, from `lr_max` down to
/// `lr_min`.
pub fn cosine_lr(lr_max: f64, lr_min: f64, epoch: usize, total: usize) -> f64 {
    if total <= 1 {
        return lr_max;
    }
    let t = epoch as f64 / total as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}
