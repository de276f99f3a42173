//! Optimization primitives: the cosine learning-rate schedule, global
//! gradient clipping, and Adam over a [`NamedTensors`] parameter bundle.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensors::NamedTensors;

/// Cosine-annealed learning rate:
/// `eta_min + (eta_max - eta_min) / 2 * (1 + cos(pi * t_cur / t_total))`.
///
/// `t_cur` counts progress in fractional epochs (or steps, as long as both
/// arguments share the unit); the rate starts at `eta_max` and reaches
/// `eta_min` when `t_cur == t_total`.
pub fn cosine_lr(eta_max: f64, eta_min: f64, t_cur: f64, t_total: f64) -> f64 {
    debug_assert!(t_total > 0.0, "schedule length must be positive");
    let ratio = (t_cur / t_total).clamp(0.0, 1.0);
    eta_min + 0.5 * (eta_max - eta_min) * (1.0 + (PI * ratio).cos())
}

/// L2 norm over every coordinate of every tensor. Errors on the first
/// non-finite value, naming the tensor that carries it.
pub fn global_grad_norm(grads: &impl NamedTensors) -> Result<f64> {
    let mut sum = 0.0;
    for (path, tensor) in grads.tensors() {
        for &v in tensor.as_slice() {
            if !v.is_finite() {
                return Err(Error::Numeric {
                    site: format!("gradient tensor {path}"),
                });
            }
            sum += v * v;
        }
    }
    Ok(sum.sqrt())
}

/// Multiply every tensor by `factor` — e.g. `1/batch` to turn a sum of
/// per-sample gradients into the batch mean.
pub fn scale_gradients(grads: &mut impl NamedTensors, factor: f64) {
    for (_, mut tensor) in grads.tensors_mut() {
        for v in tensor.as_slice_mut() {
            *v *= factor;
        }
    }
}

/// Scale all gradients by `clip_norm / norm` when the global norm exceeds
/// `clip_norm`. Returns the pre-clip norm.
pub fn clip_gradients(grads: &mut impl NamedTensors, clip_norm: f64) -> Result<f64> {
    let norm = global_grad_norm(grads)?;
    if norm > clip_norm {
        let scale = clip_norm / norm;
        for (_, mut tensor) in grads.tensors_mut() {
            for v in tensor.as_slice_mut() {
                *v *= scale;
            }
        }
    }
    Ok(norm)
}

/// Adam with bias correction. Moment vectors are stored flat, aligned with
/// the stable tensor-walk order of the parameter bundle they optimize.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(n_parameters: usize) -> Self {
        AdamState {
            m: vec![0.0; n_parameters],
            v: vec![0.0; n_parameters],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update: `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(
        &mut self,
        params: &mut impl NamedTensors,
        grads: &impl NamedTensors,
        lr: f64,
    ) -> Result<()> {
        self.step += 1;
        let bias1 = 1.0 - self.beta1.powi(self.step as i32);
        let bias2 = 1.0 - self.beta2.powi(self.step as i32);

        let mut offset = 0;
        let mut param_tensors = params.tensors_mut();
        let grad_tensors = grads.tensors();
        if param_tensors.len() != grad_tensors.len() {
            return Err(Error::Shape {
                operation: "adam step".into(),
                expected: format!("{} gradient tensors", param_tensors.len()),
                actual: format!("{}", grad_tensors.len()),
            });
        }
        for ((path, param), (gpath, grad)) in param_tensors.iter_mut().zip(&grad_tensors) {
            if path != gpath || param.shape() != grad.shape() {
                return Err(Error::Shape {
                    operation: "adam step".into(),
                    expected: format!("{path} {:?}", param.shape()),
                    actual: format!("{gpath} {:?}", grad.shape()),
                });
            }
            let p = param.as_slice_mut();
            let g = grad.as_slice();
            if offset + p.len() > self.m.len() {
                return Err(Error::Shape {
                    operation: "adam step".into(),
                    expected: format!("{} optimizer slots", self.m.len()),
                    actual: "more parameters than slots".into(),
                });
            }
            for i in 0..p.len() {
                let m = &mut self.m[offset + i];
                let v = &mut self.v[offset + i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g[i];
                *v = self.beta2 * *v + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
            offset += p.len();
        }
        if offset != self.m.len() {
            return Err(Error::Shape {
                operation: "adam step".into(),
                expected: format!("{} optimizer slots", self.m.len()),
                actual: format!("{offset} parameters"),
            });
        }
        Ok(())
    }
}
