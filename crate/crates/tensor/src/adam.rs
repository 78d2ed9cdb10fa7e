use std::collections::BTreeMap;

use crate::error::{Result, TensorError};
use crate::params::ParamSet;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.01, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adam with bias correction. Moments are keyed by parameter name and
/// created lazily with the parameter's shape.
#[derive(Clone, Debug)]
pub struct Adam<T = f32> {
    config: AdamConfig,
    step: u64,
    m: BTreeMap<String, Vec<T>>,
    v: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn with_lr(lr: f64) -> Self {
        Self::new(AdamConfig { lr, ..AdamConfig::default() })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&[T]> {
        self.m.get(name).map(Vec::as_slice)
    }

    pub fn second_moment(&self, name: &str) -> Option<&[T]> {
        self.v.get(name).map(Vec::as_slice)
    }

    /// Applies one update to every trainable parameter. Gradients are left
    /// in place; the caller zeroes them.
    pub fn step(&mut self, params: &mut ParamSet<T>) -> Result<()> {
        if let Some((name, _)) = params.iter().find(|(_, p)| p.requires_grad() && p.grad().is_none()) {
            return Err(TensorError::State(format!("parameter {name:?} has no gradient")));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let (one_b1, one_b2) = (T::from_f64_lossy(1.0 - c.beta1), T::from_f64_lossy(1.0 - c.beta2));
        let step_size = T::from_f64_lossy(c.lr / bc1);
        let inv_sqrt_bc2 = T::from_f64_lossy(1.0 / bc2.sqrt());
        let eps = T::from_f64_lossy(c.epsilon);

        for (name, param) in params.iter_mut() {
            if !param.requires_grad() {
                continue;
            }
            let n = param.len();
            let m = self.m.entry(name.to_string()).or_insert_with(|| vec![T::zero(); n]);
            let v = self.v.entry(name.to_string()).or_insert_with(|| vec![T::zero(); n]);
            if m.len() != n {
                return Err(TensorError::State(format!(
                    "moment size {} does not match parameter {name:?} of size {n}",
                    m.len()
                )));
            }
            let grad = param.grad().expect("checked above").to_vec();
            for (((w, g), mi), vi) in param.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + one_b1 * *g;
                *vi = b2 * *vi + one_b2 * *g * *g;
                *w -= step_size * *mi / ((*vi).sqrt() * inv_sqrt_bc2 + eps);
            }
        }
        Ok(())
    }
}
