use std::collections::BTreeMap;

use crate::error::{dim_err, Result, TensorError};
use crate::{ParameterStore, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 4e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of a single tensor. `step` is 1-based.
pub fn adam_update<T: Scalar>(param: &mut [T], grad: &[T], m: &mut [T], v: &mut [T], step: u64, cfg: &AdamConfig) {
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let bc1 = 1.0 - cfg.beta1.powf(step as f64);
    let bc2 = 1.0 - cfg.beta2.powf(step as f64);
    let step_size = T::of(cfg.lr / bc1);
    let bc2_sqrt = T::of(bc2.sqrt());
    let eps = T::of(cfg.eps);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (T::one() - b1) * g;
        v[i] = b2 * v[i] + (T::one() - b2) * g * g;
        let denom = v[i].sqrt() / bc2_sqrt + eps;
        param[i] -= step_size * m[i] / denom;
    }
}

/// Adam optimizer state over a [`ParameterStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T: Scalar = f32> {
    pub config: AdamConfig,
    step: u64,
    m: BTreeMap<String, Tensor<T>>,
    v: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Restores saved moments, e.g. from a checkpoint.
    pub fn from_state(config: AdamConfig, step: u64, m: BTreeMap<String, Tensor<T>>, v: BTreeMap<String, Tensor<T>>) -> Self {
        Self { config, step, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.m
    }

    pub fn second_moments(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.v
    }

    pub fn step(&mut self, store: &mut ParameterStore<T>, grads: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        self.step += 1;
        let t = self.step;
        for (name, param) in store.iter_mut() {
            let grad = grads.get(name).ok_or_else(|| TensorError::UnknownParameter(name.to_string()))?;
            if grad.shape() != param.shape() {
                return Err(dim_err("adam", "all", format!("`{name}`: grad {:?} vs param {:?}", grad.shape(), param.shape())));
            }
            let shape = param.shape().to_vec();
            let m = self.m.entry(name.to_string()).or_insert_with(|| Tensor::zeros(shape.clone()));
            let v = self.v.entry(name.to_string()).or_insert_with(|| Tensor::zeros(shape));
            adam_update(param.data_mut(), grad.data(), m.data_mut(), v.data_mut(), t, &self.config);
        }
        Ok(())
    }
}
