use crate::error::Result;
use crate::nn::param::Parameters;
use crate::nn::{Scalar, Tensor};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step_count: u64,
    pub first_moment: Tensor<T>,
    pub second_moment: Tensor<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shape: &[usize]) -> Self {
        AdamState {
            step_count: 0,
            first_moment: Tensor::zeros(shape),
            second_moment: Tensor::zeros(shape),
        }
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step<T: Scalar>(
    cfg: &AdamConfig,
    state: &mut AdamState<T>,
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
) -> Result<()> {
    param.expect_shape(grad.shape())?;
    param.expect_shape(state.first_moment.shape())?;
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let lr = T::lit(cfg.lr);
    let eps = T::lit(cfg.epsilon);
    let m = state.first_moment.data_mut();
    let v = state.second_moment.data_mut();
    for (i, (p, &g)) in param.data_mut().iter_mut().zip(grad.data()).enumerate() {
        m[i] = b1 * m[i] + (T::one() - b1) * g;
        v[i] = b2 * v[i] + (T::one() - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Adam over every parameter of a model, keyed by visit order.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    states: Vec<AdamState<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            states: Vec::new(),
        }
    }

    pub fn step<M: Parameters<T> + ?Sized>(&mut self, model: &mut M) -> Result<()> {
        let mut idx = 0;
        let mut result = Ok(());
        let cfg = self.config;
        let states = &mut self.states;
        model.visit_params("", &mut |_, p| {
            if result.is_err() {
                return;
            }
            if states.len() == idx {
                states.push(AdamState::new(p.value.shape()));
            }
            result = adam_step(&cfg, &mut states[idx], &mut p.value, &p.grad);
            idx += 1;
        });
        result
    }
}
