//! Decoupled-weight-decay Adam.

use super::tensor::ParamVec;
use super::{DenoiserError, DenoiserParams};
use crate::scalar::Scalar;

/// Optimizer hyperparameters. Moment decays, epsilon and weight decay carry
/// the usual defaults; the learning rate is the caller's business.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    pub weight_decay: T,
}

impl<T: Scalar> AdamHyper<T> {
    pub fn new(learning_rate: T, weight_decay: T) -> Self {
        Self {
            learning_rate,
            beta1: T::from_f64_lossy(0.9),
            beta2: T::from_f64_lossy(0.999),
            epsilon: T::from_f64_lossy(1e-8),
            weight_decay,
        }
    }
}

/// First and second moment estimates shaped exactly like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub step: u64,
    pub first_moment: ParamVec<T>,
    pub second_moment: ParamVec<T>,
    pub hyper: AdamHyper<T>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &DenoiserParams<T>, hyper: AdamHyper<T>) -> Self {
        Self {
            step: 0,
            first_moment: ParamVec::zeros_like(params.tensors()),
            second_moment: ParamVec::zeros_like(params.tensors()),
            hyper,
        }
    }

    pub fn shapes_match(&self, params: &DenoiserParams<T>) -> bool {
        self.first_moment.tensors.len() == params.tensors().len()
            && self
                .first_moment
                .tensors
                .iter()
                .zip(params.tensors())
                .all(|(m, p)| m.shape() == p.shape())
    }
}

/// One update: decoupled weight decay, then the bias-corrected adaptive
/// moment step. Pure in all inputs.
pub fn adamw_step<T: Scalar>(
    params: &DenoiserParams<T>,
    grads: &ParamVec<T>,
    state: &OptimizerState<T>,
) -> Result<(DenoiserParams<T>, OptimizerState<T>), DenoiserError> {
    if grads.tensors.len() != params.tensors().len()
        || grads
            .tensors
            .iter()
            .zip(params.tensors())
            .any(|(g, p)| g.shape() != p.shape())
        || !state.shapes_match(params)
    {
        return Err(DenoiserError::ShapeMismatch(
            "gradient or moment shapes do not match the parameters".into(),
        ));
    }
    let h = state.hyper;
    let step = state.step + 1;
    let one = T::one();
    let bias1 = one - h.beta1.powi(step as i32);
    let bias2 = one - h.beta2.powi(step as i32);

    let mut new_params = params.clone();
    let mut new_state = state.clone();
    new_state.step = step;

    for i in 0..grads.tensors.len() {
        let g = grads.tensors[i].data();
        let p = new_params.tensor_mut(i).data_mut();
        let m = new_state.first_moment.tensors[i].data_mut();
        let v = new_state.second_moment.tensors[i].data_mut();
        for j in 0..g.len() {
            p[j] = p[j] * (one - h.learning_rate * h.weight_decay);
            m[j] = h.beta1 * m[j] + (one - h.beta1) * g[j];
            v[j] = h.beta2 * v[j] + (one - h.beta2) * g[j] * g[j];
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            p[j] = p[j] - h.learning_rate * m_hat / (v_hat.sqrt() + h.epsilon);
        }
    }
    Ok((new_params, new_state))
}
