//! Adam optimizer with bias correction.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Real, Tensor};

/// Hyperparameters. Defaults are learning rate 0.001, beta1 0.9,
/// beta2 0.999, epsilon 1e-8.
#[derive(Clone, Copy, Debug)]
pub struct AdamConfig<F> {
    pub learning_rate: F,
    pub beta1: F,
    pub beta2: F,
    pub epsilon: F,
}

impl<F: Real> AdamConfig<F> {
    pub fn with_learning_rate(learning_rate: F) -> Self {
        AdamConfig {
            learning_rate,
            ..Default::default()
        }
    }
}

impl<F: Real> Default for AdamConfig<F> {
    fn default() -> Self {
        AdamConfig {
            learning_rate: F::from_f64(0.001),
            beta1: F::from_f64(0.9),
            beta2: F::from_f64(0.999),
            epsilon: F::from_f64(1e-8),
        }
    }
}

#[derive(Clone, Debug)]
struct Slot<F> {
    m: Vec<F>,
    v: Vec<F>,
}

/// Per-parameter first/second moment estimates plus the shared step count.
#[derive(Clone, Debug)]
pub struct AdamState<F> {
    step: u64,
    slots: BTreeMap<String, Slot<F>>,
}

impl<F: Real> Default for AdamState<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> AdamState<F> {
    pub fn new() -> Self {
        AdamState {
            step: 0,
            slots: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update over a named parameter set.
///
/// Every parameter must have a same-shape gradient in `grads`. Moment slots
/// are created lazily on first use and checked for congruence afterwards.
pub fn adam_step<'p, F: Real>(
    state: &mut AdamState<F>,
    config: &AdamConfig<F>,
    params: impl IntoIterator<Item = (String, &'p mut Tensor<F>)>,
    grads: &Gradients<F>,
) -> Result<()> {
    state.step += 1;
    let t = state.step;
    let one = F::one();
    let bc1 = one - config.beta1.powi(t as i32);
    let bc2 = one - config.beta2.powi(t as i32);

    for (name, param) in params {
        let grad = grads.get(&name)?;
        if grad.shape() != param.shape() {
            return Err(Error::ShapeMismatch {
                node: name.clone(),
                detail: format!(
                    "gradient {:?} vs parameter {:?}",
                    grad.shape(),
                    param.shape()
                ),
            });
        }
        let slot = state.slots.entry(name.clone()).or_insert_with(|| Slot {
            m: vec![F::zero(); param.numel()],
            v: vec![F::zero(); param.numel()],
        });
        if slot.m.len() != param.numel() {
            return Err(Error::ShapeMismatch {
                node: name,
                detail: format!(
                    "moment length {} vs parameter {}",
                    slot.m.len(),
                    param.numel()
                ),
            });
        }
        for ((p, &g), (m, v)) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(slot.m.iter_mut().zip(slot.v.iter_mut()))
        {
            *m = config.beta1 * *m + (one - config.beta1) * g;
            *v = config.beta2 * *v + (one - config.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p = *p - config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}
