use serde::{Deserialize, Serialize};

use super::{DiffError, Tensor};

/// Adam moments and hyperparameters for a fixed list of parameter tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;

    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.second
    }

    pub fn reset(&mut self) {
        self.step = 0;
        self.first.clear();
        self.second.clear();
    }
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new(Self::DEFAULT_LEARNING_RATE)
    }
}

/// One bias-corrected Adam update. Moments are allocated on first use; a
/// non-finite gradient aborts before any parameter is touched.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
) -> Result<(), DiffError> {
    if params.len() != grads.len() {
        return Err(DiffError::ParamCount {
            expected: params.len(),
            got: grads.len(),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(DiffError::Shape {
                op: "adam_step",
                left: p.shape(),
                right: g.shape(),
            });
        }
        if let Some(index) = g.data().iter().position(|x| !x.is_finite()) {
            return Err(DiffError::NonFinite { param: i, index });
        }
    }
    if state.first.is_empty() {
        state.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
        state.second = state.first.clone();
    } else if state.first.len() != params.len() {
        return Err(DiffError::ParamCount {
            expected: state.first.len(),
            got: params.len(),
        });
    }
    for (i, p) in params.iter().enumerate() {
        if state.first[i].len() != p.len() {
            return Err(DiffError::Shape {
                op: "adam_step",
                left: (1, state.first[i].len()),
                right: p.shape(),
            });
        }
    }

    state.step += 1;
    let t = state.step as f64;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powf(t);
    let c2 = 1.0 - b2.powf(t);
    let lr = state.learning_rate;
    let eps = state.epsilon;

    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
