use crate::{NnError, ParamSet, Result};

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Adam {
            lr,
            ..Adam::default()
        }
    }

    pub fn init(self, params: &ParamSet) -> AdamState {
        AdamState {
            config: self,
            step_count: 0,
            first_moment: params.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect(),
            second_moment: params.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect(),
        }
    }
}

/// Moment estimates for one [`ParamSet`], index-aligned with it.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: Adam,
    pub step_count: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

/// One bias-corrected Adam update from the accumulated gradients, which are
/// zeroed afterwards. Nothing is modified if any gradient is non-finite.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState) -> Result<()> {
    if state.first_moment.len() != params.len() {
        return Err(NnError::Shape(format!(
            "optimizer tracks {} parameters, set has {}",
            state.first_moment.len(),
            params.len()
        )));
    }
    for (_, p) in params.iter() {
        if !p.grad.all_finite() {
            return Err(NnError::Divergence(p.name.clone()));
        }
    }
    let Adam {
        lr,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (k, p) in params.iter_mut().enumerate() {
        let m = &mut state.first_moment[k];
        let v = &mut state.second_moment[k];
        let grad = p.grad.data().to_vec();
        for (i, theta) in p.value.data_mut().iter_mut().enumerate() {
            let g = grad[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *theta -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    params.zero_grads();
    Ok(())
}
