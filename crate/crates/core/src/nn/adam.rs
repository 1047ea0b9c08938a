use serde::{Deserialize, Serialize};

use super::param::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }
}

/// First and second moment estimates, one pair per parameter of the store
/// they were created for.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        AdamState {
            config,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }
}

/// One bias-corrected Adam update over every parameter that requires a gradient.
///
/// Gradients are validated before anything is modified, so a non-finite
/// gradient leaves both the parameters and the state untouched.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    if state.first_moment.len() != params.len() {
        return Err(Error::Shape(format!(
            "Adam state tracks {} parameters, store has {}",
            state.first_moment.len(),
            params.len()
        )));
    }
    if let Some(p) = params.iter().find(|p| p.requires_grad && !p.grad.is_finite()) {
        return Err(Error::NonFinite(format!("gradient of parameter {}", p.id)));
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        if !p.requires_grad {
            continue;
        }
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        let g = p.grad.data();
        for (j, w) in p.value.data_mut().iter_mut().enumerate() {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64, grad: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::new(vec![1], vec![value]).unwrap()).unwrap();
        s.get_mut(id).grad.data_mut()[0] = grad;
        s
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut s = ParamStore::new();
        s.add("a", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()).unwrap();
        let before = s.flat_values();
        let mut st = AdamState::new(AdamConfig::default(), &s);
        adam_step(&mut s, &mut st).unwrap();
        assert_eq!(s.flat_values(), before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = single(0.0, 1.0);
        let mut st = AdamState::new(AdamConfig::with_lr(0.1), &s);
        adam_step(&mut s, &mut st).unwrap();
        assert!((s.flat_values()[0] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = single(0.0, f64::NAN);
        let mut st = AdamState::new(AdamConfig::default(), &s);
        let err = adam_step(&mut s, &mut st).unwrap_err().to_string();
        assert!(err.contains("parameter p"), "{err}");
        assert_eq!(st.step, 0);
    }
}
