use serde::{Deserialize, Serialize};

use super::matrix::Tensor;
use crate::error::{shape_err, Result};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Moment buffers for one parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn for_param(p: &Tensor) -> Self {
        Self::new(p.len())
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step(param: &mut Tensor, grad: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if grad.len() != param.len() || state.m.len() != param.len() || state.v.len() != param.len() {
        return shape_err(format!(
            "adam: param {} grad {} moments {}/{}",
            param.len(),
            grad.len(),
            state.m.len(),
            state.v.len()
        ));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in param.data_mut().iter_mut().zip(grad).zip(state.m.iter_mut()).zip(state.v.iter_mut()) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = Tensor::new(1, 3, vec![0.5, -1.0, 2.0]).unwrap();
        let before = p.clone();
        let mut st = AdamState::for_param(&p);
        adam_step(&mut p, &[0.0; 3], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::scalar(1.0);
        let mut st = AdamState::for_param(&p);
        adam_step(&mut p, &[1.0], &mut st, &AdamConfig::default()).unwrap();
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps)
        let expect = 1.0 - 1e-3 / (1.0 + 1e-8);
        assert!((p.item() - expect).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let mut p = Tensor::scalar(0.0);
        let mut st = AdamState::for_param(&p);
        let cfg = AdamConfig::default();
        let mut last = 0.0;
        for _ in 0..5000 {
            let before = p.item();
            adam_step(&mut p, &[0.37], &mut st, &cfg).unwrap();
            last = before - p.item();
        }
        assert!((last - cfg.lr).abs() < 1e-9, "{last}");
    }

    #[test]
    fn shape_mismatch() {
        let mut p = Tensor::scalar(0.0);
        let mut st = AdamState::new(2);
        assert!(adam_step(&mut p, &[1.0], &mut st, &AdamConfig::default()).is_err());
    }
}
