use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Per-parameter first/second moment estimates.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub first_moment: Tensor<T>,
    pub second_moment: Tensor<T>,
    pub step_count: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shape: &[usize]) -> Self {
        AdamState { first_moment: Tensor::zeros(shape), second_moment: Tensor::zeros(shape), step_count: 0 }
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step<T: Scalar>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    grad.expect_shape(param.shape())?;
    state.first_moment.expect_shape(param.shape())?;
    state.second_moment.expect_shape(param.shape())?;
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let c1 = T::one() - T::of(cfg.beta1.powi(t));
    let c2 = T::one() - T::of(cfg.beta2.powi(t));
    let lr = T::of(cfg.learning_rate);
    let eps = T::of(cfg.epsilon);
    let m = state.first_moment.data_mut();
    let v = state.second_moment.data_mut();
    for (((p, &g), m), v) in param.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_param() {
        let mut p = Tensor::from_fn(&[3], |i| i as f32 - 1.0);
        let before = p.clone();
        let mut st = AdamState::new(&[3]);
        adam_step(&mut p, &Tensor::zeros(&[3]), &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = Tensor::scalar(0.0f64);
        let mut st = AdamState::new(&[1]);
        adam_step(&mut p, &Tensor::scalar(1.0), &mut st, &AdamConfig::default()).unwrap();
        let want = -1e-4 / (1.0 + 1e-8);
        assert!((p.data()[0] - want).abs() < 1e-18);
        assert!((p.data()[0] + 9.99999e-5).abs() < 1e-10);
    }

    #[test]
    fn two_steps_match_scalar_recurrence() {
        let cfg = AdamConfig { learning_rate: 0.01, ..Default::default() };
        let g = 0.3f64;
        let mut p = Tensor::scalar(1.0f64);
        let mut st = AdamState::new(&[1]);
        for _ in 0..2 {
            adam_step(&mut p, &Tensor::scalar(g), &mut st, &cfg).unwrap();
        }
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            m = 0.9 * m + (1.0 - 0.9) * g;
            v = 0.999 * v + (1.0 - 0.999) * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.01 * mh / (vh.sqrt() + 1e-8);
        }
        assert_eq!(p.data()[0], x);
        assert!(st.second_moment.data()[0] >= 0.0);
    }
}
