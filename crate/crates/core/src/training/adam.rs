//! Adam optimizer with bias correction, keyed by parameter name.

use crate::nn::{Param, Scalar};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Adam moment/scale constants. Defaults are the canonical β₁ = 0.9,
/// β₂ = 0.999, ε = 1e-7.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

pub struct Adam<F: Scalar> {
    lr: F,
    beta1: F,
    beta2: F,
    epsilon: F,
    t: u64,
    state: BTreeMap<String, (Vec<F>, Vec<F>)>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(learning_rate: f64, params: AdamParams) -> Self {
        Self {
            lr: F::from_f64(learning_rate),
            beta1: F::from_f64(params.beta1),
            beta2: F::from_f64(params.beta2),
            epsilon: F::from_f64(params.epsilon),
            t: 0,
            state: BTreeMap::new(),
        }
    }

    /// Advance the shared timestep; call once per optimizer step, before
    /// updating the step's parameters.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Apply the update `θ ← θ − lr · m̂ / (√v̂ + ε)` for one named parameter
    /// using its accumulated gradient.
    pub fn update(&mut self, name: &str, param: &mut Param<F>) {
        let (m, v) = self
            .state
            .entry(name.to_string())
            .or_insert_with(|| (vec![F::zero(); param.len()], vec![F::zero(); param.len()]));
        let one = F::one();
        let bc1 = one - self.beta1.powi(self.t as i32);
        let bc2 = one - self.beta2.powi(self.t as i32);
        for ((theta, &g), (m_i, v_i)) in param
            .data
            .iter_mut()
            .zip(param.grad.iter())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *m_i = self.beta1 * *m_i + (one - self.beta1) * g;
            *v_i = self.beta2 * *v_i + (one - self.beta2) * g * g;
            let m_hat = *m_i / bc1;
            let v_hat = *v_i / bc2;
            *theta = *theta - self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_update_matches_hand_formula() {
        // One parameter on the quadratic f(θ) = (θ − 5)², θ₀ = 0, lr = 0.01.
        let mut param = Param::<f64>::zeros(&[1]);
        param.grad[0] = 2.0 * (param.data[0] - 5.0); // = −10
        let mut adam = Adam::<f64>::new(0.01, AdamParams::default());
        adam.begin_step();
        adam.update("theta", &mut param);

        // Hand-computed update, written out term by term.
        let g = -10.0f64;
        let m = (1.0 - 0.9) * g;
        let v = (1.0 - 0.999) * g * g;
        let m_hat = m / (1.0 - 0.9f64.powi(1));
        let v_hat = v / (1.0 - 0.999f64.powi(1));
        let expected = 0.0 - 0.01 * m_hat / (v_hat.sqrt() + 1e-7);
        assert!(
            (param.data[0] - expected).abs() < 1e-12,
            "{} vs {}",
            param.data[0],
            expected
        );
        // Direction sanity: gradient is negative, so θ must increase.
        assert!(param.data[0] > 0.0);
    }

    #[test]
    fn two_steps_track_moment_recursion() {
        let mut param = Param::<f64>::zeros(&[1]);
        let mut adam = Adam::<f64>::new(0.1, AdamParams::default());
        let mut theta = 0.0f64;
        let mut m = 0.0f64;
        let mut v = 0.0f64;
        for t in 1..=2 {
            let g = 2.0 * (theta - 5.0);
            param.grad[0] = g;
            adam.begin_step();
            adam.update("theta", &mut param);

            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let m_hat = m / (1.0 - 0.9f64.powi(t));
            let v_hat = v / (1.0 - 0.999f64.powi(t));
            theta -= 0.1 * m_hat / (v_hat.sqrt() + 1e-7);
            assert!((param.data[0] - theta).abs() < 1e-12, "step {t}");
        }
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut param = Param::<f32>::filled(&[4], 1.25);
        param.grad = vec![3.0; 4];
        let before = param.data.clone();
        let mut adam = Adam::<f32>::new(0.0, AdamParams::default());
        adam.begin_step();
        adam.update("p", &mut param);
        assert_eq!(param.data, before);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut param = Param::<f64>::zeros(&[1]);
        let mut adam = Adam::<f64>::new(0.5, AdamParams::default());
        for _ in 0..500 {
            param.grad[0] = 2.0 * (param.data[0] - 5.0);
            adam.begin_step();
            adam.update("p", &mut param);
            param.zero_grad();
        }
        assert!((param.data[0] - 5.0).abs() < 1e-3);
    }
}
