//! Adam with the standard bias correction.

use crate::numerics::{Scalar, Tensor};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

/// First/second moment accumulators mirroring one parameter list.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        AdamState {
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update: mₜ = β₁m + (1−β₁)g, vₜ = β₂v + (1−β₂)g²,
    /// θ ← θ − lr·m̂ₜ/(√v̂ₜ + ε) with m̂, v̂ bias-corrected.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let b1 = T::from_f64(BETA1);
        let b2 = T::from_f64(BETA2);
        let one = T::one();
        let bias1 = T::from_f64(1.0 - BETA1.powi(self.step as i32));
        let bias2 = T::from_f64(1.0 - BETA2.powi(self.step as i32));
        let lr = T::from_f64(lr);
        let eps = T::from_f64(EPSILON);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert_eq!(p.shape(), g.shape());
            let (pd, gd) = (p.data_mut(), g.data());
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                md[i] = b1 * md[i] + (one - b1) * gd[i];
                vd[i] = b2 * vd[i] + (one - b2) * gd[i] * gd[i];
                let m_hat = md[i] / bias1;
                let v_hat = vd[i] / bias2;
                pd[i] = pd[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_gradient_from_fresh_state_leaves_parameters() {
        let mut params = vec![Tensor::vector(vec![1.0f64, -2.0])];
        let before = params[0].clone();
        let mut state = AdamState::new(&params);
        state.step(&mut params, &[Tensor::vector(vec![0.0, 0.0])], 0.01);
        assert_eq!(params[0], before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn zero_gradient_decays_loaded_moments() {
        let mut params = vec![Tensor::vector(vec![1.0f64, -2.0])];
        let mut state = AdamState::new(&params);
        state.step(&mut params, &[Tensor::vector(vec![1.0, 1.0])], 0.01);
        let m_before = state.m[0].data()[0];
        let v_before = state.v[0].data()[0];
        state.step(&mut params, &[Tensor::vector(vec![0.0, 0.0])], 0.01);
        assert_abs_diff_eq!(state.m[0].data()[0], m_before * 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(state.v[0].data()[0], v_before * 0.999, epsilon = 1e-15);
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_almost_lr() {
        // t=1, g=1: m̂=1, v̂=1, update −lr/(1+ε).
        let lr = 0.05;
        let mut params = vec![Tensor::vector(vec![0.0f64])];
        let mut state = AdamState::new(&params);
        state.step(&mut params, &[Tensor::vector(vec![1.0])], lr);
        let expected = -lr / (1.0 + 1e-8);
        assert_abs_diff_eq!(params[0].data()[0], expected, epsilon = 1e-9);
    }

    #[test]
    fn constant_gradient_updates_approach_lr_in_magnitude() {
        let lr = 0.002;
        let g = 3.5f64;
        let mut params = vec![Tensor::vector(vec![10.0f64])];
        let mut state = AdamState::new(&params);
        for _ in 0..200 {
            let before = params[0].data()[0];
            state.step(&mut params, &[Tensor::vector(vec![g])], lr);
            let update = (params[0].data()[0] - before).abs();
            assert!(
                (update - lr).abs() / lr < 0.01,
                "update {update} strays from lr {lr}"
            );
        }
    }

    #[test]
    fn trajectory_matches_the_closed_form_recurrence() {
        // Under a constant gradient the moments have closed forms
        // m_t = g(1−β₁ᵗ), v_t = g²(1−β₂ᵗ); after bias correction every
        // update is exactly −lr·g/(|g| + ε).
        let lr = 0.01;
        let g = -0.25f64;
        let mut params = vec![Tensor::vector(vec![2.0f64])];
        let mut state = AdamState::new(&params);
        let mut expected = 2.0f64;
        for _ in 0..50 {
            state.step(&mut params, &[Tensor::vector(vec![g])], lr);
            expected -= lr * g / (g.abs() + 1e-8);
            assert_abs_diff_eq!(params[0].data()[0], expected, epsilon = 1e-9);
        }
    }
}
