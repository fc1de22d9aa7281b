//! Adam with bias-corrected moment estimates.

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper<T> {
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Scalar> Default for AdamHyper<T> {
    fn default() -> Self {
        Self {
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            epsilon: T::lit(1e-8),
        }
    }
}

/// Moment estimates, one pair per parameter tensor, and the step count.
///
/// Starts empty; the first step sizes the moments to zero tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

/// One update of every parameter tensor, in place.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[&Tensor<T>],
    state: &mut AdamState<T>,
    lr: T,
    hyper: &AdamHyper<T>,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Contract(format!(
            "{} parameter tensors but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    if state.m.is_empty() {
        state.m = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len() {
        return Err(Error::Contract("optimizer state belongs to a different model".into()));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || g.shape() != m.shape() {
            return Err(shape_err("adam_step", p.shape(), g.shape()));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = T::one() - hyper.beta1.powi(t);
    let c2 = T::one() - hyper.beta2.powi(t);
    let (b1, b2) = (hyper.beta1, hyper.beta2);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
        for (i, &gi) in g.data().iter().enumerate() {
            m[i] = b1 * m[i] + (T::one() - b1) * gi;
            v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + hyper.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(theta: &mut Tensor<f64>, g: &Tensor<f64>, state: &mut AdamState<f64>) {
        adam_step(&mut [theta], &[g], state, 1e-4, &AdamHyper::default()).unwrap();
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut theta = Tensor::<f64>::zeros(&[3]);
        let mut st = AdamState::default();
        step(&mut theta, &Tensor::ones(&[3]), &mut st);
        for &x in theta.data() {
            // m̂ = v̂ = 1, so Δ = −lr·1/(1 + ε).
            assert!((x + 1e-4 / (1.0 + 1e-8)).abs() < 1e-18);
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut theta = Tensor::<f64>::vector(vec![0.5, -2.0]);
        let mut st = AdamState::default();
        for _ in 0..5 {
            step(&mut theta, &Tensor::zeros(&[2]), &mut st);
        }
        assert_eq!(theta.data(), &[0.5, -2.0]);
        assert_eq!(st.t, 5);
    }

    #[test]
    fn gradient_sign_flips_first_step() {
        let g = Tensor::<f64>::vector(vec![0.3, -7.0]);
        let (mut a, mut b) = (Tensor::zeros(&[2]), Tensor::zeros(&[2]));
        step(&mut a, &g, &mut AdamState::default());
        step(&mut b, &g.scale(-1.0), &mut AdamState::default());
        assert_eq!(a, b.scale(-1.0));
    }

    #[test]
    fn mismatched_lists_rejected() {
        let mut a = Tensor::<f64>::zeros(&[2]);
        let g = Tensor::zeros(&[3]);
        let mut st = AdamState::default();
        assert!(adam_step(&mut [&mut a], &[&g], &mut st, 1e-3, &AdamHyper::default()).is_err());
        assert!(adam_step(&mut [&mut a], &[], &mut st, 1e-3, &AdamHyper::default()).is_err());
    }
}
