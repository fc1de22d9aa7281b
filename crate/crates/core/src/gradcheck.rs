//! Central finite differences, the oracle for every analytic gradient.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Maximum over coordinates of
/// `|analytic − (f(θ+h·eᵢ) − f(θ−h·eᵢ)) / 2h| / (|analytic| + 1e-8)`.
pub fn finite_diff_check<T: Scalar>(
    mut f: impl FnMut(&Tensor<T>) -> T,
    theta: &Tensor<T>,
    analytic: &Tensor<T>,
    h: T,
) -> T {
    assert_eq!(theta.numel(), analytic.numel(), "gradient/parameter size mismatch");
    let floor = T::lit(1e-8);
    let two_h = h + h;
    let mut probe = theta.clone();
    let mut worst = T::zero();
    for i in 0..theta.numel() {
        let orig = theta.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / two_h;
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / (a.abs() + floor);
        // NaN must not be hidden by max().
        if rel.is_nan() {
            return T::infinity();
        }
        worst = worst.max(rel);
    }
    worst
}

/// Numerical gradient by central differences, for diagnostics.
pub fn numeric_gradient<T: Scalar>(
    mut f: impl FnMut(&Tensor<T>) -> T,
    theta: &Tensor<T>,
    h: T,
) -> Tensor<T> {
    let mut probe = theta.clone();
    let mut out = Tensor::zeros(theta.shape());
    for i in 0..theta.numel() {
        let orig = theta.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (h + h);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::{Exec, Tape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_is_exact() {
        let theta = Tensor::scalar(3.0);
        let err = finite_diff_check(|t| t.data()[0] * t.data()[0], &theta, &Tensor::scalar(6.0), 1e-5);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn sum_tanh_against_tape() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let theta = Tensor::new(vec![7], (0..7).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(&theta);
        let t = tape.tanh(&x);
        let s = tape.sum_all(&t);
        let g = tape.backward(s).unwrap().wrt(&tape, x);
        let err = finite_diff_check(|t| t.tanh().sum(), &theta, &g, 1e-5);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let theta = Tensor::vector(vec![1.0, 2.0]);
        let zero = Tensor::zeros(&[2]);
        assert_eq!(finite_diff_check(|_| 4.2, &theta, &zero, 1e-5), 0.0);
        assert_eq!(numeric_gradient(|_| 4.2, &theta, 1e-5), zero);
    }

    #[test]
    fn nan_is_reported_as_failure() {
        let theta = Tensor::scalar(1.0);
        let err = finite_diff_check(|_| f64::NAN, &theta, &Tensor::scalar(0.0), 1e-5);
        assert!(err.is_infinite());
    }
}
