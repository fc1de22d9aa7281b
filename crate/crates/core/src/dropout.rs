//! Inverted dropout.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::normalization::Mode;
use crate::scalar::Scalar;
use crate::tape::{Eager, Exec};
use crate::tensor::Tensor;

/// Keep-mask scaled by `1/(1−rate)`, one Bernoulli draw per element.
pub fn keep_mask<T: Scalar>(shape: &[usize], rate: T, rng: &mut dyn RngCore) -> Result<Tensor<T>> {
    let r = rate.to_f64_lossy();
    if !(0.0..1.0).contains(&r) {
        return Err(Error::Contract(format!("dropout rate {r} outside [0, 1)")));
    }
    let scale = T::one() / (T::one() - rate);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| if rng.gen_bool(1.0 - r) { scale } else { T::zero() })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// Applies dropout in train mode; identity in infer mode or at rate 0.
/// No random numbers are drawn when it is the identity.
pub fn dropout_exec<T: Scalar, E: Exec<T>>(
    exec: &mut E,
    x: &E::Value,
    rate: T,
    rng: &mut dyn RngCore,
    mode: Mode,
) -> Result<E::Value> {
    if mode == Mode::Infer || rate == T::zero() {
        return Ok(x.clone());
    }
    let mask = keep_mask(exec.value(x).shape(), rate, rng)?;
    let mask = exec.constant(mask);
    exec.mul(x, &mask)
}

pub fn dropout<T: Scalar>(x: &Tensor<T>, rate: T, rng: &mut dyn RngCore, mode: Mode) -> Result<Tensor<T>> {
    dropout_exec(&mut Eager, x, rate, rng, mode)
}
