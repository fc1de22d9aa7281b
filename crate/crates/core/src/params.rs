//! Parameter containers generic over their leaf type.
//!
//! The same struct holds plain tensors (weights, gradients, optimizer
//! moments) or tape handles during a recorded forward pass. `map` converts
//! between the two; `visit` walks leaves in a fixed order under dotted names.

macro_rules! param_fields {
    ($name:ident { $($field:ident),* $(,)? }) => {
        impl<V> $name<V> {
            pub fn map<W>(&self, f: &mut impl FnMut(&V) -> W) -> $name<W> {
                $name { $($field: f(&self.$field)),* }
            }

            pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a V)) {
                $( f(format!("{prefix}{}", stringify!($field)), &self.$field); )*
            }

            pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut impl FnMut(String, &'a mut V)) {
                $( f(format!("{prefix}{}", stringify!($field)), &mut self.$field); )*
            }
        }
    };
}

pub(crate) use param_fields;

use rand::{Rng, RngCore};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Tensor of i.i.d. draws from `U(−bound, bound)`.
pub fn uniform<T: Scalar>(shape: &[usize], bound: f64, rng: &mut dyn RngCore) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.gen_range(-bound..=bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("non-empty shape")
}
