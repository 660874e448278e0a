//! Minimal reverse-mode automatic differentiation over dense `[C,H,W]` tensors.

mod adam;
pub mod checkpoint;
mod dense;
pub mod kernels;
mod ops;
mod params;
mod scalar;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use dense::Tensor;
pub use params::{BoundParams, ParamStore};
pub use scalar::Scalar;
pub use tape::{CustomBackward, Pointwise, Tape, Var};

use rand::Rng;

/// Kaiming-uniform fan-in initialization for a `[Cout,Cin,k,k]` kernel.
pub fn kaiming_uniform<T: Scalar, R: Rng>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    let fan_in: usize = shape[1..].iter().product();
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::lit(rng.gen_range(-bound..bound)))
}

#[cfg(test)]
mod tests;
