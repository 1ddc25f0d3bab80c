//! Minimal reverse-mode engine: NCHW tensors, the layer primitives the
//! encoder-decoder networks need, and Adam.
//!
//! Convolutions are strided at 1 only. Spatial reduction and expansion
//! happen through [`Tape::maxpool2x`] and [`Tape::upsample_nearest2x`].

mod adam;
pub(crate) mod kernels;
pub(crate) mod tape;
mod tensor;

pub use adam::{AdamState, DEFAULT_LEARNING_RATE};
pub use tape::{Activation, Mode, NormStats, RunningStats, Tape, Var, BN_EPSILON, BN_MOMENTUM};
pub use tensor::{Scalar, Tensor};

use rand::Rng;

use crate::error::{invalid, Result};

/// Size-preserving padding `(k − 1) / 2`; even kernels have no centered
/// "same" padding at stride 1.
pub fn same_padding(kernel_size: usize) -> Result<usize> {
    if kernel_size == 0 || kernel_size.is_multiple_of(2) {
        return Err(invalid!("same padding needs an odd kernel size, got {kernel_size}"));
    }
    Ok((kernel_size - 1) / 2)
}

/// Glorot-uniform kernel in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<f32> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..=limit) as f32).collect();
    Tensor::new(shape, data).expect("shape product matches")
}

/// Forward-only convolution (no gradient recording).
pub fn conv2d<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>, padding: usize) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let (x, k, b) = (tape.leaf(input.clone()), tape.leaf(kernel.clone()), tape.leaf(bias.clone()));
    let y = tape.conv2d(x, k, b, padding)?;
    Ok(tape.take_value(y))
}

/// Forward-only transposed convolution with an `[in, out, kh, kw]` kernel.
pub fn transposed_conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    padding: usize,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let (x, k, b) = (tape.leaf(input.clone()), tape.leaf(kernel.clone()), tape.leaf(bias.clone()));
    let y = tape.conv_transpose2d(x, k, b, padding)?;
    Ok(tape.take_value(y))
}

pub fn maxpool2x<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone());
    let y = tape.maxpool2x(x)?;
    Ok(tape.take_value(y))
}

pub fn upsample_nearest2x<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone());
    let y = tape.upsample_nearest2x(x)?;
    Ok(tape.take_value(y))
}

pub fn activation<T: Scalar>(input: &Tensor<T>, kind: Activation) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone());
    let y = tape.activation(x, kind)?;
    Ok(tape.take_value(y))
}

pub fn batchnorm2d<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: NormStats<'_>,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let (x, g, b) = (tape.leaf(input.clone()), tape.leaf(gamma.clone()), tape.leaf(beta.clone()));
    let y = tape.batchnorm2d(x, g, b, stats)?;
    Ok(tape.take_value(y))
}

pub fn dropout<T: Scalar, R: Rng + ?Sized>(input: &Tensor<T>, p: f64, mode: Mode, rng: &mut R) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone());
    let y = tape.dropout(x, p, mode, rng)?;
    Ok(tape.take_value(y))
}
