//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node holding its output value and whatever it needs to
//! run backward. [`Tape::backward`] walks the nodes in reverse insertion
//! order, which is a valid topological order because inputs always precede
//! the ops that consume them.

use rand::Rng;

use super::kernels;
use super::tensor::{Scalar, Tensor};
use crate::error::{invalid, shape_err, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Train/eval switch for batch norm and dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Running mean/variance tracked by one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], var: vec![1.0; channels] }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Exponential moving average with momentum [`BN_MOMENTUM`]; the
    /// variance fed in is the unbiased batch estimate.
    fn update(&mut self, mean: &[f64], var: &[f64], count: usize) {
        let unbias = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
        for c in 0..self.mean.len() {
            self.mean[c] = (BN_MOMENTUM * self.mean[c] as f64 + (1.0 - BN_MOMENTUM) * mean[c]) as f32;
            self.var[c] = (BN_MOMENTUM * self.var[c] as f64 + (1.0 - BN_MOMENTUM) * var[c] * unbias) as f32;
        }
    }
}

/// Batch-norm statistics access: train mode updates them, eval mode reads.
#[derive(Debug)]
pub enum NormStats<'a> {
    Train(&'a mut RunningStats),
    Eval(&'a RunningStats),
}

impl NormStats<'_> {
    pub fn mode(&self) -> Mode {
        match self {
            NormStats::Train(_) => Mode::Train,
            NormStats::Eval(_) => Mode::Eval,
        }
    }

    fn channels(&self) -> usize {
        match self {
            NormStats::Train(s) => s.channels(),
            NormStats::Eval(s) => s.channels(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

enum Op<T> {
    Leaf,
    Conv2d { x: usize, k: usize, b: usize, pad: usize },
    ConvTranspose2d { x: usize, k: usize, b: usize, pad: usize },
    MaxPool { x: usize, argmax: Vec<usize> },
    Upsample { x: usize },
    BatchNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<T>, inv_std: Vec<f64>, train: bool },
    Relu { x: usize },
    Sigmoid { x: usize },
    Dropout { x: usize, mask: Vec<T> },
    Sum { x: usize },
    Dot { x: usize, weights: Vec<T> },
    Jaccard { p: usize, target: Vec<T>, inter: f64, union: f64 },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Recording of one forward pass.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn check_open(&self) -> Result<()> {
        if self.backward_done {
            Err(Error::Graph("tape already consumed by backward; record a new forward pass".into()))
        } else {
            Ok(())
        }
    }

    /// Registers an input or parameter.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        let mut value = value;
        value.clear_grad();
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` call with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_value(&mut self, v: Var) -> Tensor<T> {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::scalar(T::zero()))
    }

    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var, padding: usize) -> Result<Var> {
        self.check_open()?;
        let xd = self.value(x).dims4()?;
        let kd = self.value(kernel).dims4()?;
        let bl = self.value(bias).len();
        if xd[1] != kd[1] {
            return Err(shape_err!("conv2d: input has {} channels, kernel expects {}", xd[1], kd[1]));
        }
        if bl != kd[0] {
            return Err(shape_err!("conv2d: bias has {bl} entries for {} output channels", kd[0]));
        }
        if kernels::Window::new(xd[1], xd[2], xd[3], kd[2], kd[3], padding).is_none() {
            return Err(shape_err!(
                "conv2d: kernel {}x{} with padding {padding} does not fit input {}x{}",
                kd[2],
                kd[3],
                xd[2],
                xd[3]
            ));
        }
        let (y, yd) = kernels::conv2d_forward(
            self.value(x).data(),
            xd,
            self.value(kernel).data(),
            kd,
            self.value(bias).data(),
            padding,
        );
        Ok(self.push(Tensor::new(&yd, y)?, Op::Conv2d { x: x.0, k: kernel.0, b: bias.0, pad: padding }))
    }

    pub fn conv_transpose2d(&mut self, x: Var, kernel: Var, bias: Var, padding: usize) -> Result<Var> {
        self.check_open()?;
        let xd = self.value(x).dims4()?;
        let kd = self.value(kernel).dims4()?;
        let bl = self.value(bias).len();
        if xd[1] != kd[0] {
            return Err(shape_err!("transposed conv: input has {} channels, kernel expects {}", xd[1], kd[0]));
        }
        if bl != kd[1] {
            return Err(shape_err!("transposed conv: bias has {bl} entries for {} output channels", kd[1]));
        }
        let oh = (xd[2] + kd[2]) as isize - 1 - 2 * padding as isize;
        let ow = (xd[3] + kd[3]) as isize - 1 - 2 * padding as isize;
        if oh <= 0 || ow <= 0 {
            return Err(shape_err!(
                "transposed conv: output size {oh}x{ow} is not positive (input {}x{}, kernel {}x{}, padding {padding})",
                xd[2],
                xd[3],
                kd[2],
                kd[3]
            ));
        }
        let (y, yd) = kernels::conv_transpose2d_forward(
            self.value(x).data(),
            xd,
            self.value(kernel).data(),
            kd,
            self.value(bias).data(),
            padding,
        );
        Ok(self.push(Tensor::new(&yd, y)?, Op::ConvTranspose2d { x: x.0, k: kernel.0, b: bias.0, pad: padding }))
    }

    pub fn maxpool2x(&mut self, x: Var) -> Result<Var> {
        self.check_open()?;
        let xd = self.value(x).dims4()?;
        if xd[2] % 2 != 0 || xd[3] % 2 != 0 {
            return Err(shape_err!("maxpool2x: spatial size {}x{} is not even", xd[2], xd[3]));
        }
        let (y, argmax, yd) = kernels::maxpool2x_forward(self.value(x).data(), xd);
        Ok(self.push(Tensor::new(&yd, y)?, Op::MaxPool { x: x.0, argmax }))
    }

    pub fn upsample_nearest2x(&mut self, x: Var) -> Result<Var> {
        self.check_open()?;
        let xd = self.value(x).dims4()?;
        let (y, yd) = kernels::upsample2x_forward(self.value(x).data(), xd);
        Ok(self.push(Tensor::new(&yd, y)?, Op::Upsample { x: x.0 }))
    }

    /// Per-channel batch normalization. In train mode the batch statistics
    /// normalize the input and are folded into the running statistics; in
    /// eval mode the running statistics are used as constants.
    pub fn batchnorm2d(&mut self, x: Var, gamma: Var, beta: Var, stats: NormStats<'_>) -> Result<Var> {
        self.check_open()?;
        let xd = self.value(x).dims4()?;
        let c = xd[1];
        let mode = stats.mode();
        if self.value(gamma).len() != c || self.value(beta).len() != c || stats.channels() != c {
            return Err(shape_err!(
                "batchnorm: {c} input channels but gamma/beta/stats have {}/{}/{}",
                self.value(gamma).len(),
                self.value(beta).len(),
                stats.channels()
            ));
        }
        let (mean, var) = match stats {
            NormStats::Train(stats) => {
                let (m, v) = kernels::channel_moments(self.value(x).data(), xd);
                stats.update(&m, &v, xd[0] * xd[2] * xd[3]);
                (m, v)
            }
            NormStats::Eval(stats) => (
                stats.mean.iter().map(|&v| v as f64).collect(),
                stats.var.iter().map(|&v| v as f64).collect(),
            ),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
        let (y, xhat) = kernels::batchnorm_apply(
            self.value(x).data(),
            xd,
            &mean,
            &inv_std,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let op = Op::BatchNorm { x: x.0, gamma: gamma.0, beta: beta.0, xhat, inv_std, train: mode == Mode::Train };
        Ok(self.push(Tensor::new(self.value(x).shape(), y)?, op))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        self.check_open()?;
        let (value, op) = match kind {
            Activation::Relu => (self.value(x).map(|v| v.max(T::zero())), Op::Relu { x: x.0 }),
            Activation::Sigmoid => (self.value(x).map(kernels::sigmoid), Op::Sigmoid { x: x.0 }),
        };
        Ok(self.push(value, op))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)` at train time so
    /// eval mode is the identity.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        self.check_open()?;
        if !(0.0..1.0).contains(&p) {
            return Err(invalid!("dropout probability must lie in [0, 1), got {p}"));
        }
        let n = self.value(x).len();
        let mask: Vec<T> = if mode == Mode::Eval || p == 0.0 {
            vec![T::one(); n]
        } else {
            let keep = T::from_f64(1.0 / (1.0 - p));
            (0..n).map(|_| if rng.random::<f64>() < p { T::zero() } else { keep }).collect()
        };
        let src = self.value(x);
        let y: Vec<T> = src.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let shape = src.shape().to_vec();
        Ok(self.push(Tensor::new(&shape, y)?, Op::Dropout { x: x.0, mask }))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check_open()?;
        let s = self.value(x).sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum { x: x.0 }))
    }

    /// `Σ wᵢ xᵢ` against constant weights.
    pub fn dot(&mut self, x: Var, weights: &[T]) -> Result<Var> {
        self.check_open()?;
        if weights.len() != self.value(x).len() {
            return Err(shape_err!("dot: {} weights for {} elements", weights.len(), self.value(x).len()));
        }
        let s = self.value(x).data().iter().zip(weights).map(|(&a, &b)| a * b).sum();
        Ok(self.push(Tensor::scalar(s), Op::Dot { x: x.0, weights: weights.to_vec() }))
    }

    /// Soft Jaccard distance between predictions and a constant binary
    /// target, summed over every element of the batch:
    /// `1 − Σtp / (Σt² + Σp² − Σtp)`, defined as 0 when the denominator is 0.
    pub fn jaccard_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        self.check_open()?;
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(shape_err!(
                "jaccard loss: prediction shape {:?} vs target shape {:?}",
                p.shape(),
                target.shape()
            ));
        }
        if target.data().iter().any(|&t| t != T::zero() && t != T::one()) {
            return Err(invalid!("jaccard loss: targets must be binary"));
        }
        let (inter, union) = jaccard_terms(p.data(), target.data());
        let loss = if union == 0.0 { 0.0 } else { 1.0 - inter / union };
        let op = Op::Jaccard { p: pred.0, target: target.data().to_vec(), inter, union };
        Ok(self.push(Tensor::scalar(T::from_f64(loss)), op))
    }

    /// Populates gradients of `loss` on every leaf of the tape. Leaves that
    /// the loss does not depend on receive an all-zero gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check_open()?;
        if self.value(loss).len() != 1 {
            return Err(shape_err!("backward needs a scalar loss, got shape {:?}", self.value(loss).shape()));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                }
                Op::Conv2d { x, k, b, pad } => {
                    let (xv, kv) = (&self.nodes[*x].value, &self.nodes[*k].value);
                    let (dx, dk, db) =
                        kernels::conv2d_backward(xv.data(), xv.dims4()?, kv.data(), kv.dims4()?, *pad, &g);
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *k, dk);
                    accumulate(&mut grads, *b, db);
                }
                Op::ConvTranspose2d { x, k, b, pad } => {
                    let (xv, kv) = (&self.nodes[*x].value, &self.nodes[*k].value);
                    let (dx, dk, db) =
                        kernels::conv_transpose2d_backward(xv.data(), xv.dims4()?, kv.data(), kv.dims4()?, *pad, &g);
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *k, dk);
                    accumulate(&mut grads, *b, db);
                }
                Op::MaxPool { x, argmax } => {
                    let mut dx = vec![T::zero(); self.nodes[*x].value.len()];
                    for (&src, &gv) in argmax.iter().zip(&g) {
                        dx[src] = dx[src] + gv;
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Upsample { x } => {
                    let dx = kernels::upsample2x_backward(&g, self.nodes[*x].value.dims4()?);
                    accumulate(&mut grads, *x, dx);
                }
                Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                    let xd = self.nodes[*x].value.dims4()?;
                    let gv = self.nodes[*gamma].value.data();
                    let (dx, dg, db) = if *train {
                        kernels::batchnorm_backward_train(xhat, xd, inv_std, gv, &g)
                    } else {
                        kernels::batchnorm_backward_eval(xhat, xd, inv_std, gv, &g)
                    };
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gamma, dg);
                    accumulate(&mut grads, *beta, db);
                }
                Op::Relu { x } => {
                    let xv = self.nodes[*x].value.data();
                    let dx = g.iter().zip(xv).map(|(&gv, &v)| if v > T::zero() { gv } else { T::zero() }).collect();
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sigmoid { x } => {
                    let yv = node.value.data();
                    let dx = g.iter().zip(yv).map(|(&gv, &y)| gv * y * (T::one() - y)).collect();
                    accumulate(&mut grads, *x, dx);
                }
                Op::Dropout { x, mask } => {
                    let dx = g.iter().zip(mask).map(|(&gv, &m)| gv * m).collect();
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sum { x } => {
                    let dx = vec![g[0]; self.nodes[*x].value.len()];
                    accumulate(&mut grads, *x, dx);
                }
                Op::Dot { x, weights } => {
                    let dx = weights.iter().map(|&w| w * g[0]).collect();
                    accumulate(&mut grads, *x, dx);
                }
                Op::Jaccard { p, target, inter, union } => {
                    let pv = self.nodes[*p].value.data();
                    let dx = jaccard_grad(pv, target, *inter, *union, g[0].as_f64());
                    accumulate(&mut grads, *p, dx);
                }
            }
        }

        for (id, node) in self.nodes.iter_mut().enumerate() {
            if matches!(node.op, Op::Leaf) {
                let g = grads[id].take().unwrap_or_else(|| vec![T::zero(); node.value.len()]);
                node.value.set_grad(g)?;
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], id: usize, g: Vec<T>) {
    match &mut grads[id] {
        Some(existing) => existing.iter_mut().zip(g).for_each(|(a, b)| *a = *a + b),
        slot @ None => *slot = Some(g),
    }
}

/// `(I, U)` with `I = Σtp` and `U = Σt² + Σp² − I`, accumulated in f64.
pub(crate) fn jaccard_terms<T: Scalar>(p: &[T], t: &[T]) -> (f64, f64) {
    let (mut tp, mut tt, mut pp) = (0.0f64, 0.0f64, 0.0f64);
    for (&pv, &tv) in p.iter().zip(t) {
        let (pv, tv) = (pv.as_f64(), tv.as_f64());
        tp += tv * pv;
        tt += tv * tv;
        pp += pv * pv;
    }
    (tp, tt + pp - tp)
}

/// `∂L/∂pᵢ = −(tᵢ·U − I·(2pᵢ − tᵢ)) / U²`, zero when `U = 0`.
pub(crate) fn jaccard_grad<T: Scalar>(p: &[T], t: &[T], inter: f64, union: f64, upstream: f64) -> Vec<T> {
    if union == 0.0 {
        return vec![T::zero(); p.len()];
    }
    let u2 = union * union;
    p.iter()
        .zip(t)
        .map(|(&pv, &tv)| {
            let (pv, tv) = (pv.as_f64(), tv.as_f64());
            T::from_f64(-upstream * (tv * union - inter * (2.0 * pv - tv)) / u2)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::new(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0]).unwrap());
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::ones(&[4]));
        let unused = tape.leaf(Tensor::ones(&[3]));
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(unused).unwrap(), &[0.0; 3]);
    }

    #[test]
    fn second_backward_is_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::ones(&[4]));
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::Graph(_))));
        assert!(tape.sum(x).is_err());
    }

    #[test]
    fn backward_needs_scalar() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::ones(&[4]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn dropout_rejects_p_one() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::ones(&[4]));
        let mut rng = rand::rng();
        assert!(tape.dropout(x, 1.0, Mode::Train, &mut rng).is_err());
        assert!(tape.dropout(x, -0.1, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn conv_transpose_rejects_nonpositive_output() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::ones(&[1, 1, 1, 1]));
        let k = tape.leaf(Tensor::ones(&[1, 1, 1, 1]));
        let b = tape.leaf(Tensor::zeros(&[1]));
        assert!(tape.conv_transpose2d(x, k, b, 1).is_err());
    }

    #[test]
    fn maxpool_rejects_odd_sizes() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::ones(&[1, 1, 3, 4]));
        assert!(tape.maxpool2x(x).is_err());
    }

    #[test]
    fn batchnorm_rejects_channel_mismatch() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::ones(&[1, 2, 2, 2]));
        let g = tape.leaf(Tensor::ones(&[3]));
        let b = tape.leaf(Tensor::zeros(&[3]));
        let mut stats = RunningStats::new(3);
        assert!(tape.batchnorm2d(x, g, b, NormStats::Train(&mut stats)).is_err());
    }
}
