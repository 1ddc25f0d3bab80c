//! Soft Jaccard distance between a probability map and a binary target.

use crate::autograd::tape::{jaccard_grad, jaccard_terms};
use crate::autograd::{Scalar, Tensor};
use crate::error::{invalid, shape_err, Result};

/// Sigmoid outputs `N×1×H×W`, every value in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionBatch<T = f32>(Tensor<T>);

/// Binary targets `N×1×H×W`.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetBatch<T = f32>(Tensor<T>);

/// Loss in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct LossValue(pub f64);

fn check_nchw1(shape: &[usize]) -> Result<()> {
    match shape {
        [_, 1, _, _] => Ok(()),
        other => Err(shape_err!("expected an N×1×H×W map, got {other:?}")),
    }
}

impl<T: Scalar> PredictionBatch<T> {
    pub fn new(t: Tensor<T>) -> Result<Self> {
        check_nchw1(t.shape())?;
        if t.data().iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
            return Err(invalid!("predictions must lie in [0, 1]"));
        }
        Ok(Self(t))
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }
}

impl<T: Scalar> TargetBatch<T> {
    pub fn new(t: Tensor<T>) -> Result<Self> {
        check_nchw1(t.shape())?;
        if t.data().iter().any(|&v| v != T::zero() && v != T::one()) {
            return Err(invalid!("targets must be binary"));
        }
        Ok(Self(t))
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }
}

/// `1 − Σtp / (Σt² + Σp² − Σtp)` over the whole batch; 0 when both maps are
/// empty.
pub fn jaccard_loss<T: Scalar>(pred: &PredictionBatch<T>, target: &TargetBatch<T>) -> Result<LossValue> {
    if pred.0.shape() != target.0.shape() {
        return Err(shape_err!("prediction {:?} vs target {:?}", pred.0.shape(), target.0.shape()));
    }
    let (i, u) = jaccard_terms(pred.0.data(), target.0.data());
    Ok(LossValue(if u == 0.0 { 0.0 } else { 1.0 - i / u }))
}

/// Closed-form `∂L/∂p`.
pub fn jaccard_loss_grad<T: Scalar>(pred: &PredictionBatch<T>, target: &TargetBatch<T>) -> Result<Vec<T>> {
    if pred.0.shape() != target.0.shape() {
        return Err(shape_err!("prediction {:?} vs target {:?}", pred.0.shape(), target.0.shape()));
    }
    let (i, u) = jaccard_terms(pred.0.data(), target.0.data());
    Ok(jaccard_grad(pred.0.data(), target.0.data(), i, u, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(p: &[f64], t: &[f64]) -> (PredictionBatch<f64>, TargetBatch<f64>) {
        let shape = [1, 1, 1, p.len()];
        (
            PredictionBatch::new(Tensor::new(&shape, p.to_vec()).unwrap()).unwrap(),
            TargetBatch::new(Tensor::new(&shape, t.to_vec()).unwrap()).unwrap(),
        )
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let (p, t) = batch(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0]);
        assert_eq!(jaccard_loss(&p, &t).unwrap().0, 0.0);
    }

    #[test]
    fn empty_prediction_is_one() {
        let (p, t) = batch(&[0.0, 0.0, 0.0], &[1.0, 0.0, 1.0]);
        assert_eq!(jaccard_loss(&p, &t).unwrap().0, 1.0);
    }

    #[test]
    fn both_empty_is_zero_with_zero_gradient() {
        let (p, t) = batch(&[0.0, 0.0], &[0.0, 0.0]);
        assert_eq!(jaccard_loss(&p, &t).unwrap().0, 0.0);
        assert_eq!(jaccard_loss_grad(&p, &t).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn half_example() {
        // I = 0.5, U = 1 + 0.5 − 0.5 = 1.
        let (p, t) = batch(&[0.5, 0.5], &[1.0, 0.0]);
        assert!((jaccard_loss(&p, &t).unwrap().0 - 0.5).abs() < 1e-15);
        let g = jaccard_loss_grad(&p, &t).unwrap();
        // −(t·U − I·(2p − t)) / U²
        assert!((g[0] - (-(1.0 - 0.5 * 0.0))).abs() < 1e-15);
        assert!((g[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        let shape = [1, 1, 1, 2];
        assert!(TargetBatch::new(Tensor::new(&shape, vec![0.5f32, 1.0]).unwrap()).is_err());
        assert!(PredictionBatch::new(Tensor::new(&shape, vec![1.5f32, 0.0]).unwrap()).is_err());
        assert!(PredictionBatch::new(Tensor::new(&[1, 2, 1, 1], vec![0.5f32, 0.0]).unwrap()).is_err());
    }
}
