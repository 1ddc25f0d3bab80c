//! The mini-batch training loop.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::stage::SliceSample;
use crate::augment::{augment_pair, sample_params, sample_seed};
use crate::autograd::{AdamState, Tape, Tensor};
use crate::error::{invalid, shape_err, Error, Result};
use crate::nn::{CdnnModel, ModelConfig};

/// Splits `ids` into `k` disjoint folds whose sizes differ by at most one.
pub fn kfold_split<S: Clone>(ids: &[S], k: usize, seed: u64) -> Result<Vec<Vec<S>>> {
    if k == 0 || ids.len() < k {
        return Err(invalid!("{} cases cannot fill {k} folds", ids.len()));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (i, &j) in order.iter().enumerate() {
        folds[i % k].push(ids[j].clone());
    }
    Ok(folds)
}

/// Per-epoch curves.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    /// Mean mini-batch loss.
    pub loss: Vec<f64>,
    /// Pooled Dice of the thresholded predictions on the validation set.
    pub val_dice: Vec<f64>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,val_dice\n");
        for (e, (l, d)) in self.loss.iter().zip(&self.val_dice).enumerate() {
            out.push_str(&format!("{},{l:.8},{d:.8}\n", e + 1));
        }
        out
    }
}

/// Progress notifications.
#[derive(Clone, Debug, PartialEq)]
pub enum TrainEvent {
    Batch { epoch: usize, batch: usize, loss: f64 },
    Epoch { epoch: usize, loss: f64, val_dice: f64 },
}

/// Stacks samples into an `N×C×H×W` input and `N×1×H×W` target.
pub fn stack_batch(samples: &[(Tensor, Tensor)]) -> Result<(Tensor, Tensor)> {
    let Some((first_x, first_t)) = samples.first() else {
        return Err(invalid!("empty batch"));
    };
    let (xs, ts) = (first_x.shape().to_vec(), first_t.shape().to_vec());
    let mut x = Vec::with_capacity(samples.len() * first_x.len());
    let mut t = Vec::with_capacity(samples.len() * first_t.len());
    for (a, b) in samples {
        if a.shape() != xs.as_slice() || b.shape() != ts.as_slice() {
            return Err(shape_err!("batch mixes shapes {xs:?} and {:?}", a.shape()));
        }
        x.extend_from_slice(a.data());
        t.extend_from_slice(b.data());
    }
    let n = samples.len();
    Ok((Tensor::new(&[n, xs[0], xs[1], xs[2]], x)?, Tensor::new(&[n, ts[0], ts[1], ts[2]], t)?))
}

/// Mini-batches of equal spatial size: shuffled sample order, grouped by
/// size, in shuffled batch order.
fn plan_batches<R: Rng + ?Sized>(samples: &[SliceSample], batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    let mut buckets: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for i in order {
        buckets.entry(samples[i].hw()).or_default().push(i);
    }
    let mut batches: Vec<Vec<usize>> =
        buckets.values().flat_map(|b| b.chunks(batch_size).map(<[usize]>::to_vec)).collect();
    batches.shuffle(rng);
    batches
}

/// Pooled Dice of `predict ≥ 0.5` against the targets.
pub fn evaluate_dice(model: &CdnnModel, samples: &[SliceSample], batch_size: usize) -> Result<f64> {
    let (mut inter, mut total) = (0usize, 0usize);
    let idx: Vec<usize> = (0..samples.len()).collect();
    let mut buckets: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for i in idx {
        buckets.entry(samples[i].hw()).or_default().push(i);
    }
    for chunk in buckets.values().flat_map(|b| b.chunks(batch_size.max(1))) {
        let pairs: Vec<(Tensor, Tensor)> =
            chunk.iter().map(|&i| (samples[i].channels.clone(), samples[i].target.clone())).collect();
        let (x, t) = stack_batch(&pairs)?;
        let p = model.predict(&x)?;
        for (&pv, &tv) in p.data().iter().zip(t.data()) {
            let (a, b) = (pv >= 0.5, tv > 0.5);
            inter += (a && b) as usize;
            total += a as usize + b as usize;
        }
    }
    Ok(if total == 0 { 1.0 } else { 2.0 * inter as f64 / total as f64 })
}

fn strided_subset(samples: &[SliceSample], cap: usize) -> Vec<SliceSample> {
    if samples.len() <= cap {
        return samples.to_vec();
    }
    (0..cap).map(|i| samples[i * samples.len() / cap].clone()).collect()
}

/// Trains a freshly initialized model.
///
/// Each epoch shuffles the samples, draws fresh augmentation for every
/// sample of every mini-batch, minimizes the Jaccard loss with Adam and
/// records the mean loss plus validation Dice. With no `validation` set an
/// evenly strided subset of the training samples is scored instead.
pub fn train_model(
    samples: &[SliceSample],
    validation: Option<&[SliceSample]>,
    model_config: &ModelConfig,
    config: &TrainConfig,
    mut observer: impl FnMut(&TrainEvent),
) -> Result<(CdnnModel, TrainHistory)> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Dataset("no training samples".into()));
    }
    if let Some(s) = samples.iter().find(|s| s.channels.shape()[0] != model_config.input_channels) {
        return Err(shape_err!(
            "sample from case {} has {} channels, model `{}` expects {}",
            s.case_id,
            s.channels.shape()[0],
            model_config.name,
            model_config.input_channels
        ));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(sample_seed(config.seed, u64::MAX, 0));
    let mut model = CdnnModel::build(model_config, &mut init_rng)?;
    let mut adam = AdamState::new(model.params().iter().map(|(_, t)| t.len())).with_learning_rate(config.learning_rate);
    let owned_val;
    let val = match validation {
        Some(v) if !v.is_empty() => v,
        _ => {
            owned_val = strided_subset(samples, config.validation_samples.max(1));
            &owned_val
        }
    };
    let mut history = TrainHistory::default();
    for epoch in 0..config.epochs {
        let mut order_rng = ChaCha8Rng::seed_from_u64(sample_seed(config.seed, epoch as u64, u64::MAX));
        let batches = plan_batches(samples, config.batch_size, &mut order_rng);
        let mut losses = Vec::with_capacity(batches.len());
        for (b, batch) in batches.iter().enumerate() {
            let mut pairs = Vec::with_capacity(batch.len());
            for &i in batch {
                let s = &samples[i];
                let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(config.seed, epoch as u64, i as u64));
                let (c, h, w) = (s.channels.shape()[0], s.channels.shape()[1], s.channels.shape()[2]);
                let params = sample_params(&config.augment, c, h, w, &mut rng);
                pairs.push(augment_pair(&s.channels, &s.target, &params)?);
            }
            let (x, t) = stack_batch(&pairs)?;
            let mut tape = Tape::new();
            let xv = tape.leaf(x);
            let fwd = model.forward_train(&mut tape, xv, &mut order_rng)?;
            let loss = tape.jaccard_loss(fwd.output, &t)?;
            let value = tape.value(loss).data()[0] as f64;
            if !value.is_finite() {
                return Err(Error::Divergence { epoch: epoch + 1, batch: b + 1, loss: value });
            }
            tape.backward(loss)?;
            let grads: Vec<Vec<f32>> = fwd
                .params
                .iter()
                .map(|&v| tape.grad(v).map(<[f32]>::to_vec).ok_or_else(|| Error::Graph("missing gradient".into())))
                .collect::<Result<_>>()?;
            let grad_refs: Vec<&[f32]> = grads.iter().map(Vec::as_slice).collect();
            let mut params: Vec<&mut Tensor> = model.params_mut().collect();
            adam.step(&mut params, &grad_refs)?;
            losses.push(value);
            observer(&TrainEvent::Batch { epoch: epoch + 1, batch: b + 1, loss: value });
        }
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        let dice = evaluate_dice(&model, val, config.batch_size)?;
        history.loss.push(mean);
        history.val_dice.push(dice);
        log::info!("epoch {}: loss {mean:.4}, validation dice {dice:.4}", epoch + 1);
        observer(&TrainEvent::Epoch { epoch: epoch + 1, loss: mean, val_dice: dice });
    }
    Ok((model, history))
}
