//! Training loop, fold splitting and ensemble averaging.

use std::collections::BTreeSet;

use hcdnn::augment::AugmentConfig;
use hcdnn::autograd::Tensor;
use hcdnn::cascade::{Ensemble, SlicePredictor};
use hcdnn::nn::ModelConfig;
use hcdnn::train::{kfold_split, train_ensemble, train_model, EnsembleKind, SliceSample, Stage, TrainConfig, TrainEvent};
use proptest::prelude::*;

/// A bright disc on a dim background, target = the disc.
fn disc_sample(i: usize, n: usize) -> SliceSample {
    let (cx, cy) = (5.0 + (i % 3) as f64 * 3.0, 5.0 + (i / 3 % 3) as f64 * 3.0);
    let r = 3.0 + (i % 2) as f64;
    let inside = |x: usize, y: usize| ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt() <= r;
    let mut img = Vec::with_capacity(n * n);
    let mut tgt = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let d = inside(x, y);
            img.push(if d { 0.8 } else { 0.2 } + 0.02 * (((x * 7 + y * 3 + i) % 5) as f32 - 2.0));
            tgt.push(d as u8 as f32);
        }
    }
    SliceSample {
        channels: Tensor::new(&[1, n, n], img).unwrap(),
        target: Tensor::new(&[1, n, n], tgt).unwrap(),
        case_id: format!("case{:03}", i / 2),
        slice: i,
        stage: Stage::Liver,
    }
}

fn quick_config(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 2, seed: 4, augment: AugmentConfig::disabled(), ..TrainConfig::default() }
}

#[test]
fn tiny_model_overfits_eight_samples() {
    let samples: Vec<SliceSample> = (0..8).map(|i| disc_sample(i, 16)).collect();
    // Without dropout the training loss measures pure fit.
    let model = ModelConfig { dropout_sites: Default::default(), ..ModelConfig::reduced("tiny", 1, [8, 16], 3) };
    let mut batches = 0;
    let (trained, history) = train_model(&samples, None, &model, &quick_config(50), |e| {
        if let TrainEvent::Batch { .. } = e {
            batches += 1;
        }
    })
    .unwrap();
    assert_eq!(batches, 50 * 4);
    assert_eq!(history.loss.len(), 50);
    let last = *history.loss.last().unwrap();
    assert!(last < 0.1, "final loss {last:.4}; curve {:?}", history.loss);
    assert!(last < history.loss[0]);
    assert!(*history.val_dice.last().unwrap() > 0.9);

    let batch = Tensor::new(&[1, 1, 16, 16], samples[0].channels.data().to_vec()).unwrap();
    let p = trained.predict(&batch).unwrap();
    assert_eq!(p.shape(), &[1, 1, 16, 16]);
    assert!(p.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn training_is_reproducible_and_seed_sensitive() {
    let samples: Vec<SliceSample> = (0..4).map(|i| disc_sample(i, 8)).collect();
    let model = ModelConfig::reduced("tiny", 1, [2, 4], 3);
    let cfg = TrainConfig { augment: AugmentConfig::default(), ..quick_config(2) };
    let a = train_model(&samples, None, &model, &cfg, |_| {}).unwrap();
    let b = train_model(&samples, None, &model, &cfg, |_| {}).unwrap();
    assert_eq!(a, b);
    let c = train_model(&samples, None, &model, &TrainConfig { seed: 5, ..cfg }, |_| {}).unwrap();
    assert_ne!(a.0, c.0);
}

#[test]
fn cross_validation_members_never_see_their_fold() {
    let samples: Vec<SliceSample> = (0..10).map(|i| disc_sample(i, 8)).collect();
    let ids: Vec<String> = (0..5).map(|i| format!("case{i:03}")).collect();
    let model = ModelConfig::reduced("tiny", 1, [2, 2], 1);
    let cfg = TrainConfig { ensemble: EnsembleKind::CrossValidation, ..quick_config(1) };
    let members = train_ensemble(&samples, &ids, &model, &cfg, |_, _| {}).unwrap();
    assert_eq!(members.len(), 6);
    let folds = kfold_split(&ids, 5, cfg.seed).unwrap();
    for (k, m) in members[..5].iter().enumerate() {
        assert_eq!(m.held_out, Some(k));
        let held: BTreeSet<&String> = folds[k].iter().collect();
        assert!(m.training_ids.iter().all(|id| !held.contains(id)));
        assert_eq!(m.training_ids.len() + folds[k].len(), ids.len());
    }
    assert_eq!(members[5].held_out, None);
    assert_eq!(members[5].training_ids, ids);
    // Members are seeded independently.
    assert_ne!(members[0].model, members[1].model);

    let single = train_ensemble(&samples, &ids, &model, &TrainConfig { ensemble: EnsembleKind::Single, ..cfg }, |_, _| {}).unwrap();
    assert_eq!(single.len(), 1);
}

struct Constant(f32);

impl SlicePredictor for Constant {
    fn input_channels(&self) -> usize {
        2
    }

    fn predict(&self, batch: &Tensor) -> hcdnn::Result<Tensor> {
        let [n, _, h, w] = batch.dims4()?;
        Ok(Tensor::full(&[n, 1, h, w], self.0))
    }
}

#[test]
fn ensemble_output_is_the_member_mean() {
    let e = Ensemble::new(vec![Constant(0.1), Constant(0.4), Constant(1.0)]).unwrap();
    let out = e.predict(&Tensor::zeros(&[3, 2, 4, 4])).unwrap();
    assert_eq!(out.shape(), &[3, 1, 4, 4]);
    assert!(out.data().iter().all(|&v| (v - 0.5).abs() < 1e-6));
    assert!(e.predict(&Tensor::zeros(&[1, 3, 4, 4])).is_err());
    assert!(Ensemble::<Constant>::new(vec![]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn folds_partition_the_cases(n in 2usize..40, k in 2usize..8, seed in any::<u64>()) {
        prop_assume!(n >= k);
        let ids: Vec<usize> = (0..n).collect();
        let folds = kfold_split(&ids, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort();
        prop_assert_eq!(all, ids.clone());
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(kfold_split(&ids, k, seed).unwrap(), folds);
    }
}
