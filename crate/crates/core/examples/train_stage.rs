//! Builds a stage-2 slice dataset from in-memory phantoms and trains one
//! reduced network on it, printing the loss and validation Dice curves.
//!
//! `cargo run --release --example train_stage -- [epochs]`

use hcdnn::cli::{generate_phantom, PhantomConfig};
use hcdnn::nn::ModelConfig;
use hcdnn::train::{build_stage_dataset, train_model, AxialFit, Case, Stage, StageSpec, TrainConfig, TrainEvent};

fn main() -> hcdnn::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(8);
    let phantoms = PhantomConfig { size: [48, 48, 24], spacing: [2.5, 2.5, 4.0], seed: 3, ..Default::default() };
    let cases: Vec<Case> = (0..8)
        .map(|i| generate_phantom(&phantoms, i).map(|p| Case { id: p.id, volume: p.volume, labels: p.labels }))
        .collect::<hcdnn::Result<_>>()?;
    let spec = StageSpec { stage: Stage::Liver, z_mm: None, axial: AxialFit::VoiSquare(48), margin: 3, context_slices: 0 };
    let samples = build_stage_dataset(&cases, &spec)?;
    let (train, val): (Vec<_>, Vec<_>) = samples.into_iter().partition(|s| s.case_id.as_str() < "case006");
    println!("{} training and {} validation slices of {:?}", train.len(), val.len(), train[0].channels.shape());

    let model = ModelConfig::reduced("stage2-small", spec.channels(), [8, 16], 3);
    let config = TrainConfig { epochs, batch_size: 8, seed: 1, ..TrainConfig::default() };
    let (trained, history) = train_model(&train, Some(&val), &model, &config, |e| {
        if let TrainEvent::Epoch { epoch, loss, val_dice } = e {
            println!("epoch {epoch:2}: jaccard loss {loss:.4}, held-out dice {val_dice:.4}");
        }
    })?;
    println!("{} parameters; history csv:\n{}", trained.param_count(), history.to_csv());
    Ok(())
}
