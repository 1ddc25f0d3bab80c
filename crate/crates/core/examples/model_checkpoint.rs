//! Builds the two network presets, prints their layer plans and sizes,
//! and round-trips a checkpoint through disk.
//!
//! `cargo run --release --example model_checkpoint`

use hcdnn::autograd::Tensor;
use hcdnn::nn::{build_cdnn, load_checkpoint, save_checkpoint, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hcdnn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for cfg in [ModelConfig::cdnn_i(3), ModelConfig::cdnn_ii(3)] {
        let model = build_cdnn(&cfg, &mut rng)?;
        println!("{}: {} layers, {} parameters", cfg.name, model.layer_count(), model.param_count());
        for layer in model.layer_plan() {
            println!("  {layer}");
        }
    }

    let small = build_cdnn(&ModelConfig::reduced("small", 3, [8, 16], 3), &mut rng)?;
    let path = std::env::temp_dir().join("hcdnn_example_small.ckpt");
    save_checkpoint(&small, &path)?;
    let back = load_checkpoint(&path)?;
    println!("checkpoint {} ({} bytes) restores an identical model: {}", path.display(), std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0), back == small);

    let x = Tensor::full(&[2, 3, 32, 32], 0.5);
    let p = back.predict(&x)?;
    let mean = p.data().iter().sum::<f32>() / p.len() as f32;
    println!("untrained prediction {:?}, mean probability {mean:.3}", p.shape());
    Ok(())
}
