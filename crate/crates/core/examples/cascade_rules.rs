//! Runs the three-stage cascade with hand-written intensity rules in place
//! of trained networks. Any `SlicePredictor` can fill a stage, which makes
//! the localization, VOI cropping, resampling and post-processing steps easy
//! to inspect in isolation. Cases whose background overlaps the liver band
//! show where fixed rules break down.
//!
//! `cargo run --release --example cascade_rules`

use hcdnn::autograd::Tensor;
use hcdnn::cascade::{run_cascade, CascadeModels, Ensemble, SlicePredictor, StageModels};
use hcdnn::cli::{generate_phantom, PhantomConfig};
use hcdnn::eval::dice;
use hcdnn::train::{AxialFit, Stage, StageSpec};

/// Soft band-pass on one input channel (normalized intensity).
struct Band {
    channels: usize,
    channel: usize,
    lo: f32,
    hi: f32,
}

impl SlicePredictor for Band {
    fn input_channels(&self) -> usize {
        self.channels
    }

    fn predict(&self, batch: &Tensor) -> hcdnn::Result<Tensor> {
        let [n, c, h, w] = batch.dims4()?;
        let s = |z: f32| 1.0 / (1.0 + (-z / 0.01).exp());
        let mut out = Vec::with_capacity(n * h * w);
        for b in 0..n {
            let plane = &batch.data()[(b * c + self.channel) * h * w..(b * c + self.channel + 1) * h * w];
            out.extend(plane.iter().map(|&v| s(v - self.lo) * s(self.hi - v)));
        }
        Tensor::new(&[n, 1, h, w], out)
    }
}

fn stage(spec: StageSpec, rule: Band) -> hcdnn::Result<StageModels<Band>> {
    Ok(StageModels { spec, ensemble: Ensemble::new(vec![rule])? })
}

fn main() -> hcdnn::Result<()> {
    // Normalized intensity is (HU + 100) / 500: liver sits near 0.36–0.52.
    let models = CascadeModels::new(
        stage(
            StageSpec { stage: Stage::Localize, z_mm: Some(4.0), axial: AxialFit::Resize(32), margin: 0, context_slices: 0 },
            Band { channels: 3, channel: 1, lo: 0.25, hi: 0.56 },
        )?,
        stage(
            StageSpec { stage: Stage::Liver, z_mm: None, axial: AxialFit::VoiSquare(64), margin: 3, context_slices: 0 },
            Band { channels: 3, channel: 1, lo: 0.25, hi: 0.56 },
        )?,
        // Channel 3 is the liver-equalized slice; tumors occupy its low end.
        stage(
            StageSpec { stage: Stage::Tumor, z_mm: None, axial: AxialFit::VoiAligned(8), margin: 3, context_slices: 0 },
            Band { channels: 4, channel: 3, lo: -1.0, hi: 0.08 },
        )?,
    )?;

    let cfg = PhantomConfig { size: [64, 64, 32], spacing: [2.0, 2.0, 3.0], noise_sigma: 4.0, seed: 12, ..Default::default() };
    for i in 0..4 {
        let p = generate_phantom(&cfg, i)?;
        let out = run_cascade(&p.volume, &models)?;
        let liver = dice(&out.labels.liver_mask(), &p.labels.liver_mask())?;
        let coarse = dice(&out.coarse_liver, &p.labels.liver_mask())?;
        let tumor = dice(&out.labels.tumor_mask(), &p.labels.tumor_mask())?;
        println!(
            "{}: {}, coarse liver dice {coarse:.3}, liver dice {liver:.3}, tumor dice {tumor:.3}, burden {:.4} (true {:.4})",
            p.id,
            out.status,
            out.tumor_burden,
            hcdnn::cascade::tumor_burden(&p.labels)
        );
    }
    Ok(())
}
