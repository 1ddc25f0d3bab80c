//! Draws per-sample augmentation parameters and applies them to a slab and
//! its target, as the training loop does for every mini-batch sample.
//!
//! `cargo run --release --example augmentation`

use hcdnn::augment::{augment_pair, sample_params, sample_seed, AugmentConfig};
use hcdnn::autograd::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hcdnn::Result<()> {
    let (h, w) = (32, 32);
    let disc = |x: usize, y: usize| ((x as f32 - 12.0).powi(2) + (y as f32 - 16.0).powi(2)) < 64.0;
    let mut slab = Vec::new();
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                slab.push(if disc(x, y) { 0.6 + 0.05 * c as f32 } else { 0.2 });
            }
        }
    }
    let target: Vec<f32> = (0..h * w).map(|i| disc(i % w, i / w) as u8 as f32).collect();
    let (slab, target) = (Tensor::new(&[3, h, w], slab)?, Tensor::new(&[1, h, w], target)?);
    let cfg = AugmentConfig::default();
    println!("config {cfg:?}");

    let centroid = |t: &Tensor| {
        let (mut sx, mut n) = (0.0, 0.0);
        for (i, &v) in t.data().iter().enumerate() {
            sx += v as f64 * (i % w) as f64;
            n += v as f64;
        }
        (sx / n.max(1.0), n)
    };
    println!("original target: centroid x {:.1}, area {}", centroid(&target).0, centroid(&target).1);
    for epoch in 0..4 {
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(7, epoch, 0));
        let p = sample_params(&cfg, 3, h, w, &mut rng);
        let (s, t) = augment_pair(&slab, &target, &p)?;
        let (cx, area) = centroid(&t);
        let mean = s.data().iter().sum::<f32>() / s.len() as f32;
        println!(
            "epoch {epoch}: flip {}, shift ({:+.1}, {:+.1}) px, rotate {:+.1} deg, scale {:.3}, contrast {:?} -> centroid x {cx:.1}, area {area}, slab mean {mean:.3}",
            p.flip, p.shift.0, p.shift.1, p.rotate_deg, p.scale, p.contrast.iter().map(|c| format!("{c:.2}")).collect::<Vec<_>>()
        );
    }
    Ok(())
}
