//! Generates synthetic CT cases and prints their liver, tumor and
//! intensity statistics.
//!
//! `cargo run --release --example phantoms -- [count] [out_dir]`

use hcdnn::cascade::tumor_burden;
use hcdnn::cli::{case_paths, cmd_phantom, PhantomConfig};
use hcdnn::morph::{connected_components_3d, Connectivity};
use hcdnn::volio::{read_labels, read_volume, LIVER, TUMOR};

fn main() -> hcdnn::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let count = args.first().and_then(|a| a.parse().ok()).unwrap_or(5);
    let out = args.get(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("hcdnn_phantoms"));
    let cfg = PhantomConfig { count, size: [96, 96, 48], spacing: [1.5, 1.5, 3.0], seed: 1, ..Default::default() };
    let ids = cmd_phantom(&cfg, &out)?;
    println!("wrote {} cases to {}", ids.len(), out.display());
    for id in &ids {
        let (v, l) = case_paths(&out, id);
        let (hu, labels) = (read_volume(&v)?, read_labels(&l)?);
        let mean = |label: u8| {
            let vals: Vec<f32> = hu.data().iter().zip(labels.data()).filter(|(_, &x)| x == label).map(|(&h, _)| h).collect();
            if vals.is_empty() { f32::NAN } else { vals.iter().sum::<f32>() / vals.len() as f32 }
        };
        let lesions = connected_components_3d(&labels.tumor_mask(), Connectivity::TwentySix).count();
        println!(
            "{id}: liver {} voxels at {:.0} HU, {lesions} lesion(s) at {:.0} HU, background {:.0} HU, burden {:.4}",
            labels.liver_mask().count(),
            mean(LIVER),
            mean(TUMOR),
            mean(0),
            tumor_burden(&labels)
        );
    }
    Ok(())
}
