//! Writes a synthetic CT volume as a MetaImage pair, reads it back and
//! runs the intensity and geometry preprocessing used by every stage.
//!
//! `cargo run --release --example volume_io`

use hcdnn::volio::{
    clamp_hu, normalize_intensity, read_metaimage, read_volume, resample_z, resize_axial, stack_slices, write_volume,
    ElementType, Interp, MetaHeader, Volume,
};

fn main() -> hcdnn::Result<()> {
    // A 1.5 mm-thick stack with a bright sphere.
    let hu = Volume::from_fn([48, 40, 20], [0.8, 0.8, 1.5], |x, y, z| {
        let d = ((x as f32 - 24.0).powi(2) + (y as f32 - 20.0).powi(2) + ((z as f32 - 10.0) * 1.9).powi(2)).sqrt();
        if d < 12.0 {
            140.0
        } else {
            -600.0
        }
    })?;
    let dir = std::env::temp_dir().join("hcdnn_example_io");
    std::fs::create_dir_all(&dir).ok();
    let path = dir.join("sphere.mhd");
    write_volume(&hu, &path, ElementType::Short)?;
    let header_text = std::fs::read_to_string(&path).unwrap_or_default();
    let header = MetaHeader::parse(&header_text)?;
    println!("{}:\n{header_text}voxels: {}", path.display(), header.voxel_count());
    println!("on-disk element type: {}", read_metaimage(&path)?.element_type().as_str());

    let back = read_volume(&path)?;
    println!("round trip exact: {}", back == hu);

    let norm = normalize_intensity(&clamp_hu(&back));
    let (lo, hi) = norm.data().iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    println!("clamped to [-100, 400] HU and scaled to [{lo}, {hi}]");

    let thick = resample_z(&norm, 3.0, Interp::Linear)?;
    println!("resampled to 3 mm: {:?} at {:?}", thick.size(), thick.spacing());
    let small = resize_axial(&thick, [32, 32], Interp::Linear)?;
    println!("resized axially: {:?} at {:?}", small.size(), small.spacing());
    let slab = stack_slices(&small, 0)?;
    println!("first 2.5-D slab {:?} (edge slice replicated)", slab.shape());
    Ok(())
}
