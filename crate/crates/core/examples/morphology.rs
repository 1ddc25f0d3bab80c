//! Connected components, the largest-component filter, the liver VOI and
//! liver-restricted histogram equalization on a small synthetic mask.
//!
//! `cargo run --release --example morphology`

use hcdnn::morph::{
    bounding_box, connected_components_3d, largest_component, liver_voi, masked_histogram_equalization, Connectivity,
    EQUALIZATION_BINS,
};
use hcdnn::volio::{Mask, Volume};

fn main() -> hcdnn::Result<()> {
    let size = [40, 32, 16];
    let ball = |c: [f64; 3], r: f64| move |x: usize, y: usize, z: usize| {
        (x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + (z as f64 - c[2]).powi(2) <= r * r
    };
    let (organ, speck) = (ball([18.0, 16.0, 8.0], 7.0), ball([34.0, 4.0, 2.0], 1.5));
    let mask = Mask::from_fn(size, [1.0, 1.0, 2.5], |x, y, z| organ(x, y, z) || speck(x, y, z) || [(2, 28, 2), (3, 29, 3)].contains(&(x, y, z)))?;

    for conn in [Connectivity::Six, Connectivity::TwentySix] {
        let cc = connected_components_3d(&mask, conn);
        println!("{conn}-connectivity: {} components, sizes {:?}", cc.count(), cc.sizes);
    }
    let kept = largest_component(&mask, Connectivity::TwentySix);
    println!("largest component keeps {} of {} voxels", kept.count(), mask.count());

    let tight = bounding_box(&kept).expect("non-empty");
    let voi = liver_voi(&kept, 3)?;
    println!("bounding box {:?}..={:?}, VOI with margin 3: {:?}..={:?} ({:?} voxels)", tight.lo, tight.hi, voi.lo, voi.hi, voi.size());

    // A low-contrast ramp inside the organ; equalization spreads it over [0, 1].
    let v = Volume::from_fn(size, mask.spacing(), |x, _, _| 0.40 + 0.002 * x as f32)?;
    let eq = masked_histogram_equalization(&v, &kept, EQUALIZATION_BINS)?;
    let range = |g: &Volume| {
        let vals: Vec<f32> = g.data().iter().zip(kept.data()).filter(|(_, &m)| m).map(|(&v, _)| v).collect();
        (vals.iter().copied().fold(f32::MAX, f32::min), vals.iter().copied().fold(f32::MIN, f32::max))
    };
    println!("in-organ intensity range {:?} -> {:?} after equalization", range(&v), range(&eq));
    let cropped = voi.crop(&eq)?;
    println!("cropped equalized VOI {:?}", cropped.size());
    Ok(())
}
