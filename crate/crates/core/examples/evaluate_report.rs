//! Scores deliberately perturbed segmentations against phantom ground
//! truth and prints the evaluation report and its CSV companion.
//!
//! `cargo run --release --example evaluate_report`

use hcdnn::cli::{generate_phantom, PhantomConfig};
use hcdnn::eval::{evaluate_case, render_report, SummaryReport};
use hcdnn::volio::{LabelVolume, Mask};

/// Shifts a mask by `dx` voxels along x.
fn shifted(m: &Mask, dx: isize) -> hcdnn::Result<Mask> {
    let nx = m.size()[0] as isize;
    Mask::from_fn(m.size(), m.spacing(), |x, y, z| {
        let sx = x as isize - dx;
        (0..nx).contains(&sx) && m.get(sx as usize, y, z)
    })
}

/// Removes foreground voxels that have a background face neighbour.
fn eroded(m: &Mask) -> hcdnn::Result<Mask> {
    let [nx, ny, nz] = m.size();
    Mask::from_fn(m.size(), m.spacing(), |x, y, z| {
        m.get(x, y, z)
            && x > 0 && y > 0 && z > 0 && x + 1 < nx && y + 1 < ny && z + 1 < nz
            && m.get(x - 1, y, z) && m.get(x + 1, y, z)
            && m.get(x, y - 1, z) && m.get(x, y + 1, z)
            && m.get(x, y, z - 1) && m.get(x, y, z + 1)
    })
}

fn main() -> hcdnn::Result<()> {
    let cfg = PhantomConfig { size: [64, 64, 32], spacing: [1.5, 1.5, 3.0], seed: 21, ..Default::default() };
    let mut rows = Vec::new();
    for i in 0..4 {
        let p = generate_phantom(&cfg, i)?;
        let (liver, tumor) = (p.labels.liver_mask(), p.labels.tumor_mask());
        let pred: LabelVolume = match i {
            0 => p.labels.clone(),
            1 => LabelVolume::from_masks(&shifted(&liver, 2)?, &shifted(&tumor, 2)?)?,
            2 => LabelVolume::from_masks(&eroded(&liver)?, &eroded(&tumor)?)?,
            _ => LabelVolume::from_masks(&liver, &tumor.map(|_| false))?,
        };
        rows.push(evaluate_case(&p.id, &pred, &p.labels)?);
    }
    let (text, csv) = render_report(&rows)?;
    println!("exact copy, 2-voxel shift, one-voxel erosion, tumors dropped:\n\n{text}\n{csv}");
    let s = SummaryReport::new(rows)?;
    println!("global liver dice {:.4}, tumor burden max error {:.4}", s.liver.dice_global, s.burden_max_error);
    Ok(())
}
