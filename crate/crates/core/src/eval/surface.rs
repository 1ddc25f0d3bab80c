//! Symmetric surface distances via a separable Euclidean distance
//! transform.

use crate::error::{Error, Result};
use crate::volio::{Grid, Mask};

/// Foreground voxels with at least one face neighbour outside the mask.
/// The volume border counts as outside.
pub fn surface_voxels(mask: &Mask) -> Vec<[usize; 3]> {
    let [nx, ny, nz] = mask.size();
    let mut out = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if !mask.get(x, y, z) {
                    continue;
                }
                let border = x == 0 || y == 0 || z == 0 || x + 1 == nx || y + 1 == ny || z + 1 == nz;
                if border
                    || !mask.get(x - 1, y, z)
                    || !mask.get(x + 1, y, z)
                    || !mask.get(x, y - 1, z)
                    || !mask.get(x, y + 1, z)
                    || !mask.get(x, y, z - 1)
                    || !mask.get(x, y, z + 1)
                {
                    out.push([x, y, z]);
                }
            }
        }
    }
    out
}

/// Centre-to-centre distance in mm.
#[inline]
pub fn voxel_distance(a: [usize; 3], b: [usize; 3], spacing: [f64; 3]) -> f64 {
    let d = |i: usize| (a[i] as f64 - b[i] as f64) * spacing[i];
    (d(0) * d(0) + d(1) * d(1) + d(2) * d(2)).sqrt()
}

/// Lower envelope of parabolas `w·(q − p)² + f(p)` over the finite
/// entries of `f` (Felzenszwalb and Huttenlocher). Writes, for every `q`,
/// the minimizing `p` or `usize::MAX` when `f` has no finite entry.
fn envelope_1d(f: &[f64], w: f64, arg: &mut [usize], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    let n = f.len();
    v.clear();
    z.clear();
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let key = |p: usize| f[p] + w * (p * p) as f64;
        loop {
            let Some(&p) = v.last() else {
                v.push(q);
                z.push(f64::NEG_INFINITY);
                break;
            };
            let s = (key(q) - key(p)) / (2.0 * w * (q - p) as f64);
            if s <= *z.last().expect("z tracks v") {
                v.pop();
                z.pop();
            } else {
                v.push(q);
                z.push(s);
                break;
            }
        }
    }
    if v.is_empty() {
        arg.fill(usize::MAX);
        return;
    }
    let mut k = 0;
    for (q, a) in arg.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        *a = v[k];
    }
}

/// For every voxel, the index of the nearest voxel of `targets` (in mm),
/// or `None` when `targets` is empty.
pub fn nearest_feature(targets: &Mask) -> Option<Grid<usize>> {
    if !targets.any() {
        return None;
    }
    let size = targets.size();
    let spacing = targets.spacing();
    let mut feature: Vec<usize> = targets.data().iter().enumerate().map(|(i, &b)| if b { i } else { usize::MAX }).collect();
    let coord = |i: usize| targets.coords(i);
    let (mut v, mut z) = (Vec::new(), Vec::new());
    for axis in 0..3 {
        let n = size[axis];
        let stride = [1, size[0], size[0] * size[1]][axis];
        let w = spacing[axis] * spacing[axis];
        let mut f = vec![0.0; n];
        let mut arg = vec![0usize; n];
        let mut line_feat = vec![0usize; n];
        for start in 0..feature.len() {
            if !(start / stride).is_multiple_of(n) {
                continue;
            }
            // f(p): squared distance so far, excluding this axis.
            for p in 0..n {
                let fi = feature[start + p * stride];
                line_feat[p] = fi;
                f[p] = if fi == usize::MAX {
                    f64::INFINITY
                } else {
                    let (a, b) = (coord(fi), coord(start + p * stride));
                    (0..3)
                        .filter(|&ax| ax != axis)
                        .map(|ax| ((a[ax] as f64 - b[ax] as f64) * spacing[ax]).powi(2))
                        .sum()
                };
            }
            envelope_1d(&f, w, &mut arg, &mut v, &mut z);
            for q in 0..n {
                feature[start + q * stride] = if arg[q] == usize::MAX { usize::MAX } else { line_feat[arg[q]] };
            }
        }
    }
    Grid::new(size, spacing, feature).ok()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceDistances {
    /// Mean over both directed sets.
    pub assd_mm: f64,
    /// Maximum over both directed sets.
    pub mssd_mm: f64,
    /// Root mean square over both directed sets.
    pub rmsd_mm: f64,
}

/// Directed distances from every surface voxel of `from` to the surface of
/// `to` (spacing taken from the grids).
pub fn directed_surface_distances(from: &Mask, to: &Mask) -> Result<Vec<f64>> {
    from.check_same_grid(to)?;
    let to_surface = surface_voxels(to);
    let mut target = to.map(|_| false);
    for p in &to_surface {
        target.set(p[0], p[1], p[2], true);
    }
    let feature = nearest_feature(&target).ok_or_else(|| Error::EmptyMask("surface target is empty".into()))?;
    let spacing = from.spacing();
    Ok(surface_voxels(from)
        .into_iter()
        .map(|a| voxel_distance(a, to.coords(feature.get(a[0], a[1], a[2])), spacing))
        .collect())
}

/// ASSD, MSSD and RMSD between two non-empty masks.
pub fn surface_distances(pred: &Mask, gt: &Mask) -> Result<SurfaceDistances> {
    pred.check_same_grid(gt)?;
    if !pred.any() || !gt.any() {
        return Err(Error::EmptyMask("surface distances need two non-empty masks".into()));
    }
    let mut all = directed_surface_distances(pred, gt)?;
    all.extend(directed_surface_distances(gt, pred)?);
    Ok(summarize(&all))
}

pub(crate) fn summarize(d: &[f64]) -> SurfaceDistances {
    let n = d.len() as f64;
    SurfaceDistances {
        assd_mm: d.iter().sum::<f64>() / n,
        mssd_mm: d.iter().copied().fold(0.0, f64::max),
        rmsd_mm: (d.iter().map(|v| v * v).sum::<f64>() / n).sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_voxels_three_slices_apart() {
        let mut a = Mask::filled([3, 3, 6], [1.0, 1.0, 2.0], false).unwrap();
        let mut b = a.clone();
        a.set(1, 1, 1, true);
        b.set(1, 1, 4, true);
        let d = surface_distances(&a, &b).unwrap();
        assert_eq!(d, SurfaceDistances { assd_mm: 6.0, mssd_mm: 6.0, rmsd_mm: 6.0 });
    }

    #[test]
    fn identical_masks_have_zero_distance() {
        let m = Mask::from_fn([5, 5, 5], [0.7, 0.7, 1.5], |x, y, z| x + y + z < 6).unwrap();
        let d = surface_distances(&m, &m).unwrap();
        assert_eq!((d.assd_mm, d.mssd_mm, d.rmsd_mm), (0.0, 0.0, 0.0));
    }

    #[test]
    fn interior_voxels_are_not_surface() {
        let m = Mask::filled([3, 3, 3], [1.0; 3], true).unwrap();
        assert_eq!(surface_voxels(&m).len(), 26);
        let mut e = Mask::filled([5, 5, 5], [1.0; 3], false).unwrap();
        for z in 1..4 {
            for y in 1..4 {
                for x in 1..4 {
                    e.set(x, y, z, true);
                }
            }
        }
        assert_eq!(surface_voxels(&e).len(), 26);
    }

    #[test]
    fn empty_mask_rejected() {
        let a = Mask::filled([2, 2, 2], [1.0; 3], false).unwrap();
        let b = Mask::filled([2, 2, 2], [1.0; 3], true).unwrap();
        assert!(surface_distances(&a, &b).is_err());
    }
}
