//! Mask geometry: 3-D connected components, bounding boxes and the
//! liver-restricted histogram equalization used for tumor slabs.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::volio::{Grid, Mask, Volume};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Connectivity {
    /// Face neighbours only.
    Six,
    /// Faces, edges and corners.
    #[default]
    TwentySix,
}

impl Connectivity {
    fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dz in -1..=1isize {
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    let keep = match self {
                        Connectivity::Six => manhattan == 1,
                        Connectivity::TwentySix => manhattan > 0,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

impl FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "6" => Ok(Connectivity::Six),
            "26" => Ok(Connectivity::TwentySix),
            other => Err(invalid!("connectivity must be 6 or 26, got `{other}`")),
        }
    }
}

impl fmt::Display for Connectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Connectivity::Six => "6",
            Connectivity::TwentySix => "26",
        })
    }
}

/// Component labelling: 0 is background, ids run densely from 1 in the
/// scan order of each component's first voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct Components {
    pub labels: Grid<u32>,
    /// `sizes[i]` is the voxel count of component `i + 1`.
    pub sizes: Vec<usize>,
}

impl Components {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    pub fn mask_of(&self, id: u32) -> Mask {
        self.labels.map(|&l| l == id)
    }
}

pub fn connected_components_3d(mask: &Mask, connectivity: Connectivity) -> Components {
    let [nx, ny, nz] = mask.size();
    let offsets = connectivity.offsets();
    let mut labels = mask.map(|_| 0u32);
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask.data()[start] || labels.data()[start] != 0 {
            continue;
        }
        let id = sizes.len() as u32 + 1;
        labels.data_mut()[start] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let [x, y, z] = mask.coords(i);
            for d in &offsets {
                let (qx, qy, qz) = (x as isize + d[0], y as isize + d[1], z as isize + d[2]);
                if qx < 0 || qy < 0 || qz < 0 || qx >= nx as isize || qy >= ny as isize || qz >= nz as isize {
                    continue;
                }
                let j = mask.index(qx as usize, qy as usize, qz as usize);
                if mask.data()[j] && labels.data()[j] == 0 {
                    labels.data_mut()[j] = id;
                    queue.push_back(j);
                }
            }
        }
        sizes.push(size);
    }
    Components { labels, sizes }
}

/// Keeps only the largest component; ties go to the lowest id.
pub fn largest_component(mask: &Mask, connectivity: Connectivity) -> Mask {
    let cc = connected_components_3d(mask, connectivity);
    // max_by_key returns the last maximum, so scan in reverse.
    match cc.sizes.iter().enumerate().rev().max_by_key(|&(_, &s)| s) {
        Some((i, _)) => cc.mask_of(i as u32 + 1),
        None => mask.clone(),
    }
}

/// Axis-aligned box with inclusive voxel bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Box3 {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl Box3 {
    pub fn new(lo: [usize; 3], hi: [usize; 3]) -> Result<Self> {
        if (0..3).any(|a| lo[a] > hi[a]) {
            return Err(invalid!("box lo {lo:?} exceeds hi {hi:?}"));
        }
        Ok(Self { lo, hi })
    }

    pub fn full(size: [usize; 3]) -> Self {
        Self { lo: [0; 3], hi: [size[0] - 1, size[1] - 1, size[2] - 1] }
    }

    pub fn size(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.hi[a] - self.lo[a] + 1)
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|a| self.lo[a] <= p[a] && p[a] <= self.hi[a])
    }

    pub fn contains_box(&self, other: &Box3) -> bool {
        self.contains(other.lo) && self.contains(other.hi)
    }

    pub fn origin(&self) -> [isize; 3] {
        self.lo.map(|v| v as isize)
    }

    pub fn crop<T: Copy>(&self, g: &Grid<T>) -> Result<Grid<T>> {
        g.window(self.origin(), self.size())
    }
}

/// Tight bounding box of the foreground, `None` for an empty mask.
pub fn bounding_box(mask: &Mask) -> Option<Box3> {
    let mut lo = [usize::MAX; 3];
    let mut hi = [0; 3];
    let mut any = false;
    for (i, _) in mask.data().iter().enumerate().filter(|(_, &b)| b) {
        let p = mask.coords(i);
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
        any = true;
    }
    any.then_some(Box3 { lo, hi })
}

/// Bounding box grown by `margin` voxels on every side, clipped to the grid.
pub fn liver_voi(mask: &Mask, margin: usize) -> Result<Box3> {
    let tight = bounding_box(mask).ok_or_else(|| Error::EmptyMask("no liver voxels to bound".into()))?;
    let size = mask.size();
    Ok(Box3 {
        lo: tight.lo.map(|v| v.saturating_sub(margin)),
        hi: [0, 1, 2].map(|a| (tight.hi[a] + margin).min(size[a] - 1)),
    })
}

pub const EQUALIZATION_BINS: usize = 256;

fn bin_of(v: f32, bins: usize) -> usize {
    ((v.clamp(0.0, 1.0) as f64 * bins as f64) as usize).min(bins - 1)
}

/// Histogram equalization whose transfer function is the CDF of the
/// in-mask intensities; applied to every voxel of `v`.
pub fn masked_histogram_equalization(v: &Volume, mask: &Mask, bins: usize) -> Result<Volume> {
    v.check_same_grid(mask)?;
    if bins == 0 {
        return Err(invalid!("histogram needs at least one bin"));
    }
    let mut hist = vec![0usize; bins];
    let mut n = 0usize;
    for (&x, _) in v.data().iter().zip(mask.data()).filter(|(_, &m)| m) {
        hist[bin_of(x, bins)] += 1;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyMask("equalization mask has no voxels".into()));
    }
    let mut cdf = Vec::with_capacity(bins);
    let mut acc = 0usize;
    for h in hist {
        acc += h;
        cdf.push((acc as f64 / n as f64) as f32);
    }
    Ok(v.map(|&x| cdf[bin_of(x, bins)]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(size: [usize; 3], on: &[[usize; 3]]) -> Mask {
        let mut m = Mask::filled(size, [1.0; 3], false).unwrap();
        for p in on {
            m.set(p[0], p[1], p[2], true);
        }
        m
    }

    #[test]
    fn diagonal_neighbours_depend_on_connectivity() {
        let m = mask([3, 3, 3], &[[0, 0, 0], [1, 1, 1]]);
        assert_eq!(connected_components_3d(&m, Connectivity::TwentySix).count(), 1);
        assert_eq!(connected_components_3d(&m, Connectivity::Six).count(), 2);
        assert_eq!(connected_components_3d(&mask([2, 2, 2], &[]), Connectivity::Six).count(), 0);
        let one = connected_components_3d(&mask([2, 2, 2], &[[1, 0, 1]]), Connectivity::Six);
        assert_eq!(one.sizes, vec![1]);
    }

    #[test]
    fn largest_component_tie_goes_to_first_in_scan_order() {
        let m = mask([9, 1, 1], &[[0, 0, 0], [1, 0, 0], [3, 0, 0], [4, 0, 0], [6, 0, 0], [7, 0, 0], [8, 0, 0]]);
        let l = largest_component(&m, Connectivity::Six);
        assert_eq!(l.count(), 3);
        assert!(l.get(6, 0, 0));
        let tie = mask([5, 1, 1], &[[0, 0, 0], [1, 0, 0], [3, 0, 0], [4, 0, 0]]);
        let l = largest_component(&tie, Connectivity::TwentySix);
        assert!(l.get(0, 0, 0) && !l.get(3, 0, 0));
    }

    #[test]
    fn voi_margin_is_per_side_and_clipped() {
        let on: Vec<[usize; 3]> = (20..=30).map(|x| [x, 5, 5]).collect();
        let b = liver_voi(&mask([64, 12, 12], &on), 10).unwrap();
        assert_eq!((b.lo[0], b.hi[0]), (10, 40));
        let b = liver_voi(&mask([64, 12, 12], &[[0, 0, 0]]), 10).unwrap();
        assert_eq!(b.lo, [0, 0, 0]);
        let full = Mask::filled([4, 5, 6], [1.0; 3], true).unwrap();
        assert_eq!(liver_voi(&full, 10).unwrap(), Box3::full([4, 5, 6]));
        assert!(liver_voi(&mask([3, 3, 3], &[]), 10).is_err());
    }

    #[test]
    fn equalization_two_level_example() {
        let v = Volume::from_fn([10, 1, 1], [1.0; 3], |x, _, _| if x < 3 { 0.2 } else { 0.7 }).unwrap();
        let m = Mask::filled([10, 1, 1], [1.0; 3], true).unwrap();
        let e = masked_histogram_equalization(&v, &m, EQUALIZATION_BINS).unwrap();
        assert!((e.get(0, 0, 0) - 0.3).abs() < 1e-6);
        assert_eq!(e.get(9, 0, 0), 1.0);
        let c = Volume::filled([4, 1, 1], [1.0; 3], 0.4).unwrap();
        let e = masked_histogram_equalization(&c, &Mask::filled([4, 1, 1], [1.0; 3], true).unwrap(), 256).unwrap();
        assert!(e.data().iter().all(|&x| x == e.data()[0]));
    }
}
