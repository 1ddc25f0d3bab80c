use crate::error::{invalid, shape_err, Result};

/// Dense 3-D grid, x fastest, with voxel spacing in mm.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    size: [usize; 3],
    spacing: [f64; 3],
    data: Vec<T>,
}

/// Intensity volume (HU or normalized).
pub type Volume = Grid<f32>;
/// Voxel labels: 0 background, 1 liver, 2 tumor.
pub type LabelVolume = Grid<u8>;
/// Binary mask.
pub type Mask = Grid<bool>;

pub const BACKGROUND: u8 = 0;
pub const LIVER: u8 = 1;
pub const TUMOR: u8 = 2;

fn check_geometry(size: [usize; 3], spacing: [f64; 3]) -> Result<()> {
    if size.contains(&0) {
        return Err(shape_err!("grid size must be positive, got {size:?}"));
    }
    if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(invalid!("spacing must be positive and finite, got {spacing:?}"));
    }
    Ok(())
}

impl<T> Grid<T> {
    pub fn new(size: [usize; 3], spacing: [f64; 3], data: Vec<T>) -> Result<Self> {
        check_geometry(size, spacing)?;
        let n = size[0] * size[1] * size[2];
        if data.len() != n {
            return Err(shape_err!("grid {size:?} needs {n} voxels, got {}", data.len()));
        }
        Ok(Self { size, spacing, data })
    }

    pub fn from_fn(size: [usize; 3], spacing: [f64; 3], mut f: impl FnMut(usize, usize, usize) -> T) -> Result<Self> {
        check_geometry(size, spacing)?;
        let mut data = Vec::with_capacity(size[0] * size[1] * size[2]);
        for z in 0..size[2] {
            for y in 0..size[1] {
                for x in 0..size[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Ok(Self { size, spacing, data })
    }

    pub fn size(&self) -> [usize; 3] {
        self.size
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Result<Self> {
        check_geometry(self.size, spacing)?;
        self.spacing = spacing;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.size[0] && y < self.size[1] && z < self.size[2]);
        x + self.size[0] * (y + self.size[1] * z)
    }

    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let plane = self.size[0] * self.size[1];
        [i % self.size[0], (i % plane) / self.size[0], i / plane]
    }

    /// One axial slice, `ny × nx`, row major.
    pub fn slice(&self, z: usize) -> &[T] {
        let plane = self.size[0] * self.size[1];
        &self.data[z * plane..(z + 1) * plane]
    }

    pub fn same_grid<U>(&self, other: &Grid<U>) -> bool {
        self.size == other.size && self.spacing == other.spacing
    }

    pub fn check_same_grid<U>(&self, other: &Grid<U>) -> Result<()> {
        if self.size != other.size {
            return Err(shape_err!("grid size {:?} vs {:?}", self.size, other.size));
        }
        if self.spacing != other.spacing {
            return Err(shape_err!("grid spacing {:?} vs {:?}", self.spacing, other.spacing));
        }
        Ok(())
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid { size: self.size, spacing: self.spacing, data: self.data.iter().map(f).collect() }
    }
}

impl<T: Copy> Grid<T> {
    pub fn filled(size: [usize; 3], spacing: [f64; 3], value: T) -> Result<Self> {
        Self::new(size, spacing, vec![value; size[0] * size[1] * size[2]])
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: T) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    /// Sub-grid of `size` voxels starting at `origin`; coordinates outside
    /// the grid read the nearest edge voxel.
    pub fn window(&self, origin: [isize; 3], size: [usize; 3]) -> Result<Self> {
        let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        Self::from_fn(size, self.spacing, |x, y, z| {
            self.get(
                clampi(origin[0] + x as isize, self.size[0]),
                clampi(origin[1] + y as isize, self.size[1]),
                clampi(origin[2] + z as isize, self.size[2]),
            )
        })
    }

    /// Writes `patch` into `self` at `origin`, dropping voxels that fall
    /// outside.
    pub fn paste(&mut self, patch: &Grid<T>, origin: [isize; 3]) {
        for z in 0..patch.size[2] {
            let tz = origin[2] + z as isize;
            if tz < 0 || tz >= self.size[2] as isize {
                continue;
            }
            for y in 0..patch.size[1] {
                let ty = origin[1] + y as isize;
                if ty < 0 || ty >= self.size[1] as isize {
                    continue;
                }
                for x in 0..patch.size[0] {
                    let tx = origin[0] + x as isize;
                    if tx < 0 || tx >= self.size[0] as isize {
                        continue;
                    }
                    self.set(tx as usize, ty as usize, tz as usize, patch.get(x, y, z));
                }
            }
        }
    }
}

impl Grid<bool> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&b| b)
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        self.check_same_grid(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a && b).collect();
        Ok(Grid { size: self.size, spacing: self.spacing, data })
    }
}

impl Grid<u8> {
    /// Rejects labels outside `{0, 1, 2}`.
    pub fn validate_labels(&self) -> Result<()> {
        if let Some(i) = self.data.iter().position(|&l| l > TUMOR) {
            return Err(invalid!("label {} at voxel {:?} is not in {{0, 1, 2}}", self.data[i], self.coords(i)));
        }
        Ok(())
    }

    /// Liver including tumor (`label ≥ 1`).
    pub fn liver_mask(&self) -> Mask {
        self.map(|&l| l >= LIVER)
    }

    pub fn tumor_mask(&self) -> Mask {
        self.map(|&l| l == TUMOR)
    }

    /// Composes liver and tumor masks; tumor wins.
    pub fn from_masks(liver: &Mask, tumor: &Mask) -> Result<LabelVolume> {
        liver.check_same_grid(tumor)?;
        let data = liver
            .data
            .iter()
            .zip(&tumor.data)
            .map(|(&l, &t)| if t { TUMOR } else if l { LIVER } else { BACKGROUND })
            .collect();
        Ok(Grid { size: liver.size, spacing: liver.spacing, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_geometry() {
        assert!(Grid::new([2, 2, 1], [1.0; 3], vec![0u8; 3]).is_err());
        assert!(Grid::new([2, 0, 1], [1.0; 3], Vec::<u8>::new()).is_err());
        assert!(Grid::new([1, 1, 1], [1.0, 0.0, 1.0], vec![0u8]).is_err());
    }

    #[test]
    fn index_is_x_fastest() {
        let g = Grid::from_fn([3, 2, 2], [1.0; 3], |x, y, z| (x, y, z)).unwrap();
        assert_eq!(g.data()[1], (1, 0, 0));
        assert_eq!(g.data()[3], (0, 1, 0));
        assert_eq!(g.data()[6], (0, 0, 1));
        assert_eq!(g.coords(g.index(2, 1, 1)), [2, 1, 1]);
    }

    #[test]
    fn window_replicates_edges_and_paste_inverts() {
        let g = Grid::from_fn([4, 3, 2], [1.0; 3], |x, y, z| (x + 10 * y + 100 * z) as i32).unwrap();
        let w = g.window([-1, 1, 0], [3, 3, 2]).unwrap();
        assert_eq!(w.get(0, 0, 0), g.get(0, 1, 0));
        assert_eq!(w.get(2, 2, 1), g.get(1, 2, 1));
        let mut back = Grid::filled([4, 3, 2], [1.0; 3], -1).unwrap();
        back.paste(&g.window([0, 0, 0], [4, 3, 2]).unwrap(), [0, 0, 0]);
        assert_eq!(back, g);
    }

    #[test]
    fn masks_compose_with_tumor_winning() {
        let l = Grid::new([3, 1, 1], [1.0; 3], vec![true, true, false]).unwrap();
        let t = Grid::new([3, 1, 1], [1.0; 3], vec![false, true, true]).unwrap();
        let lab = LabelVolume::from_masks(&l, &t).unwrap();
        assert_eq!(lab.data(), &[1, 2, 2]);
        assert_eq!(lab.liver_mask().count(), 3);
        assert!(Grid::new([1, 1, 1], [1.0; 3], vec![3u8]).unwrap().validate_labels().is_err());
    }
}
