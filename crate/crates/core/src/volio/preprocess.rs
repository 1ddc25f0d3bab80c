use super::grid::{Grid, Volume};
use crate::autograd::Tensor;
use crate::error::{invalid, Result};

pub const HU_MIN: f32 = -100.0;
pub const HU_MAX: f32 = 400.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interp {
    Linear,
    Nearest,
}

pub fn clamp_hu(v: &Volume) -> Volume {
    v.map(|&x| x.clamp(HU_MIN, HU_MAX))
}

/// `(x + 100) / 500`: maps the clamped HU window onto `[0, 1]`.
pub fn normalize_intensity(v: &Volume) -> Volume {
    v.map(|&x| (x - HU_MIN) / (HU_MAX - HU_MIN))
}

/// Slice count after resampling `nz` slices of thickness `sz` to
/// `target`: rounded half away from zero, at least 1.
pub fn resampled_slice_count(nz: usize, sz: f64, target: f64) -> usize {
    ((nz as f64 * sz / target).round() as usize).max(1)
}

/// Resamples along z to slices of roughly `target_mm` (the slab extent is
/// kept, so the exact new thickness is `nz·sz/nz'`).
pub fn resample_z<T: Resample>(v: &Grid<T>, target_mm: f64, method: Interp) -> Result<Grid<T>> {
    if !(target_mm > 0.0 && target_mm.is_finite()) {
        return Err(invalid!("target slice thickness must be positive, got {target_mm}"));
    }
    let [_, _, nz] = v.size();
    if target_mm == v.spacing()[2] {
        return Ok(v.clone());
    }
    resample_z_to(v, resampled_slice_count(nz, v.spacing()[2], target_mm), method)
}

/// Resamples along z to exactly `nz_out` slices spanning the same extent.
pub fn resample_z_to<T: Resample>(v: &Grid<T>, nz_out: usize, method: Interp) -> Result<Grid<T>> {
    let [nx, ny, nz] = v.size();
    let [sx, sy, sz] = v.spacing();
    if nz_out == 0 {
        return Err(invalid!("resampled slice count must be positive"));
    }
    let sz_out = nz as f64 * sz / nz_out as f64;
    let plane = nx * ny;
    let mut data = Vec::with_capacity(plane * nz_out);
    for j in 0..nz_out {
        // Slab centre of output slice j in input index coordinates.
        let pos = ((j as f64 + 0.5) * sz_out / sz - 0.5).clamp(0.0, (nz - 1) as f64);
        match method {
            Interp::Nearest => {
                let k = (pos + 0.5).floor().min((nz - 1) as f64) as usize;
                data.extend_from_slice(v.slice(k));
            }
            Interp::Linear => {
                let k0 = pos.floor() as usize;
                let k1 = (k0 + 1).min(nz - 1);
                let w = pos - k0 as f64;
                let (a, b) = (v.slice(k0), v.slice(k1));
                data.extend(a.iter().zip(b).map(|(&p, &q)| T::lerp(p, q, w)));
            }
        }
    }
    Grid::new([nx, ny, nz_out], [sx, sy, sz_out], data)
}

/// Voxel types that can be resampled. Labels and masks only support
/// nearest-neighbour lookups, so their `lerp` snaps to the closer end.
pub trait Resample: Copy {
    fn lerp(a: Self, b: Self, w: f64) -> Self;
    fn block_mean(values: &[Self]) -> Self;
}

impl Resample for f32 {
    fn lerp(a: f32, b: f32, w: f64) -> f32 {
        (a as f64 + (b as f64 - a as f64) * w) as f32
    }

    fn block_mean(values: &[f32]) -> f32 {
        (values.iter().map(|&v| v as f64).sum::<f64>() / values.len() as f64) as f32
    }
}

macro_rules! nearest_only {
    ($($t:ty),*) => {$(
        impl Resample for $t {
            fn lerp(a: $t, b: $t, w: f64) -> $t {
                if w < 0.5 { a } else { b }
            }

            fn block_mean(values: &[$t]) -> $t {
                values[values.len() / 2]
            }
        }
    )*};
}
nearest_only!(u8, bool);

/// Resizes every axial slice to `target = [nx', ny']`, rescaling spacing.
///
/// Intensities use block means when both axes shrink by integer factors
/// and bilinear sampling otherwise. `Interp::Nearest` always samples the
/// nearest source pixel (labels, masks).
pub fn resize_axial<T: Resample>(v: &Grid<T>, target: [usize; 2], method: Interp) -> Result<Grid<T>> {
    let [nx, ny, nz] = v.size();
    let [tx, ty] = target;
    if tx == 0 || ty == 0 {
        return Err(invalid!("axial target size must be positive, got {target:?}"));
    }
    let [sx, sy, sz] = v.spacing();
    let spacing = [sx * nx as f64 / tx as f64, sy * ny as f64 / ty as f64, sz];
    if [tx, ty] == [nx, ny] {
        return Ok(v.clone());
    }
    let mut data = Vec::with_capacity(tx * ty * nz);
    let integer_down = nx % tx == 0 && ny % ty == 0;
    for z in 0..nz {
        let s = v.slice(z);
        match method {
            Interp::Linear if integer_down => {
                let (fx, fy) = (nx / tx, ny / ty);
                let mut block = Vec::with_capacity(fx * fy);
                for y in 0..ty {
                    for x in 0..tx {
                        block.clear();
                        for yy in y * fy..(y + 1) * fy {
                            block.extend_from_slice(&s[yy * nx + x * fx..yy * nx + (x + 1) * fx]);
                        }
                        data.push(T::block_mean(&block));
                    }
                }
            }
            Interp::Linear => {
                let sample = |t: usize, n: usize, m: usize| {
                    let p = ((t as f64 + 0.5) * n as f64 / m as f64 - 0.5).clamp(0.0, (n - 1) as f64);
                    let i0 = p.floor() as usize;
                    (i0, (i0 + 1).min(n - 1), p - i0 as f64)
                };
                let xs: Vec<_> = (0..tx).map(|x| sample(x, nx, tx)).collect();
                for y in 0..ty {
                    let (y0, y1, wy) = sample(y, ny, ty);
                    for &(x0, x1, wx) in &xs {
                        let top = T::lerp(s[y0 * nx + x0], s[y0 * nx + x1], wx);
                        let bottom = T::lerp(s[y1 * nx + x0], s[y1 * nx + x1], wx);
                        data.push(T::lerp(top, bottom, wy));
                    }
                }
            }
            Interp::Nearest => {
                let near = |t: usize, n: usize, m: usize| (((t as f64 + 0.5) * n as f64 / m as f64) as usize).min(n - 1);
                let xs: Vec<usize> = (0..tx).map(|x| near(x, nx, tx)).collect();
                for y in 0..ty {
                    let row = near(y, ny, ty) * nx;
                    data.extend(xs.iter().map(|&x| s[row + x]));
                }
            }
        }
    }
    Grid::new([tx, ty, nz], spacing, data)
}

/// 2.5-D slab `3 × ny × nx`: slices `k − 1, k, k + 1`, replicated at the
/// volume ends.
pub fn stack_slices(v: &Volume, k: usize) -> Result<Tensor> {
    let [nx, ny, nz] = v.size();
    if k >= nz {
        return Err(invalid!("slice {k} out of range for {nz} slices"));
    }
    let mut data = Vec::with_capacity(3 * nx * ny);
    for kk in [k.saturating_sub(1), k, (k + 1).min(nz - 1)] {
        data.extend_from_slice(v.slice(kk));
    }
    Tensor::new(&[3, ny, nx], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_and_normalize_examples() {
        let v = Volume::new([3, 1, 1], [1.0; 3], vec![1000.0, -200.0, 50.0]).unwrap();
        assert_eq!(clamp_hu(&v).data(), &[400.0, -100.0, 50.0]);
        let n = normalize_intensity(&Volume::new([3, 1, 1], [1.0; 3], vec![-100.0, 400.0, 150.0]).unwrap());
        assert_eq!(n.data(), &[0.0, 1.0, (150.0 + 100.0) / 500.0]);
    }

    #[test]
    fn resample_counts_and_identity() {
        assert_eq!(resampled_slice_count(10, 1.5, 3.0), 5);
        assert_eq!(resampled_slice_count(1, 0.5, 3.0), 1);
        let v = Volume::from_fn([2, 2, 6], [1.0, 1.0, 2.0], |x, _, z| (x * 7 + z) as f32).unwrap();
        assert_eq!(resample_z(&v, 2.0, Interp::Linear).unwrap(), v);
        let r = resample_z(&v, 4.0, Interp::Linear).unwrap();
        assert_eq!(r.size(), [2, 2, 3]);
        assert_eq!(r.spacing()[2], 4.0);
        // Output slab centres fall halfway between input slices 0/1, 2/3, 4/5.
        assert_eq!(r.slice(0)[0], 0.5);
    }

    #[test]
    fn nearest_resample_keeps_label_set() {
        let l = Grid::from_fn([3, 3, 7], [1.0, 1.0, 1.3], |x, y, z| ((x * 3 + y + z) % 2) as u8 * 2).unwrap();
        for t in [0.4, 1.0, 2.7, 10.0] {
            let r = resample_z(&l, t, Interp::Nearest).unwrap();
            assert!(r.data().iter().all(|&v| v == 0 || v == 2));
        }
    }

    #[test]
    fn axial_mean_pool_preserves_mean_and_rescales_spacing() {
        let v = Volume::from_fn([8, 8, 2], [0.7, 0.7, 1.0], |x, y, z| (x * x + 3 * y + z) as f32).unwrap();
        let r = resize_axial(&v, [2, 2], Interp::Linear).unwrap();
        assert!((r.spacing()[0] - 0.7 * 8.0 / 2.0).abs() < 1e-12);
        let mean = |g: &Volume| g.data().iter().map(|&x| x as f64).sum::<f64>() / g.len() as f64;
        assert!((mean(&r) - mean(&v)).abs() < 1e-5);
        let c = Volume::filled([6, 4, 1], [1.0; 3], 3.5).unwrap();
        for t in [[4, 4], [9, 3], [1, 1], [12, 8]] {
            assert!(resize_axial(&c, t, Interp::Linear).unwrap().data().iter().all(|&x| x == 3.5));
        }
    }

    #[test]
    fn stack_slices_replicates_edges() {
        let v = Volume::from_fn([1, 1, 4], [1.0; 3], |_, _, z| z as f32).unwrap();
        assert_eq!(stack_slices(&v, 2).unwrap().data(), &[1.0, 2.0, 3.0]);
        assert_eq!(stack_slices(&v, 0).unwrap().data(), &[0.0, 0.0, 1.0]);
        assert_eq!(stack_slices(&v, 3).unwrap().data(), &[2.0, 3.0, 3.0]);
        assert!(stack_slices(&v, 4).is_err());
    }
}
