//! Per-mini-batch training augmentation: flip/shift/rotate/scale applied
//! identically to slab and target, plus per-channel contrast scaling.

use rand::Rng;

use crate::autograd::Tensor;
use crate::error::{invalid, shape_err, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Probability of a left-right flip.
    pub flip_prob: f64,
    /// Maximum shift as a fraction of the slice width/height.
    pub max_shift_frac: f64,
    pub max_rotate_deg: f64,
    pub scale_range: (f64, f64),
    pub contrast_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            flip_prob: 0.5,
            max_shift_frac: 0.1,
            max_rotate_deg: 10.0,
            scale_range: (0.9, 1.1),
            contrast_range: (0.8, 1.2),
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    /// Every range collapsed onto the identity.
    pub fn identity() -> Self {
        Self {
            enabled: true,
            flip_prob: 0.0,
            max_shift_frac: 0.0,
            max_rotate_deg: 0.0,
            scale_range: (1.0, 1.0),
            contrast_range: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.flip_prob, self.max_shift_frac, self.max_rotate_deg].iter().all(|v| v.is_finite());
        if !finite || !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(invalid!("flip_prob must lie in [0, 1], got {}", self.flip_prob));
        }
        if self.max_shift_frac < 0.0 || self.max_rotate_deg < 0.0 {
            return Err(invalid!("shift and rotation limits must be non-negative"));
        }
        for (name, (lo, hi)) in [("scale_range", self.scale_range), ("contrast_range", self.contrast_range)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(invalid!("{name} must satisfy 0 < lo <= hi, got ({lo}, {hi})"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformParams {
    pub flip: bool,
    /// Shift in pixels, `(dx, dy)`.
    pub shift: (f64, f64),
    pub rotate_deg: f64,
    pub scale: f64,
    /// One factor per channel.
    pub contrast: Vec<f64>,
}

impl TransformParams {
    pub fn identity(channels: usize) -> Self {
        Self { flip: false, shift: (0.0, 0.0), rotate_deg: 0.0, scale: 1.0, contrast: vec![1.0; channels] }
    }

    pub fn is_geometric_identity(&self) -> bool {
        !self.flip && self.shift == (0.0, 0.0) && self.rotate_deg == 0.0 && self.scale == 1.0
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Draws one sample's transform for a `channels × height × width` slab.
pub fn sample_params<R: Rng + ?Sized>(
    config: &AugmentConfig,
    channels: usize,
    height: usize,
    width: usize,
    rng: &mut R,
) -> TransformParams {
    if !config.enabled {
        return TransformParams::identity(channels);
    }
    let flip = config.flip_prob > 0.0 && rng.random_bool(config.flip_prob);
    let s = config.max_shift_frac;
    let shift = (uniform(rng, -s, s) * width as f64, uniform(rng, -s, s) * height as f64);
    let rotate_deg = uniform(rng, -config.max_rotate_deg, config.max_rotate_deg);
    let scale = uniform(rng, config.scale_range.0, config.scale_range.1);
    let contrast = (0..channels).map(|_| uniform(rng, config.contrast_range.0, config.contrast_range.1)).collect();
    TransformParams { flip, shift, rotate_deg, scale, contrast }
}

fn chw(t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref other => Err(shape_err!("expected a C×H×W slab, got {other:?}")),
    }
}

/// Applies flip, then scale and rotation about the slice centre, then the
/// shift. Channels are sampled bilinearly with edge clamping, the target by
/// nearest neighbour with 0 outside the frame.
pub fn geometric_transform(slab: &Tensor, target: &Tensor, params: &TransformParams) -> Result<(Tensor, Tensor)> {
    let (c, h, w) = chw(slab)?;
    let (tc, th, tw) = chw(target)?;
    if (th, tw) != (h, w) {
        return Err(shape_err!("slab {h}x{w} vs target {th}x{tw}"));
    }
    if params.is_geometric_identity() {
        return Ok((slab.clone(), target.clone()));
    }
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (sin, cos) = params.rotate_deg.to_radians().sin_cos();
    // Source coordinate of every output pixel.
    let mut src = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (ux, uy) = (x as f64 - cx - params.shift.0, y as f64 - cy - params.shift.1);
            let (rx, ry) = (cos * ux + sin * uy, -sin * ux + cos * uy);
            let (mut sx, sy) = (rx / params.scale + cx, ry / params.scale + cy);
            if params.flip {
                sx = w as f64 - 1.0 - sx;
            }
            src.push((sx, sy));
        }
    }
    let plane = h * w;
    let mut out = vec![0.0f32; c * plane];
    for ch in 0..c {
        let s = &slab.data()[ch * plane..(ch + 1) * plane];
        for (o, &(sx, sy)) in out[ch * plane..(ch + 1) * plane].iter_mut().zip(&src) {
            let (px, py) = (sx.clamp(0.0, w as f64 - 1.0), sy.clamp(0.0, h as f64 - 1.0));
            let (x0, y0) = (px.floor() as usize, py.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (px - x0 as f64, py - y0 as f64);
            let at = |x: usize, y: usize| s[y * w + x] as f64;
            let top = at(x0, y0) + (at(x1, y0) - at(x0, y0)) * fx;
            let bottom = at(x0, y1) + (at(x1, y1) - at(x0, y1)) * fx;
            *o = (top + (bottom - top) * fy) as f32;
        }
    }
    let mut tout = vec![0.0f32; tc * plane];
    for ch in 0..tc {
        let s = &target.data()[ch * plane..(ch + 1) * plane];
        for (o, &(sx, sy)) in tout[ch * plane..(ch + 1) * plane].iter_mut().zip(&src) {
            let (rx, ry) = ((sx + 0.5).floor(), (sy + 0.5).floor());
            if rx >= 0.0 && ry >= 0.0 && rx < w as f64 && ry < h as f64 {
                *o = s[ry as usize * w + rx as usize];
            }
        }
    }
    Ok((Tensor::new(&[c, h, w], out)?, Tensor::new(&[tc, h, w], tout)?))
}

/// `clamp(mean_c + (v − mean_c)·factor_c, 0, 1)` per channel.
pub fn contrast_jitter(slab: &Tensor, params: &TransformParams) -> Result<Tensor> {
    let (c, h, w) = chw(slab)?;
    if params.contrast.len() != c {
        return Err(shape_err!("{} contrast factors for {c} channels", params.contrast.len()));
    }
    let plane = h * w;
    let mut out = slab.clone();
    for (ch, &factor) in params.contrast.iter().enumerate() {
        if factor == 1.0 {
            continue;
        }
        let values = &mut out.data_mut()[ch * plane..(ch + 1) * plane];
        let mean = values.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
        for v in values {
            *v = (mean + (*v as f64 - mean) * factor).clamp(0.0, 1.0) as f32;
        }
    }
    Ok(out)
}

/// Geometric transform followed by contrast jitter.
pub fn augment_pair(slab: &Tensor, target: &Tensor, params: &TransformParams) -> Result<(Tensor, Tensor)> {
    let (s, t) = geometric_transform(slab, target, params)?;
    Ok((contrast_jitter(&s, params)?, t))
}

/// Per-sample augmentation seed. A plain XOR of seed, index and epoch
/// collides whenever `index ^ epoch` repeats, so each part goes through a
/// splitmix64 round.
pub fn sample_seed(global_seed: u64, epoch: u64, index: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(splitmix(splitmix(global_seed) ^ epoch) ^ index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(c: usize, h: usize, w: usize) -> Tensor {
        Tensor::new(&[c, h, w], (0..c * h * w).map(|i| (i % 17) as f32 / 16.0).collect()).unwrap()
    }

    #[test]
    fn identity_config_gives_identity_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(sample_params(&AugmentConfig::identity(), 3, 8, 8, &mut rng), TransformParams::identity(3));
        assert_eq!(sample_params(&AugmentConfig::disabled(), 2, 8, 8, &mut rng), TransformParams::identity(2));
    }

    #[test]
    fn flip_twice_is_exact() {
        let x = ramp(3, 5, 6);
        let t = Tensor::new(&[1, 5, 6], (0..30).map(|i| (i % 3 == 0) as u8 as f32).collect()).unwrap();
        let p = TransformParams { flip: true, ..TransformParams::identity(3) };
        let (x1, t1) = geometric_transform(&x, &t, &p).unwrap();
        assert_ne!(x1, x);
        let (x2, t2) = geometric_transform(&x1, &t1, &p).unwrap();
        assert_eq!((x2, t2), (x, t));
    }

    #[test]
    fn integer_shift_moves_channel_and_target_together() {
        let t = Tensor::new(&[1, 6, 6], (0..36).map(|i| ((i / 6 + i % 6) % 4 == 0) as u8 as f32).collect()).unwrap();
        let p = TransformParams { shift: (2.0, -1.0), ..TransformParams::identity(1) };
        let (x1, t1) = geometric_transform(&t, &t, &p).unwrap();
        for y in 0..5 {
            for x in 2..6 {
                assert_eq!(x1.data()[y * 6 + x], t1.data()[y * 6 + x]);
            }
        }
    }

    #[test]
    fn contrast_examples() {
        let x = Tensor::new(&[1, 1, 2], vec![0.9, 0.1]).unwrap();
        let p = TransformParams { contrast: vec![0.8], ..TransformParams::identity(1) };
        let y = contrast_jitter(&x, &p).unwrap();
        assert!((y.data()[0] - 0.82).abs() < 1e-6);
        let flat = Tensor::full(&[1, 2, 2], 0.3);
        let p = TransformParams { contrast: vec![1.2], ..TransformParams::identity(1) };
        assert_eq!(contrast_jitter(&flat, &p).unwrap(), flat);
    }

    #[test]
    fn sample_seeds_do_not_collide_like_xor() {
        assert_ne!(sample_seed(7, 1, 2), sample_seed(7, 2, 1));
        assert_ne!(sample_seed(7, 0, 3), sample_seed(7, 3, 0));
    }

    #[test]
    fn validate_rejects_inverted_ranges() {
        let bad = AugmentConfig { scale_range: (1.2, 0.9), ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(AugmentConfig::default().validate().is_ok());
    }
}
