//! Synthetic CT phantoms: an ellipsoidal liver with hypodense ellipsoidal
//! tumors over a smooth soft-tissue background.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::augment::sample_seed;
use crate::error::{invalid, Error, Result};
use crate::volio::{write_labels, write_volume, ElementType, LabelVolume, Volume, LIVER, TUMOR};

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomConfig {
    pub count: usize,
    pub size: [usize; 3],
    pub spacing: [f64; 3],
    pub liver_hu: (f64, f64),
    pub tumor_hu: (f64, f64),
    pub background_hu: (f64, f64),
    /// Inclusive range of tumors per case; at most 4.
    pub tumors: (usize, usize),
    pub noise_sigma: f64,
    /// Smallest liver-minus-tumor HU gap. Caps each tumor's intensity
    /// below its liver so lesions stay hypodense.
    pub min_contrast: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            count: 1,
            size: [128, 128, 64],
            spacing: [1.0, 1.0, 2.0],
            liver_hu: (80.0, 160.0),
            tumor_hu: (30.0, 80.0),
            background_hu: (-80.0, 60.0),
            tumors: (0, 4),
            noise_sigma: 10.0,
            min_contrast: 30.0,
            seed: 0,
        }
    }
}

fn ordered(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if lo.is_finite() && hi.is_finite() && lo <= hi {
        Ok(())
    } else {
        Err(invalid!("{name} range ({lo}, {hi}) is not ordered"))
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(invalid!("phantom count must be positive"));
        }
        if self.size.iter().any(|&n| n < 8) {
            return Err(invalid!("phantom size must be at least 8 per axis, got {:?}", self.size));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(invalid!("spacing must be positive, got {:?}", self.spacing));
        }
        ordered("liver HU", self.liver_hu)?;
        ordered("tumor HU", self.tumor_hu)?;
        ordered("background HU", self.background_hu)?;
        if self.tumors.0 > self.tumors.1 || self.tumors.1 > 4 {
            return Err(invalid!("tumor count range {:?} must lie within 0..=4", self.tumors));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(invalid!("noise sigma must be non-negative, got {}", self.noise_sigma));
        }
        if !(self.min_contrast >= 0.0) || self.liver_hu.0 - self.min_contrast < self.tumor_hu.0 {
            return Err(invalid!(
                "min contrast {} leaves no tumor intensity below liver HU {}",
                self.min_contrast,
                self.liver_hu.0
            ));
        }
        Ok(())
    }
}

/// Axis-aligned ellipsoid rotated by `angle` about z, in mm.
#[derive(Clone, Copy, Debug)]
struct Ellipsoid {
    centre: [f64; 3],
    radii: [f64; 3],
    angle: f64,
}

impl Ellipsoid {
    /// Normalized radius: ≤ 1 inside.
    fn rho(&self, p: [f64; 3]) -> f64 {
        let d = [p[0] - self.centre[0], p[1] - self.centre[1], p[2] - self.centre[2]];
        let (s, c) = self.angle.sin_cos();
        let u = c * d[0] + s * d[1];
        let v = -s * d[0] + c * d[1];
        ((u / self.radii[0]).powi(2) + (v / self.radii[1]).powi(2) + (d[2] / self.radii[2]).powi(2)).sqrt()
    }

    fn min_radius(&self) -> f64 {
        self.radii.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Point at normalized offset `n` (|n| ≤ 1) from the centre.
    fn point(&self, n: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.angle.sin_cos();
        let (u, v) = (n[0] * self.radii[0], n[1] * self.radii[1]);
        [self.centre[0] + c * u - s * v, self.centre[1] + s * u + c * v, self.centre[2] + n[2] * self.radii[2]]
    }
}

struct Blob {
    centre: [f64; 3],
    sigma: f64,
    amplitude: f64,
}

/// One generated case.
#[derive(Clone, Debug)]
pub struct Phantom {
    pub id: String,
    /// Integer-valued HU.
    pub volume: Volume,
    pub labels: LabelVolume,
}

pub fn case_id(index: usize) -> String {
    format!("case{index:03}")
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Uniform point in the unit ball.
fn unit_ball<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    loop {
        let p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        if p.iter().map(|v: &f64| v * v).sum::<f64>() <= 1.0 {
            return p;
        }
    }
}

/// Generates case `index`; the stream depends only on `(config.seed, index)`.
pub fn generate_phantom(config: &PhantomConfig, index: usize) -> Result<Phantom> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(config.seed, index as u64, 0xFA17));
    let extent: [f64; 3] = std::array::from_fn(|i| config.size[i] as f64 * config.spacing[i]);
    let liver = Ellipsoid {
        centre: std::array::from_fn(|i| extent[i] * rng.random_range(0.42..0.58)),
        radii: [
            extent[0] * rng.random_range(0.22..0.30),
            extent[1] * rng.random_range(0.18..0.26),
            extent[2] * rng.random_range(0.24..0.34),
        ],
        angle: rng.random_range(-0.5..0.5),
    };
    let liver_hu = uniform(&mut rng, config.liver_hu);
    let tumor_cap = (liver_hu - config.min_contrast).min(config.tumor_hu.1);
    let n_tumors = rng.random_range(config.tumors.0..=config.tumors.1);
    let mut tumors = Vec::with_capacity(n_tumors);
    for _ in 0..n_tumors {
        let r = liver.min_radius() * rng.random_range(0.22..0.40);
        let radii: [f64; 3] = std::array::from_fn(|_| r * rng.random_range(0.75..1.0));
        // A ball of radius r around a centre at normalized radius
        // 1 − r/r_min − 0.1 stays strictly inside the liver.
        let reach = (1.0 - r / liver.min_radius() - 0.1).max(0.0);
        let n = unit_ball(&mut rng).map(|v| v * reach);
        let hu = uniform(&mut rng, (config.tumor_hu.0, tumor_cap.max(config.tumor_hu.0)));
        tumors.push((Ellipsoid { centre: liver.point(n), radii, angle: rng.random_range(-1.5..1.5) }, hu));
    }
    let base = uniform(&mut rng, config.background_hu);
    let blobs: Vec<Blob> = (0..rng.random_range(2..=4))
        .map(|_| Blob {
            centre: std::array::from_fn(|i| extent[i] * rng.random_range(0.0..1.0)),
            sigma: extent[0].min(extent[1]) * rng.random_range(0.08..0.2),
            amplitude: rng.random_range(-1.0..1.0) * (config.background_hu.1 - config.background_hu.0) * 0.5,
        })
        .collect();

    let noise = Normal::new(0.0, config.noise_sigma).map_err(|e| invalid!("noise sigma: {e}"))?;
    let (size, spacing) = (config.size, config.spacing);
    let mut labels = LabelVolume::filled(size, spacing, 0)?;
    let mut hu = Volume::filled(size, spacing, 0.0)?;
    for z in 0..size[2] {
        for y in 0..size[1] {
            for x in 0..size[0] {
                let p = [(x as f64 + 0.5) * spacing[0], (y as f64 + 0.5) * spacing[1], (z as f64 + 0.5) * spacing[2]];
                let mut value = base;
                for b in &blobs {
                    let d2: f64 = (0..3).map(|i| (p[i] - b.centre[i]).powi(2)).sum();
                    value += b.amplitude * (-d2 / (2.0 * b.sigma * b.sigma)).exp();
                }
                value = value.clamp(config.background_hu.0, config.background_hu.1);
                let mut label = 0;
                if liver.rho(p) <= 1.0 {
                    label = LIVER;
                    value = liver_hu;
                    if let Some(&(_, t)) = tumors.iter().find(|(e, _)| e.rho(p) <= 1.0) {
                        label = TUMOR;
                        value = t;
                    }
                }
                let v = (value + noise.sample(&mut rng)).round().clamp(i16::MIN as f64, i16::MAX as f64);
                labels.set(x, y, z, label);
                hu.set(x, y, z, v as f32);
            }
        }
    }
    Ok(Phantom { id: case_id(index), volume: hu, labels })
}

/// `{dir}/{id}_volume.mhd` and `{dir}/{id}_labels.mhd`.
pub fn case_paths(dir: &Path, id: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{id}_volume.mhd")), dir.join(format!("{id}_labels.mhd")))
}

/// Writes `config.count` phantoms as MET_SHORT volumes and MET_UCHAR labels.
pub fn cmd_phantom(config: &PhantomConfig, out: impl AsRef<Path>) -> Result<Vec<String>> {
    config.validate()?;
    let out = out.as_ref();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut ids = Vec::with_capacity(config.count);
    for i in 0..config.count {
        let p = generate_phantom(config, i)?;
        let (vol, lab) = case_paths(out, &p.id);
        write_volume(&p.volume, &vol, ElementType::Short)?;
        write_labels(&p.labels, &lab)?;
        log::info!("wrote {}", vol.display());
        ids.push(p.id);
    }
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PhantomConfig {
        PhantomConfig { size: [32, 32, 16], spacing: [2.0, 2.0, 3.0], tumors: (1, 4), ..Default::default() }
    }

    #[test]
    fn tumors_lie_inside_liver_and_are_hypodense() {
        let c = small();
        for i in 0..6 {
            let p = generate_phantom(&c, i).unwrap();
            p.labels.validate_labels().unwrap();
            let liver = p.labels.data().iter().filter(|&&l| l == LIVER).count();
            assert!(liver > 0);
            let mean = |l: u8| {
                let v: Vec<f64> = p.volume.data().iter().zip(p.labels.data()).filter(|(_, &k)| k == l).map(|(&v, _)| v as f64).collect();
                (v.iter().sum::<f64>() / v.len().max(1) as f64, v.len())
            };
            let (lm, _) = mean(LIVER);
            let (tm, tn) = mean(TUMOR);
            if tn > 20 {
                assert!(tm < lm, "case {i}: tumor {tm} not below liver {lm}");
            }
        }
    }

    #[test]
    fn same_seed_same_case() {
        let a = generate_phantom(&small(), 3).unwrap();
        let b = generate_phantom(&small(), 3).unwrap();
        assert_eq!(a.volume, b.volume);
        assert_eq!(a.labels, b.labels);
        let c = generate_phantom(&PhantomConfig { seed: 1, ..small() }, 3).unwrap();
        assert_ne!(a.volume, c.volume);
    }

    #[test]
    fn bad_ranges_rejected() {
        assert!(PhantomConfig { liver_hu: (160.0, 80.0), ..small() }.validate().is_err());
        assert!(PhantomConfig { tumors: (0, 5), ..small() }.validate().is_err());
        assert!(PhantomConfig { count: 0, ..small() }.validate().is_err());
    }
}
