//! Per-stage geometry and slice-sample construction.

use std::fmt;
use std::str::FromStr;

use crate::autograd::Tensor;
use crate::error::{invalid, Error, Result};
use crate::morph::{liver_voi, masked_histogram_equalization, EQUALIZATION_BINS};
use crate::volio::{
    clamp_hu, normalize_intensity, resample_z_to, resize_axial, stack_slices, Grid, Interp, LabelVolume,
    Mask, Resample, Volume, TUMOR,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    /// Coarse liver localization on the whole down-sampled slice.
    Localize = 1,
    /// Fine liver segmentation inside the liver VOI.
    Liver = 2,
    /// Tumor segmentation at native resolution inside the liver VOI.
    Tumor = 3,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Localize, Stage::Liver, Stage::Tumor];

    pub fn number(self) -> u8 {
        self as u8
    }

    /// Input channels: three adjacent slices, plus the equalized centre
    /// slice for tumors.
    pub fn channels(self) -> usize {
        match self {
            Stage::Tumor => 4,
            _ => 3,
        }
    }

    /// Training target for one voxel label.
    pub fn target(self, label: u8) -> bool {
        match self {
            Stage::Tumor => label == TUMOR,
            _ => label >= 1,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1" => Ok(Stage::Localize),
            "2" => Ok(Stage::Liver),
            "3" => Ok(Stage::Tumor),
            other => Err(invalid!("stage must be 1, 2 or 3, got `{other}`")),
        }
    }
}

/// How axial slices are framed for a stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AxialFit {
    /// Whole slice resized to `n × n`.
    Resize(usize),
    /// Square window around the VOI: grown to `n` when smaller, resized
    /// down to `n` when larger.
    VoiSquare(usize),
    /// VOI at native resolution, each side grown to a multiple of `n`.
    VoiAligned(usize),
}

impl fmt::Display for AxialFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AxialFit::Resize(n) => write!(f, "resize {n}"),
            AxialFit::VoiSquare(n) => write!(f, "voi-square {n}"),
            AxialFit::VoiAligned(n) => write!(f, "voi-aligned {n}"),
        }
    }
}

impl FromStr for AxialFit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut it = s.split_whitespace();
        let (kind, n) = (it.next(), it.next().and_then(|n| n.parse::<usize>().ok()));
        match (kind, n, it.next()) {
            (Some("resize"), Some(n), None) if n > 0 => Ok(AxialFit::Resize(n)),
            (Some("voi-square"), Some(n), None) if n > 0 => Ok(AxialFit::VoiSquare(n)),
            (Some("voi-aligned"), Some(n), None) if n > 0 => Ok(AxialFit::VoiAligned(n)),
            _ => Err(invalid!("axial fit must be `resize N`, `voi-square N` or `voi-aligned N`, got `{s}`")),
        }
    }
}

/// Geometry and sampling rules of one cascade stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageSpec {
    pub stage: Stage,
    /// Target slice thickness; `None` keeps the native grid.
    pub z_mm: Option<f64>,
    pub axial: AxialFit,
    /// VOI margin in voxels per side (VOI stages only).
    pub margin: usize,
    /// Extra slices above and below the liver kept for stage-1 training.
    pub context_slices: usize,
}

impl StageSpec {
    /// Full-resolution defaults: 128² at 3 mm, 256² at 2 mm, native VOI.
    pub fn full_resolution(stage: Stage) -> Self {
        match stage {
            Stage::Localize => {
                Self { stage, z_mm: Some(3.0), axial: AxialFit::Resize(128), margin: 0, context_slices: 5 }
            }
            Stage::Liver => {
                Self { stage, z_mm: Some(2.0), axial: AxialFit::VoiSquare(256), margin: 10, context_slices: 5 }
            }
            Stage::Tumor => Self { stage, z_mm: None, axial: AxialFit::VoiAligned(8), margin: 10, context_slices: 5 },
        }
    }

    pub fn channels(&self) -> usize {
        self.stage.channels()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(z) = self.z_mm {
            if !(z > 0.0 && z.is_finite()) {
                return Err(invalid!("stage {}: slice thickness must be positive, got {z}", self.stage));
            }
        }
        match (self.stage, self.axial) {
            (Stage::Localize, AxialFit::Resize(_)) => Ok(()),
            (Stage::Localize, other) => Err(invalid!("stage 1 frames whole slices, got `{other}`")),
            (_, AxialFit::Resize(_)) => Err(invalid!("stage {} frames the liver VOI, got `resize`", self.stage)),
            _ => Ok(()),
        }
    }

    /// Key/value lines shared by manifests and config files.
    pub fn to_text(&self) -> String {
        let z = self.z_mm.map_or("native".to_string(), |z| z.to_string());
        format!(
            "stage = {}\nz_mm = {z}\naxial = {}\nmargin = {}\ncontext_slices = {}\n",
            self.stage, self.axial, self.margin, self.context_slices
        )
    }

    /// Applies one `key = value` pair; returns `false` for unknown keys.
    pub fn apply_key(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "stage" => self.stage = value.parse()?,
            "z_mm" => {
                self.z_mm = if value == "native" {
                    None
                } else {
                    Some(value.parse().map_err(|_| invalid!("bad slice thickness `{value}`"))?)
                }
            }
            "axial" => self.axial = value.parse()?,
            "margin" => self.margin = value.parse().map_err(|_| invalid!("bad margin `{value}`"))?,
            "context_slices" => {
                self.context_slices = value.parse().map_err(|_| invalid!("bad context_slices `{value}`"))?
            }
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Mapping between a case's original grid and a stage's network grid.
#[derive(Clone, Debug, PartialEq)]
pub struct StageFrame {
    pub original_size: [usize; 3],
    pub original_spacing: [f64; 3],
    /// Slice count on the stage's z grid.
    pub stage_nz: usize,
    pub window_origin: [isize; 2],
    pub window_size: [usize; 2],
    /// Network input side lengths `[w, h]`.
    pub axial_out: [usize; 2],
    /// Inclusive slice range (stage z grid) that the stage predicts.
    pub z_range: (usize, usize),
}

fn round_up(v: usize, m: usize) -> usize {
    v.div_ceil(m) * m
}

impl StageFrame {
    /// Frames a case. VOI stages need `mask` (on the original grid) to
    /// locate the liver.
    pub fn new(spec: &StageSpec, size: [usize; 3], spacing: [f64; 3], mask: Option<&Mask>) -> Result<Self> {
        spec.validate()?;
        let stage_nz = match spec.z_mm {
            Some(t) if t != spacing[2] => crate::volio::resampled_slice_count(size[2], spacing[2], t),
            _ => size[2],
        };
        let base = Self {
            original_size: size,
            original_spacing: spacing,
            stage_nz,
            window_origin: [0, 0],
            window_size: [size[0], size[1]],
            axial_out: [size[0], size[1]],
            z_range: (0, stage_nz - 1),
        };
        if let AxialFit::Resize(n) = spec.axial {
            return Ok(Self { axial_out: [n, n], ..base });
        }
        let mask = mask.ok_or_else(|| invalid!("stage {} needs a liver mask to place its VOI", spec.stage))?;
        if mask.size() != size {
            return Err(invalid!("mask grid {:?} does not match volume {size:?}", mask.size()));
        }
        let stage_mask = base.z_to_stage(mask, Interp::Nearest)?;
        let voi = liver_voi(&stage_mask, spec.margin)?;
        let voi_size = voi.size();
        let (origin, window, out) = match spec.axial {
            AxialFit::VoiSquare(n) => {
                let side = n.max(voi_size[0]).max(voi_size[1]);
                let origin = [0, 1].map(|a| voi.lo[a] as isize - ((side - voi_size[a]) / 2) as isize);
                (origin, [side, side], [n, n])
            }
            AxialFit::VoiAligned(m) => {
                let side = [0, 1].map(|a| round_up(voi_size[a], m));
                let origin = [0, 1].map(|a| voi.lo[a] as isize - ((side[a] - voi_size[a]) / 2) as isize);
                (origin, side, side)
            }
            AxialFit::Resize(_) => unreachable!("handled above"),
        };
        Ok(Self { window_origin: origin, window_size: window, axial_out: out, z_range: (voi.lo[2], voi.hi[2]), ..base })
    }

    fn z_to_stage<T: Resample>(&self, g: &Grid<T>, method: Interp) -> Result<Grid<T>> {
        if self.stage_nz == self.original_size[2] {
            Ok(g.clone())
        } else {
            resample_z_to(g, self.stage_nz, method)
        }
    }

    /// Original grid → stage grid (all stage slices, framed axially).
    pub fn to_stage<T: Resample>(&self, g: &Grid<T>, method: Interp) -> Result<Grid<T>> {
        if g.size() != self.original_size {
            return Err(invalid!("grid {:?} does not match frame {:?}", g.size(), self.original_size));
        }
        let resampled = self.z_to_stage(g, method)?;
        let [wx, wy] = self.window_size;
        let window =
            resampled.window([self.window_origin[0], self.window_origin[1], 0], [wx, wy, self.stage_nz])?;
        resize_axial(&window, self.axial_out, method)
    }

    /// Stage-grid probabilities → original grid; voxels outside the window
    /// get 0.
    pub fn from_stage(&self, prob: &Volume) -> Result<Volume> {
        if prob.size() != [self.axial_out[0], self.axial_out[1], self.stage_nz] {
            return Err(invalid!("probability grid {:?} does not match frame", prob.size()));
        }
        let window = resize_axial(prob, self.window_size, Interp::Linear)?;
        let [nx, ny, _] = self.original_size;
        let mut full = Volume::filled([nx, ny, self.stage_nz], window.spacing(), 0.0)?;
        full.paste(&window, [self.window_origin[0], self.window_origin[1], 0]);
        let out = if self.stage_nz == self.original_size[2] {
            full
        } else {
            resample_z_to(&full, self.original_size[2], Interp::Linear)?
        };
        Grid::new(self.original_size, self.original_spacing, out.into_data())
    }
}

/// One ground-truth case.
#[derive(Clone, Debug)]
pub struct Case {
    pub id: String,
    /// Raw HU intensities.
    pub volume: Volume,
    pub labels: LabelVolume,
}

/// One 2.5-D training sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceSample {
    /// `C × H × W`, normalized intensities.
    pub channels: Tensor,
    /// `1 × H × W`, binary.
    pub target: Tensor,
    pub case_id: String,
    /// Slice index on the stage z grid.
    pub slice: usize,
    pub stage: Stage,
}

impl SliceSample {
    pub fn hw(&self) -> (usize, usize) {
        let s = self.channels.shape();
        (s[1], s[2])
    }
}

/// Stage inputs for one case: framed, normalized intensities plus the
/// equalized companion volume for tumor slabs.
#[derive(Clone, Debug)]
pub struct StageInput {
    pub frame: StageFrame,
    pub volume: Volume,
    pub equalized: Option<Volume>,
}

impl StageInput {
    /// `hu` is the raw volume; `liver` is required for VOI stages.
    pub fn prepare(spec: &StageSpec, hu: &Volume, liver: Option<&Mask>) -> Result<Self> {
        let frame = StageFrame::new(spec, hu.size(), hu.spacing(), liver)?;
        let normalized = normalize_intensity(&clamp_hu(hu));
        let volume = frame.to_stage(&normalized, Interp::Linear)?;
        let equalized = match spec.stage {
            Stage::Tumor => {
                let mask = frame.to_stage(liver.expect("VOI stages carry a mask"), Interp::Nearest)?;
                Some(masked_histogram_equalization(&volume, &mask, EQUALIZATION_BINS)?)
            }
            _ => None,
        };
        Ok(Self { frame, volume, equalized })
    }

    /// The network input for stage slice `k`.
    pub fn slab(&self, k: usize) -> Result<Tensor> {
        let three = stack_slices(&self.volume, k)?;
        let Some(eq) = &self.equalized else {
            return Ok(three);
        };
        let mut data = three.into_data();
        data.extend_from_slice(eq.slice(k));
        let [w, h, _] = self.volume.size();
        Tensor::new(&[4, h, w], data)
    }
}

fn slice_has(mask: &Mask, z: usize) -> bool {
    mask.slice(z).iter().any(|&b| b)
}

/// Builds the training samples of one stage.
///
/// Stage 1 keeps the liver slices plus `context_slices` on either side,
/// stage 2 every VOI slice, stage 3 the slices containing tumor. Cases
/// without liver are skipped with a warning.
pub fn build_stage_dataset(cases: &[Case], spec: &StageSpec) -> Result<Vec<SliceSample>> {
    let mut out = Vec::new();
    for case in cases {
        case.volume.check_same_grid(&case.labels)?;
        case.labels.validate_labels()?;
        let liver = case.labels.liver_mask();
        if !liver.any() {
            log::warn!("case {}: no liver voxels, skipped for stage {}", case.id, spec.stage);
            continue;
        }
        let input = StageInput::prepare(spec, &case.volume, Some(&liver))?;
        let labels = input.frame.to_stage(&case.labels, Interp::Nearest)?;
        let target = labels.map(|&l| spec.stage.target(l));
        let nz = labels.size()[2];
        let slices: Vec<usize> = match spec.stage {
            Stage::Localize => {
                let stage_liver = labels.map(|&l| l >= 1);
                let with: Vec<usize> = (0..nz).filter(|&z| slice_has(&stage_liver, z)).collect();
                match (with.first(), with.last()) {
                    (Some(&lo), Some(&hi)) => {
                        (lo.saturating_sub(spec.context_slices)..=(hi + spec.context_slices).min(nz - 1)).collect()
                    }
                    _ => Vec::new(),
                }
            }
            Stage::Liver => (input.frame.z_range.0..=input.frame.z_range.1).collect(),
            Stage::Tumor => (input.frame.z_range.0..=input.frame.z_range.1).filter(|&z| slice_has(&target, z)).collect(),
        };
        let [w, h, _] = labels.size();
        for z in slices {
            let t: Vec<f32> = target.slice(z).iter().map(|&b| b as u8 as f32).collect();
            out.push(SliceSample {
                channels: input.slab(z)?,
                target: Tensor::new(&[1, h, w], t)?,
                case_id: case.id.clone(),
                slice: z,
                stage: spec.stage,
            });
        }
    }
    Ok(out)
}
