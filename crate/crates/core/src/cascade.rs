//! Three-stage inference: localize the liver, refine it inside its VOI,
//! then segment tumors inside the refined liver.

use std::fmt;
use std::path::Path;
use std::time::{Duration, Instant};

use crate::autograd::Tensor;
use crate::error::{invalid, shape_err, Error, Result};
use crate::morph::{largest_component, Connectivity};
use crate::nn::CdnnModel;
use crate::train::{load_ensemble, Stage, StageInput, StageSpec};
use crate::volio::{Grid, LabelVolume, Mask, Volume, TUMOR};

/// Probability threshold shared by every stage.
pub const THRESHOLD: f32 = 0.5;

/// Slices per forward pass during inference.
const INFERENCE_BATCH: usize = 8;

/// Anything that maps an `N×C×H×W` batch to `N×1×H×W` probabilities.
pub trait SlicePredictor {
    fn input_channels(&self) -> usize;
    fn predict(&self, batch: &Tensor) -> Result<Tensor>;
}

impl SlicePredictor for CdnnModel {
    fn input_channels(&self) -> usize {
        CdnnModel::input_channels(self)
    }

    fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        CdnnModel::predict(self, batch)
    }
}

/// Bagging ensemble: the arithmetic mean of its members' outputs.
#[derive(Clone, Debug)]
pub struct Ensemble<P = CdnnModel> {
    members: Vec<P>,
}

impl<P: SlicePredictor> Ensemble<P> {
    pub fn new(members: Vec<P>) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(invalid!("an ensemble needs at least one member"));
        };
        let c = first.input_channels();
        if members.iter().any(|m| m.input_channels() != c) {
            return Err(invalid!("ensemble members disagree on input channels"));
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[P] {
        &self.members
    }
}

impl<P: SlicePredictor> SlicePredictor for Ensemble<P> {
    fn input_channels(&self) -> usize {
        self.members[0].input_channels()
    }

    fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        let c = batch.shape().get(1).copied().unwrap_or(0);
        if batch.rank() != 4 || c != self.input_channels() {
            return Err(shape_err!("ensemble expects {} input channels, got shape {:?}", self.input_channels(), batch.shape()));
        }
        let mut acc: Vec<f64> = Vec::new();
        for m in &self.members {
            let p = m.predict(batch)?;
            if acc.is_empty() {
                acc = vec![0.0; p.len()];
            }
            if p.len() != acc.len() {
                return Err(shape_err!("ensemble members disagree on output size"));
            }
            for (a, &v) in acc.iter_mut().zip(p.data()) {
                *a += v as f64;
            }
        }
        let n = self.members.len() as f64;
        let [b, _, h, w] = batch.dims4()?;
        Tensor::new(&[b, 1, h, w], acc.into_iter().map(|a| (a / n) as f32).collect())
    }
}

pub fn ensemble_predict<P: SlicePredictor>(ensemble: &Ensemble<P>, slab: &Tensor) -> Result<Tensor> {
    ensemble.predict(slab)
}

/// A stage's geometry plus its trained ensemble.
#[derive(Clone, Debug)]
pub struct StageModels<P = CdnnModel> {
    pub spec: StageSpec,
    pub ensemble: Ensemble<P>,
}

impl StageModels<CdnnModel> {
    pub fn load(dir: impl AsRef<Path>, expected: Stage) -> Result<Self> {
        let dir = dir.as_ref();
        let (manifest, models) = load_ensemble(dir).map_err(|e| match e {
            Error::Io { source, .. } => Error::Dataset(format!(
                "stage {expected} models missing in {}: {source}",
                dir.display()
            )),
            other => other,
        })?;
        if manifest.spec.stage != expected {
            return Err(invalid!("{} holds stage {} models, expected stage {expected}", dir.display(), manifest.spec.stage));
        }
        Ok(Self { spec: manifest.spec, ensemble: Ensemble::new(models)? })
    }
}

#[derive(Clone, Debug)]
pub struct CascadeModels<P = CdnnModel> {
    pub localize: StageModels<P>,
    pub liver: StageModels<P>,
    pub tumor: StageModels<P>,
}

impl<P: SlicePredictor> CascadeModels<P> {
    pub fn new(localize: StageModels<P>, liver: StageModels<P>, tumor: StageModels<P>) -> Result<Self> {
        for (s, want) in [(&localize, Stage::Localize), (&liver, Stage::Liver), (&tumor, Stage::Tumor)] {
            if s.spec.stage != want {
                return Err(invalid!("stage {want} slot holds a stage {} spec", s.spec.stage));
            }
            if s.ensemble.input_channels() != want.channels() {
                return Err(invalid!("stage {want} models take {} channels, need {}", s.ensemble.input_channels(), want.channels()));
            }
        }
        Ok(Self { localize, liver, tumor })
    }
}

impl CascadeModels<CdnnModel> {
    pub fn load(stage1: impl AsRef<Path>, stage2: impl AsRef<Path>, stage3: impl AsRef<Path>) -> Result<Self> {
        Self::new(
            StageModels::load(stage1, Stage::Localize)?,
            StageModels::load(stage2, Stage::Liver)?,
            StageModels::load(stage3, Stage::Tumor)?,
        )
    }
}

/// Runs the stage network over every slice in the frame's range and maps
/// the probabilities back to the original grid.
pub fn predict_stage<P: SlicePredictor>(input: &StageInput, models: &StageModels<P>) -> Result<Volume> {
    let [w, h, nz] = input.volume.size();
    let plane = w * h;
    let mut prob = vec![0.0f32; plane * nz];
    let (lo, hi) = input.frame.z_range;
    let slices: Vec<usize> = (lo..=hi).collect();
    for chunk in slices.chunks(INFERENCE_BATCH) {
        let mut data = Vec::new();
        for &k in chunk {
            data.extend_from_slice(input.slab(k)?.data());
        }
        let c = models.spec.channels();
        let p = models.ensemble.predict(&Tensor::new(&[chunk.len(), c, h, w], data)?)?;
        for (j, &k) in chunk.iter().enumerate() {
            prob[k * plane..(k + 1) * plane].copy_from_slice(&p.data()[j * plane..(j + 1) * plane]);
        }
    }
    let stage_prob = Grid::new([w, h, nz], input.volume.spacing(), prob)?;
    input.frame.from_stage(&stage_prob)
}

pub fn threshold(prob: &Volume, t: f32) -> Mask {
    prob.map(|&p| p >= t)
}

/// Threshold 0.5 followed by the largest 26-connected component.
pub fn postprocess(prob: &Volume) -> Mask {
    largest_component(&threshold(prob, THRESHOLD), Connectivity::TwentySix)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CascadeStatus {
    Ok,
    /// No stage-1 voxel reached the threshold.
    LocalizationFailed,
    /// Stage 2 rejected every voxel inside the VOI.
    LiverSegmentationFailed,
}

impl fmt::Display for CascadeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CascadeStatus::Ok => "ok",
            CascadeStatus::LocalizationFailed => "localization failed",
            CascadeStatus::LiverSegmentationFailed => "liver segmentation failed",
        })
    }
}

#[derive(Clone, Debug)]
pub struct Localization {
    pub mask: Mask,
    pub prob: Volume,
    pub status: CascadeStatus,
}

/// Stage 1 on a raw HU volume.
pub fn localize_liver<P: SlicePredictor>(hu: &Volume, models: &CascadeModels<P>) -> Result<Localization> {
    let input = StageInput::prepare(&models.localize.spec, hu, None)?;
    let prob = predict_stage(&input, &models.localize)?;
    let mask = postprocess(&prob);
    let status = if mask.any() { CascadeStatus::Ok } else { CascadeStatus::LocalizationFailed };
    Ok(Localization { mask, prob, status })
}

/// Stage 2: refines a non-empty coarse mask.
pub fn segment_liver<P: SlicePredictor>(hu: &Volume, coarse: &Mask, models: &CascadeModels<P>) -> Result<(Mask, Volume)> {
    if !coarse.any() {
        return Err(Error::EmptyMask("liver segmentation needs a non-empty coarse mask".into()));
    }
    let input = StageInput::prepare(&models.liver.spec, hu, Some(coarse))?;
    let prob = predict_stage(&input, &models.liver)?;
    Ok((postprocess(&prob), prob))
}

/// Stage 3: tumor voxels inside a non-empty liver mask.
pub fn segment_tumor<P: SlicePredictor>(hu: &Volume, liver: &Mask, models: &CascadeModels<P>) -> Result<(Mask, Volume)> {
    if !liver.any() {
        return Err(Error::EmptyMask("tumor segmentation needs a non-empty liver mask".into()));
    }
    let input = StageInput::prepare(&models.tumor.spec, hu, Some(liver))?;
    let prob = predict_stage(&input, &models.tumor)?;
    Ok((threshold(&prob, THRESHOLD).and(liver)?, prob))
}

/// `|tumor| / |liver ∪ tumor|`, 0 when there is no liver.
pub fn tumor_burden(labels: &LabelVolume) -> f64 {
    let liver = labels.data().iter().filter(|&&l| l >= 1).count();
    let tumor = labels.data().iter().filter(|&&l| l == TUMOR).count();
    if liver == 0 {
        0.0
    } else {
        tumor as f64 / liver as f64
    }
}

#[derive(Clone, Debug)]
pub struct CascadeOutput {
    pub labels: LabelVolume,
    pub coarse_liver: Mask,
    pub liver_prob: Option<Volume>,
    pub tumor_prob: Option<Volume>,
    pub tumor_burden: f64,
    pub status: CascadeStatus,
    /// Wall-clock time of stages 1–3.
    pub timings: [Duration; 3],
}

impl CascadeOutput {
    /// Plain-text per-case summary.
    pub fn summary(&self, case: &str) -> String {
        let liver = self.labels.data().iter().filter(|&&l| l >= 1).count();
        let tumor = self.labels.data().iter().filter(|&&l| l == TUMOR).count();
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        format!(
            "case = {case}\nstatus = {}\nliver_voxels = {liver}\ntumor_voxels = {tumor}\nburden = {:.6}\n\
             stage1_ms = {:.1}\nstage2_ms = {:.1}\nstage3_ms = {:.1}\n",
            self.status,
            self.tumor_burden,
            ms(self.timings[0]),
            ms(self.timings[1]),
            ms(self.timings[2]),
        )
    }
}

/// Full cascade on a raw HU volume. Localization or segmentation failures
/// yield an all-background result with the matching status.
pub fn run_cascade<P: SlicePredictor>(hu: &Volume, models: &CascadeModels<P>) -> Result<CascadeOutput> {
    let mut timings = [Duration::ZERO; 3];
    let background = hu.map(|_| 0u8);
    let t0 = Instant::now();
    let loc = localize_liver(hu, models)?;
    timings[0] = t0.elapsed();
    let failed = |status, coarse: Mask, timings| CascadeOutput {
        labels: background.clone(),
        coarse_liver: coarse,
        liver_prob: None,
        tumor_prob: None,
        tumor_burden: 0.0,
        status,
        timings,
    };
    if loc.status != CascadeStatus::Ok {
        return Ok(failed(loc.status, loc.mask, timings));
    }
    let t1 = Instant::now();
    let (liver, liver_prob) = segment_liver(hu, &loc.mask, models)?;
    timings[1] = t1.elapsed();
    if !liver.any() {
        return Ok(failed(CascadeStatus::LiverSegmentationFailed, loc.mask, timings));
    }
    let t2 = Instant::now();
    let (tumor, tumor_prob) = segment_tumor(hu, &liver, models)?;
    timings[2] = t2.elapsed();
    let labels = LabelVolume::from_masks(&liver, &tumor)?;
    Ok(CascadeOutput {
        tumor_burden: tumor_burden(&labels),
        labels,
        coarse_liver: loc.mask,
        liver_prob: Some(liver_prob),
        tumor_prob: Some(tumor_prob),
        status: CascadeStatus::Ok,
        timings,
    })
}
