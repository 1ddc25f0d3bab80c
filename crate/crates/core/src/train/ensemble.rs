//! Cross-validation bagging ensemble and its on-disk manifest.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use super::config::{EnsembleKind, TrainConfig};
use super::fit::{kfold_split, train_model, TrainEvent, TrainHistory};
use super::stage::{SliceSample, Stage, StageSpec};
use crate::augment::sample_seed;
use crate::error::{invalid, Error, Result};
use crate::nn::{load_checkpoint, save_checkpoint, CdnnModel, ModelConfig};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Debug)]
pub struct TrainedMember {
    pub model: CdnnModel,
    pub history: TrainHistory,
    /// Fold left out of training; `None` for the all-cases member.
    pub held_out: Option<usize>,
    pub training_ids: Vec<String>,
}

/// Trains one model per fold on the other folds, then one on every case.
pub fn train_ensemble(
    samples: &[SliceSample],
    case_ids: &[String],
    model_config: &ModelConfig,
    config: &TrainConfig,
    mut observer: impl FnMut(usize, &TrainEvent),
) -> Result<Vec<TrainedMember>> {
    let mut ids: Vec<String> = case_ids.to_vec();
    ids.sort();
    ids.dedup();
    let mut plans: Vec<(Option<usize>, Vec<String>)> = Vec::new();
    if config.ensemble == EnsembleKind::CrossValidation {
        let folds = kfold_split(&ids, config.folds, config.seed)?;
        for (k, fold) in folds.iter().enumerate() {
            let held: BTreeSet<&String> = fold.iter().collect();
            plans.push((Some(k), ids.iter().filter(|id| !held.contains(id)).cloned().collect()));
        }
    }
    plans.push((None, ids.clone()));
    let mut members = Vec::with_capacity(plans.len());
    for (m, (held_out, training_ids)) in plans.into_iter().enumerate() {
        let keep: BTreeSet<&String> = training_ids.iter().collect();
        let (train, val): (Vec<SliceSample>, Vec<SliceSample>) =
            samples.iter().cloned().partition(|s| keep.contains(&s.case_id));
        if train.is_empty() {
            return Err(Error::Dataset(format!("ensemble member {m} has no training samples")));
        }
        let member_config = TrainConfig { seed: sample_seed(config.seed, m as u64, 0x5EED), ..config.clone() };
        let validation = held_out.map(|_| val.as_slice());
        log::info!("training member {m} on {} samples from {} cases", train.len(), training_ids.len());
        let (model, history) = train_model(&train, validation, model_config, &member_config, |e| observer(m, e))?;
        members.push(TrainedMember { model, history, held_out, training_ids });
    }
    Ok(members)
}

/// One manifest member entry.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestMember {
    pub checkpoint: String,
    pub held_out: Option<usize>,
    pub training_ids: Vec<String>,
}

/// Plain-text description of a trained stage ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub spec: StageSpec,
    pub members: Vec<ManifestMember>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut out = self.spec.to_text();
        for m in &self.members {
            out.push_str(&format!("member = {}\n", m.checkpoint));
            out.push_str(&format!("held_out = {}\n", m.held_out.map_or("none".into(), |k| k.to_string())));
            out.push_str(&format!("train_ids = {}\n", m.training_ids.join(" ")));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = StageSpec::full_resolution(Stage::Localize);
        let mut members: Vec<ManifestMember> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Config { line: i + 1, msg };
            let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            let last = members.last_mut();
            match (k, last) {
                ("member", _) => members.push(ManifestMember {
                    checkpoint: v.to_string(),
                    held_out: None,
                    training_ids: Vec::new(),
                }),
                ("held_out", Some(m)) => {
                    m.held_out = match v {
                        "none" => None,
                        _ => Some(v.parse().map_err(|_| err(format!("bad fold index `{v}`")))?),
                    }
                }
                ("train_ids", Some(m)) => m.training_ids = v.split_whitespace().map(str::to_string).collect(),
                ("held_out" | "train_ids", None) => return Err(err(format!("`{k}` before any `member`"))),
                _ => {
                    if !spec.apply_key(k, v).map_err(|e| err(e.to_string()))? {
                        return Err(err(format!("unknown manifest key `{k}`")));
                    }
                }
            }
        }
        if members.is_empty() {
            return Err(Error::Config { line: 0, msg: "manifest lists no members".into() });
        }
        spec.validate()?;
        Ok(Self { spec, members })
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::parse(&text)
    }
}

/// Writes `member_<k>.ckpt`, `history_<k>.csv` and the manifest.
pub fn write_ensemble(dir: impl AsRef<Path>, spec: &StageSpec, members: &[TrainedMember]) -> Result<Manifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(members.len());
    for (k, m) in members.iter().enumerate() {
        let name = format!("member_{k}.ckpt");
        save_checkpoint(&m.model, dir.join(&name))?;
        let hist = dir.join(format!("history_{k}.csv"));
        std::fs::write(&hist, m.history.to_csv()).map_err(|e| Error::io(&hist, e))?;
        entries.push(ManifestMember { checkpoint: name, held_out: m.held_out, training_ids: m.training_ids.clone() });
    }
    let manifest = Manifest { spec: spec.clone(), members: entries };
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Loads every member checkpoint listed in `dir`'s manifest.
pub fn load_ensemble(dir: impl AsRef<Path>) -> Result<(Manifest, Vec<CdnnModel>)> {
    let dir = dir.as_ref();
    let manifest = Manifest::load(dir)?;
    let models = manifest
        .members
        .iter()
        .map(|m| load_checkpoint(PathBuf::from(dir).join(&m.checkpoint)))
        .collect::<Result<Vec<_>>>()?;
    if let Some(m) = models.iter().find(|m| m.input_channels() != manifest.spec.channels()) {
        return Err(invalid!(
            "stage {} needs {} input channels, member `{}` takes {}",
            manifest.spec.stage,
            manifest.spec.channels(),
            m.config().name,
            m.input_channels()
        ));
    }
    Ok((manifest, models))
}
