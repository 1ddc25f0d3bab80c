use std::path::{Path, PathBuf};

use super::stage::{Stage, StageSpec};
use crate::augment::AugmentConfig;
use crate::autograd::DEFAULT_LEARNING_RATE;
use crate::error::{invalid, Error, Result};
use crate::nn::{parse_levels, ModelConfig};

/// Which members an ensemble run trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnsembleKind {
    /// One model per cross-validation fold plus one on all cases.
    CrossValidation,
    /// Only the all-cases model.
    Single,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub folds: usize,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub ensemble: EnsembleKind,
    /// Cap on the evenly strided validation subset drawn from the training
    /// samples when no held-out set exists.
    pub validation_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            epochs: 200,
            batch_size: 8,
            folds: 5,
            seed: 0,
            augment: AugmentConfig::default(),
            ensemble: EnsembleKind::CrossValidation,
            validation_samples: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return Err(invalid!("batch_size must be positive"));
        }
        if self.folds < 2 {
            return Err(invalid!("folds must be at least 2, got {}", self.folds));
        }
        self.augment.validate()
    }
}

/// Everything a `train` invocation reads from its config file.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainFile {
    pub train: TrainConfig,
    pub stage: StageSpec,
    pub model: ModelConfig,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

fn parse<T: std::str::FromStr>(v: &str, what: &str) -> Result<T> {
    v.parse().map_err(|_| invalid!("bad {what} `{v}`"))
}

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(invalid!("expected true or false, got `{v}`")),
    }
}

fn parse_range(v: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = v.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
    match parts.as_slice() {
        [a, b] => Ok((parse(a, "range bound")?, parse(b, "range bound")?)),
        _ => Err(invalid!("expected `lo, hi`, got `{v}`")),
    }
}

impl TrainFile {
    /// Defaults for a stage: full-resolution geometry and the matching
    /// preset (`cdnn-i` for stage 1, `cdnn-ii` otherwise).
    pub fn for_stage(stage: Stage) -> Self {
        let preset = if stage == Stage::Localize { ModelConfig::cdnn_i(3) } else { ModelConfig::cdnn_ii(3) };
        Self {
            train: TrainConfig::default(),
            stage: StageSpec::full_resolution(stage),
            model: preset.with_input_channels(stage.channels()),
            data_dir: None,
            out_dir: None,
        }
    }

    /// Parses `key = value` lines; `#` starts a comment. `stage` (when
    /// present) resets the geometry and model defaults, so it should come
    /// first.
    pub fn parse(text: &str, default_stage: Stage) -> Result<Self> {
        let mut file = Self::for_stage(default_stage);
        let mut levels = None;
        let mut preset = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let ctx = |e: Error| Error::Config { line: i + 1, msg: e.to_string() };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config { line: i + 1, msg: format!("expected `key = value`, got `{line}`") })?;
            let (k, v) = (k.trim(), v.trim());
            Self::apply(&mut file, &mut preset, &mut levels, k, v).map_err(ctx)?;
        }
        let channels = file.stage.channels();
        if let Some(name) = preset {
            file.model = ModelConfig::preset(&name, channels)?;
        }
        if let Some(levels) = levels {
            file.model.levels = levels;
        }
        file.model.input_channels = channels;
        file.model.validate()?;
        file.stage.validate()?;
        file.train.validate()?;
        Ok(file)
    }

    fn apply(
        file: &mut Self,
        preset: &mut Option<String>,
        levels: &mut Option<Vec<crate::nn::Level>>,
        k: &str,
        v: &str,
    ) -> Result<()> {
        let t = &mut file.train;
        let a = &mut t.augment;
        match k {
            "stage" => {
                let stage: Stage = v.parse()?;
                let keep = (file.train.clone(), file.data_dir.take(), file.out_dir.take());
                *file = Self::for_stage(stage);
                (file.train, file.data_dir, file.out_dir) = keep;
            }
            "learning_rate" => t.learning_rate = parse(v, "learning rate")?,
            "epochs" => t.epochs = parse(v, "epoch count")?,
            "batch_size" => t.batch_size = parse(v, "batch size")?,
            "folds" => t.folds = parse(v, "fold count")?,
            "seed" => t.seed = parse(v, "seed")?,
            "validation_samples" => t.validation_samples = parse(v, "validation sample cap")?,
            "ensemble" => {
                t.ensemble = match v {
                    "cv" => EnsembleKind::CrossValidation,
                    "single" => EnsembleKind::Single,
                    _ => return Err(invalid!("ensemble must be `cv` or `single`, got `{v}`")),
                }
            }
            "augment" => a.enabled = parse_bool(v)?,
            "flip_prob" => a.flip_prob = parse(v, "probability")?,
            "max_shift_frac" => a.max_shift_frac = parse(v, "shift fraction")?,
            "max_rotate_deg" => a.max_rotate_deg = parse(v, "rotation")?,
            "scale_range" => a.scale_range = parse_range(v)?,
            "contrast_range" => a.contrast_range = parse_range(v)?,
            "model" => *preset = Some(v.to_string()),
            "levels" => *levels = Some(parse_levels(v)?),
            "data_dir" => file.data_dir = Some(PathBuf::from(v)),
            "out_dir" => file.out_dir = Some(PathBuf::from(v)),
            _ => {
                if !file.stage.apply_key(k, v)? {
                    return Err(invalid!("unknown key `{k}`"));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, default_stage: Stage) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, default_stage)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::AxialFit;

    #[test]
    fn defaults_match_published_hyperparameters() {
        let t = TrainConfig::default();
        assert_eq!(t.learning_rate, 0.003);
        assert_eq!(t.epochs, 200);
        assert_eq!(t.folds, 5);
    }

    #[test]
    fn parses_overrides() {
        let text = "stage = 2\nepochs = 3 # short\nbatch_size=4\nseed = 9\naugment = false\n\
                    scale_range = 0.95, 1.05\nmodel = reduced\nlevels = 8:3:1,16:3:1\naxial = voi-square 64\n";
        let f = TrainFile::parse(text, Stage::Localize).unwrap();
        assert_eq!(f.stage.stage, Stage::Liver);
        assert_eq!(f.stage.axial, AxialFit::VoiSquare(64));
        assert_eq!((f.train.epochs, f.train.batch_size, f.train.seed), (3, 4, 9));
        assert!(!f.train.augment.enabled);
        assert_eq!(f.train.augment.scale_range, (0.95, 1.05));
        assert_eq!(f.model.levels.len(), 2);
        assert_eq!(f.model.input_channels, 3);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = TrainFile::parse("epochs = 3\nbatch_size = many\n", Stage::Tumor).unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }), "{err}");
        let err = TrainFile::parse("\nfrobnicate = 1\n", Stage::Tumor).unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }), "{err}");
    }

    #[test]
    fn tumor_stage_model_takes_four_channels() {
        let f = TrainFile::parse("stage = 3\n", Stage::Localize).unwrap();
        assert_eq!(f.model.input_channels, 4);
    }
}
