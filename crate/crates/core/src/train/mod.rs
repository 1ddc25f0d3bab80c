//! Stage datasets, the training loop and the bagging ensemble.

mod config;
mod ensemble;
mod fit;
mod stage;

pub use config::{EnsembleKind, TrainConfig, TrainFile};
pub use ensemble::{
    load_ensemble, train_ensemble, write_ensemble, Manifest, ManifestMember, TrainedMember, MANIFEST_FILE,
};
pub use fit::{evaluate_dice, kfold_split, stack_batch, train_model, TrainEvent, TrainHistory};
pub use stage::{build_stage_dataset, AxialFit, Case, SliceSample, Stage, StageFrame, StageInput, StageSpec};
