//! Convolutional-deconvolutional segmentation networks: configuration,
//! parameter layout, Jaccard loss and checkpoints.

mod checkpoint;
mod config;
mod loss;
mod model;

pub use checkpoint::{from_bytes, load_checkpoint, save_checkpoint, to_bytes, MAGIC, VERSION};
pub use config::{layer_plan, parse_levels, DropoutSite, Layer, Level, ModelConfig, DROPOUT_P, OUTPUT_CHANNELS};
pub use loss::{jaccard_loss, jaccard_loss_grad, LossValue, PredictionBatch, TargetBatch};
pub use model::{param_count, CdnnModel, Forward};

use rand::Rng;

use crate::error::Result;

/// Builds a freshly initialized network for `config`.
pub fn build_cdnn<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<CdnnModel> {
    CdnnModel::build(config, rng)
}
