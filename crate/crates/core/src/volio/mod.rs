//! Volumes on disk and the intensity/geometry preprocessing applied before
//! slices reach a network.

mod grid;
mod metaimage;
mod preprocess;

pub use grid::{Grid, LabelVolume, Mask, Volume, BACKGROUND, LIVER, TUMOR};
pub use metaimage::{
    read_labels, read_metaimage, read_volume, write_labels, write_metaimage, write_volume, ElementType, MetaHeader,
    MetaImage,
};
pub use preprocess::{
    clamp_hu, normalize_intensity, resample_z, resample_z_to, resampled_slice_count, resize_axial, stack_slices,
    Interp, Resample, HU_MAX, HU_MIN,
};
