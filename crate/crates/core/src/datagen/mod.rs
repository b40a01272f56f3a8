//! Procedural photo/sketch datasets with zero-shot class splits.

mod archive;
mod augment;
mod dataset;
mod render;
mod shapes;

pub use archive::{
    decode_archive, encode_archive, read_dataset, read_manifest, validate_manifest, write_dataset, Manifest,
    ManifestClass, ManifestSplit, ARCHIVE_MAGIC, MANIFEST_FILE,
};
pub use augment::{augment, AugmentConfig};
pub use dataset::{
    certify_classes, generate_dataset, is_held_out, render_sample, Certificate, Dataset, Sample, SampleCounts,
    SplitKind, SplitSpec, DEFAULT_ORIGINAL, DEFAULT_SOURCE, DEFAULT_TARGET,
};
pub use render::{render_photo, render_sketch, Latent};
pub use shapes::{recipe, Primitive, Shape, RECIPE_NAMES};
