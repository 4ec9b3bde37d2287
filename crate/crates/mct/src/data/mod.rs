//! Scene ingestion, normalisation, patch extraction and train/test splits.

pub mod convert;
pub mod cube;
pub mod normalize;
pub mod patch;
pub mod reference;
pub mod split;
pub mod stream;
pub mod synthetic;

pub use convert::{convert_bytes, convert_file, Converted, Sidecar};
pub use cube::{GroundTruth, HsiCube};
pub use normalize::normalize_bands;
pub use patch::{extract_patch, stack_patches, Patch};
pub use split::{stratified_split, SplitSpec};
pub use stream::PretrainStream;
