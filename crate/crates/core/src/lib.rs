//! EfficientNet-backed binary segmentation with a full-scale additive decoder.
//!
//! The crate is organized along the pipeline:
//!
//! * [`backbone`] — EfficientNet B0–B7 encoder and its five extracted stages,
//! * [`fusion`] — stage projections, nearest upsampling, additive fusion,
//!   Ghost modules and the sigmoid output,
//! * [`model`] — the assembled network and its parameter partition,
//! * [`data`] — dataset indexing, splits, resizing, augmentation, normalization,
//! * [`train`] — loss, optimizer, learning-rate schedule, epoch loop, checkpoints,
//! * [`eval`] — confusion counts and the F1 / mDice / mIoU / precision / recall report,
//! * [`orchestrator`] — the `train` / `evaluate` / `predict` / `params` commands.

pub mod backbone;
pub mod data;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod model;
pub mod nn;
pub mod orchestrator;
pub mod tensor;
pub mod train;
pub mod weights;

pub use backbone::{StagePyramid, Variant, VariantConfig, WeightSource};
pub use error::{Error, Result};
pub use fusion::{FusedMap, FusionHead, FusionHeadConfig};
pub use model::{EffiSegNet, ParamCount};
pub use tensor::{Real, Tensor};
