//! Allocation-only core of `ktseg`: network-agnostic knowledge transfer for
//! binary semantic segmentation.
//!
//! Teachers pseudo-annotate a transferal set, masks without a salient
//! target are filtered out by target-pixel count and gray-level entropy,
//! and an independently architected student is trained on the curated
//! pseudo labels. Everything here works on in-memory grids; file formats,
//! run directories and the CLI live in the `ktseg` crate.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod augment;
pub mod ensemble;
pub mod error;
pub mod filtering;
pub mod grid;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod preprocess;
pub mod resample;
pub mod seed;
pub mod synth;
pub mod train;
pub mod types;

pub use error::{Error, Result};
pub use grid::Grid;
pub use model::{
    build_model, ArchSpec, ModelRegistry, Param, SegmentationModel, MINI_DILATED, MINI_UNET,
};
pub use types::{
    DatasetManifest, ExclusionReason, ImageSample, LossWeights, ManifestRecord, MaskKind, SoftMask,
    Split, TrainingConfig, CANONICAL_SIZE,
};
