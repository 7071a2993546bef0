//! Shared data model: images, masks, dataset manifests and training settings.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use num_traits::Float;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Side length of the square resolution every pipeline stage works at.
pub const CANONICAL_SIZE: usize = 384;

/// Whether a mask carries probabilities or hard 0/1 labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Soft,
    Binary,
}

/// Per-pixel target probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftMask {
    values: Grid,
    kind: MaskKind,
}

impl SoftMask {
    pub fn new(values: Grid, kind: MaskKind) -> Result<Self> {
        if let Some(&bad) = values.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutOfRange {
                what: "mask value",
                value: bad as f64,
            });
        }
        if kind == MaskKind::Binary {
            if let Some(&bad) = values.as_slice().iter().find(|&&v| v != 0.0 && v != 1.0) {
                return Err(Error::OutOfRange {
                    what: "binary mask value",
                    value: bad as f64,
                });
            }
        }
        Ok(Self { values, kind })
    }

    pub fn soft(values: Grid) -> Result<Self> {
        Self::new(values, MaskKind::Soft)
    }

    /// Thresholds `values` (strictly greater than `threshold` is target).
    pub fn binarized(values: &Grid, threshold: f32) -> Self {
        Self {
            values: values.map(|v| if v > threshold { 1.0 } else { 0.0 }),
            kind: MaskKind::Binary,
        }
    }

    #[inline]
    pub fn values(&self) -> &Grid {
        &self.values
    }

    #[inline]
    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dims()
    }

    pub fn into_values(self) -> Grid {
        self.values
    }
}

/// One canonical-resolution grayscale image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub id: String,
    pixels: Grid,
    pub reference_mask: Option<SoftMask>,
    pub source: String,
}

impl ImageSample {
    pub fn new(
        id: impl Into<String>,
        pixels: Grid,
        reference_mask: Option<SoftMask>,
        source: impl Into<String>,
    ) -> Result<Self> {
        if pixels.dims() != (CANONICAL_SIZE, CANONICAL_SIZE) {
            return Err(Error::ShapeMismatch {
                expected: (CANONICAL_SIZE, CANONICAL_SIZE),
                found: pixels.dims(),
            });
        }
        if let Some(&bad) = pixels.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutOfRange {
                what: "pixel intensity",
                value: bad as f64,
            });
        }
        if let Some(mask) = &reference_mask {
            pixels.ensure_same_dims(mask.values())?;
        }
        Ok(Self {
            id: id.into(),
            pixels,
            reference_mask,
            source: source.into(),
        })
    }

    #[inline]
    pub fn pixels(&self) -> &Grid {
        &self.pixels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    Finetune,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    FewTargetPixels,
    HighEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub sample_id: String,
    pub image_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
    #[serde(default)]
    pub excluded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exclusion_reason: Option<ExclusionReason>,
}

impl ManifestRecord {
    pub fn new(sample_id: impl Into<String>, image_path: impl Into<String>) -> Self {
        Self {
            sample_id: sample_id.into(),
            image_path: image_path.into(),
            mask_path: None,
            excluded: false,
            exclusion_reason: None,
        }
    }

    pub fn with_mask(mut self, mask_path: impl Into<String>) -> Self {
        self.mask_path = Some(mask_path.into());
        self
    }
}

/// Ordered collection of sample records for one split of one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub split: Split,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    /// Builds a manifest, rejecting duplicate ids and reasonless exclusions.
    pub fn new(
        name: impl Into<String>,
        split: Split,
        records: Vec<ManifestRecord>,
    ) -> Result<Self> {
        let manifest = Self {
            name: name.into(),
            split,
            records,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for record in &self.records {
            if !seen.insert(record.sample_id.as_str()) {
                return Err(Error::DuplicateId(record.sample_id.clone()));
            }
            if record.excluded && record.exclusion_reason.is_none() {
                return Err(Error::MissingExclusionReason(record.sample_id.clone()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn kept(&self) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(|r| !r.excluded)
    }

    pub fn kept_count(&self) -> usize {
        self.kept().count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub dice: f64,
    pub bce: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            dice: 1.0,
            bce: 1.0,
        }
    }
}

/// Optimizer and schedule settings shared by every training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Image presentations per run; when set, student epochs are derived
    /// as `budget / kept_count` instead of using `epochs`.
    pub epoch_budget: Option<usize>,
    pub max_epochs: usize,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub binarize_pseudo_targets: bool,
    pub augment: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 4,
            epochs: 500,
            epoch_budget: None,
            max_epochs: 500,
            seed: 0,
            loss_weights: LossWeights::default(),
            binarize_pseudo_targets: true,
            augment: true,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(
                "learning_rate must be positive".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidConfig("max_epochs must be at least 1".into()));
        }
        let w = self.loss_weights;
        if !(w.dice >= 0.0 && w.bce >= 0.0) || (w.dice == 0.0 && w.bce == 0.0) {
            return Err(Error::InvalidConfig(
                "loss weights must be nonnegative and not both zero".into(),
            ));
        }
        Ok(())
    }

    /// Epoch count for a dataset of `images` samples: the explicit `epochs`
    /// unless an `epoch_budget` is configured.
    pub fn epochs_for(&self, images: usize) -> usize {
        match self.epoch_budget {
            Some(budget) if images > 0 => {
                let raw = Float::round(budget as f64 / images as f64) as usize;
                raw.clamp(1, self.max_epochs)
            }
            _ => self.epochs,
        }
    }
}
