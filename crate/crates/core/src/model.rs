//! Network-agnostic segmentation model contract and the architecture
//! registry.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::nn::graph::{mini_dilated, mini_unet};
use crate::types::MaskKind;

/// A named trainable tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
}

impl Param {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Architecture hyperparameters shared by the shipped networks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchSpec {
    pub base_channels: usize,
    /// Block-average factor applied to the canonical input before the
    /// first convolution; the output head upsamples by the same factor.
    pub stem_pool: usize,
    /// Emit thresholded 0/1 masks at inference instead of probabilities.
    pub binary_output: bool,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self {
            base_channels: 8,
            stem_pool: 8,
            binary_output: false,
        }
    }
}

impl ArchSpec {
    pub fn default_for(architecture_id: &str) -> Self {
        match architecture_id {
            MINI_DILATED => Self {
                base_channels: 12,
                stem_pool: 8,
                binary_output: false,
            },
            _ => Self::default(),
        }
    }

    pub fn output_kind(&self) -> MaskKind {
        if self.binary_output {
            MaskKind::Binary
        } else {
            MaskKind::Soft
        }
    }
}

/// Computes the loss for a predicted probability grid and returns it with
/// the gradient with respect to each probability.
pub type LossFn<'a> = dyn FnMut(&Grid) -> Result<(f64, Grid)> + 'a;

/// A segmentation network mapping canonical grayscale images to
/// same-size target probability grids.
pub trait SegmentationModel: Send + Sync {
    fn architecture_id(&self) -> &str;

    fn arch_spec(&self) -> &ArchSpec;

    fn output_kind(&self) -> MaskKind {
        self.arch_spec().output_kind()
    }

    fn parameters(&self) -> &[Param];

    fn parameters_mut(&mut self) -> &mut [Param];

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(Param::len).sum()
    }

    fn parameter_shapes(&self) -> Vec<Vec<usize>> {
        self.parameters().iter().map(|p| p.shape.clone()).collect()
    }

    /// Inference on one image. Output values lie in `[0, 1]` (exactly 0/1
    /// for binary-output models).
    fn predict(&self, image: &Grid) -> Result<Grid>;

    fn forward(&self, batch: &[Grid]) -> Result<Vec<Grid>> {
        batch.iter().map(|g| self.predict(g)).collect()
    }

    /// Forward and backward pass for one image; parameter gradients are
    /// added into `grads` (one buffer per parameter). Returns the loss.
    fn accumulate_gradients(
        &self,
        image: &Grid,
        loss: &mut LossFn<'_>,
        grads: &mut [Vec<f32>],
    ) -> Result<f64>;

    fn clone_box(&self) -> Box<dyn SegmentationModel>;

    /// Replaces every parameter, checking names and shapes.
    fn load_parameters(&mut self, params: Vec<Param>) -> Result<()> {
        let own = self.parameters_mut();
        if own.len() != params.len() {
            return Err(Error::ParameterMismatch(alloc::format!(
                "expected {} tensors, got {}",
                own.len(),
                params.len()
            )));
        }
        for (dst, src) in own.iter().zip(&params) {
            if dst.name != src.name || dst.shape != src.shape || src.value.len() != dst.value.len()
            {
                return Err(Error::ParameterMismatch(alloc::format!(
                    "tensor `{}` {:?} does not match `{}` {:?}",
                    src.name,
                    src.shape,
                    dst.name,
                    dst.shape
                )));
            }
        }
        for (dst, src) in own.iter_mut().zip(params) {
            dst.value = src.value;
        }
        Ok(())
    }
}

impl Clone for Box<dyn SegmentationModel> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

pub const MINI_UNET: &str = "mini_unet";
pub const MINI_DILATED: &str = "mini_dilated";

pub type Constructor = fn(&ArchSpec, u64) -> Result<Box<dyn SegmentationModel>>;

/// Maps architecture ids to constructors so external networks can be
/// plugged into every pipeline stage.
#[derive(Clone)]
pub struct ModelRegistry {
    entries: Vec<(String, Constructor)>,
}

impl Default for ModelRegistry {
    fn default() -> Self {
        let mut reg = Self::empty();
        reg.register(MINI_UNET, |spec, seed| Ok(Box::new(mini_unet(spec, seed)?)));
        reg.register(MINI_DILATED, |spec, seed| {
            Ok(Box::new(mini_dilated(spec, seed)?))
        });
        reg
    }
}

impl ModelRegistry {
    pub fn empty() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    /// Adds or replaces a constructor.
    pub fn register(&mut self, id: &str, ctor: Constructor) {
        if let Some(slot) = self.entries.iter_mut().find(|(k, _)| k == id) {
            slot.1 = ctor;
        } else {
            self.entries.push((id.to_string(), ctor));
        }
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|(k, _)| k.clone()).collect()
    }

    pub fn build(
        &self,
        id: &str,
        spec: &ArchSpec,
        seed: u64,
    ) -> Result<Box<dyn SegmentationModel>> {
        let ctor = self
            .entries
            .iter()
            .find(|(k, _)| k == id)
            .map(|(_, c)| *c)
            .ok_or_else(|| Error::UnknownArchitecture {
                requested: id.to_string(),
                registered: self.ids(),
            })?;
        ctor(spec, seed)
    }
}

/// Builds a freshly initialized model from the default registry.
pub fn build_model(id: &str, spec: &ArchSpec, seed: u64) -> Result<Box<dyn SegmentationModel>> {
    ModelRegistry::default().build(id, spec, seed)
}
