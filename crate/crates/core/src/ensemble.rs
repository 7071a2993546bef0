//! Weighted averaging of teacher outputs into one pseudo mask.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::types::{MaskKind, SoftMask};

/// Scales nonnegative weights to sum to one.
pub fn normalize_weights(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::InvalidWeights("no weights given".into()));
    }
    if let Some(bad) = raw.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidWeights(alloc::format!(
            "weight {bad} is negative or not finite"
        )));
    }
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidWeights("weights sum to zero".into()));
    }
    Ok(raw.iter().map(|w| w / total).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember {
    /// Checkpoint path or other identifier of the teacher.
    pub model_ref: String,
    pub weight: f64,
    pub output_kind: MaskKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherEnsemble {
    members: Vec<EnsembleMember>,
}

impl TeacherEnsemble {
    /// Builds an ensemble, normalizing member weights.
    pub fn new(mut members: Vec<EnsembleMember>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Empty("teacher ensemble"));
        }
        let raw: Vec<f64> = members.iter().map(|m| m.weight).collect();
        for (m, w) in members.iter_mut().zip(normalize_weights(&raw)?) {
            m.weight = w;
        }
        Ok(Self { members })
    }

    /// Equal-weight ensemble over `(model_ref, output_kind)` pairs.
    pub fn equal(members: impl IntoIterator<Item = (String, MaskKind)>) -> Result<Self> {
        Self::new(
            members
                .into_iter()
                .map(|(model_ref, output_kind)| EnsembleMember {
                    model_ref,
                    weight: 1.0,
                    output_kind,
                })
                .collect(),
        )
    }

    pub fn members(&self) -> &[EnsembleMember] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn output_kind(&self) -> MaskKind {
        if self.members.len() == 1 {
            self.members[0].output_kind
        } else {
            MaskKind::Soft
        }
    }

    /// Pixel-wise `sum_i w_i * m_i` over one mask per member.
    pub fn combine(&self, masks: &[SoftMask]) -> Result<SoftMask> {
        if masks.len() != self.members.len() {
            return Err(Error::MemberCountMismatch {
                expected: self.members.len(),
                found: masks.len(),
            });
        }
        let dims = masks[0].dims();
        for (index, m) in masks.iter().enumerate() {
            if m.dims() != dims {
                return Err(Error::MemberShapeMismatch {
                    index,
                    expected: dims,
                    found: m.dims(),
                });
            }
        }
        if masks.len() == 1 {
            return Ok(masks[0].clone());
        }
        let mut acc = alloc::vec![0.0f64; dims.0 * dims.1];
        for (member, mask) in self.members.iter().zip(masks) {
            for (a, &v) in acc.iter_mut().zip(mask.values().as_slice()) {
                *a += member.weight * v as f64;
            }
        }
        let values = acc.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect();
        SoftMask::new(Grid::new(dims.0, dims.1, values)?, MaskKind::Soft)
    }
}

pub fn ensemble_mask(
    ensemble: &TeacherEnsemble,
    per_member_masks: &[SoftMask],
) -> Result<SoftMask> {
    ensemble.combine(per_member_masks)
}
