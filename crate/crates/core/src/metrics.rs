//! Dice evaluation, aggregate statistics and knowledge-transfer capability.

use alloc::string::String;
use alloc::vec::Vec;
use num_traits::Float;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::SegmentationModel;
use crate::types::ImageSample;

/// Dice overlap after binarizing both grids (strictly above `threshold`).
/// Two empty masks score 1.0.
pub fn dice_score(prediction: &Grid, reference: &Grid, threshold: f32) -> Result<f64> {
    prediction.ensure_same_dims(reference)?;
    let mut inter = 0u64;
    let mut a = 0u64;
    let mut b = 0u64;
    for (&p, &r) in prediction.as_slice().iter().zip(reference.as_slice()) {
        let p = p > threshold;
        let r = r > threshold;
        a += p as u64;
        b += r as u64;
        inter += (p && r) as u64;
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (a + b) as f64)
}

/// Per-sample Dice with mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model_id: String,
    pub dataset: String,
    #[serde(default)]
    pub sample_ids: Vec<String>,
    pub per_sample_dice: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl EvaluationReport {
    pub fn from_scores(
        model_id: impl Into<String>,
        dataset: impl Into<String>,
        sample_ids: Vec<String>,
        per_sample_dice: Vec<f64>,
    ) -> Result<Self> {
        if per_sample_dice.is_empty() {
            return Err(Error::Empty("per-sample dice"));
        }
        let n = per_sample_dice.len() as f64;
        let mean = per_sample_dice.iter().sum::<f64>() / n;
        let var = per_sample_dice
            .iter()
            .map(|d| (d - mean) * (d - mean))
            .sum::<f64>()
            / n;
        Ok(Self {
            model_id: model_id.into(),
            dataset: dataset.into(),
            sample_ids,
            per_sample_dice,
            mean,
            std: Float::sqrt(var),
        })
    }
}

/// Scores `model` against the reference masks of `samples`, in order.
pub fn evaluate(
    model: &dyn SegmentationModel,
    model_id: &str,
    dataset: &str,
    samples: &[ImageSample],
) -> Result<EvaluationReport> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut ids = Vec::with_capacity(samples.len());
    let mut scores = Vec::with_capacity(samples.len());
    for sample in samples {
        let reference = sample
            .reference_mask
            .as_ref()
            .ok_or_else(|| Error::MissingReference(sample.id.clone()))?;
        let prediction = model.predict(sample.pixels())?;
        scores.push(dice_score(&prediction, reference.values(), 0.5)?);
        ids.push(sample.id.clone());
    }
    EvaluationReport::from_scores(model_id, dataset, ids, scores)
}

/// Best student Dice as a percentage of the teacher Dice.
pub fn ktc(student_means: &[f64], teacher_mean: f64) -> Result<f64> {
    if !(teacher_mean > 0.0) {
        return Err(Error::NonPositiveTeacher(teacher_mean));
    }
    let best = student_means
        .iter()
        .copied()
        .fold(None, |acc: Option<f64>, v| {
            Some(acc.map_or(v, |a| a.max(v)))
        })
        .ok_or(Error::Empty("student scores"))?;
    Ok(100.0 * best / teacher_mean)
}
