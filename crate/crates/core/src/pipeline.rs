//! In-memory training and transfer stages.
//!
//! Stages consume images and masks only; a student never sees teacher
//! weights or the teacher's training data.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentationConfig;
use crate::ensemble::TeacherEnsemble;
use crate::error::{Error, Result};
use crate::filtering::{curate_measured, CurationReport, FilterCriteria, MaskStats, MeasuredMask};
use crate::grid::Grid;
use crate::model::SegmentationModel;
use crate::train::{fit, Example};
use crate::types::{DatasetManifest, ImageSample, ManifestRecord, SoftMask, TrainingConfig};

/// Handling of per-sample failures during pseudo-annotation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorPolicy {
    #[default]
    FailFast,
    /// Drop the failing record from the output and report it.
    SkipAndLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub epochs: usize,
    pub loss_curve: Vec<f64>,
}

/// Pairs every sample with its reference mask.
pub fn labeled_examples(samples: &[ImageSample]) -> Result<Vec<Example>> {
    samples
        .iter()
        .map(|s| {
            let mask = s
                .reference_mask
                .as_ref()
                .ok_or_else(|| Error::MissingReference(s.id.clone()))?;
            Ok(Example {
                image: s.pixels().clone(),
                target: mask.values().clone(),
            })
        })
        .collect()
}

fn run(
    model: &mut dyn SegmentationModel,
    examples: &[Example],
    epochs: usize,
    cfg: &TrainingConfig,
    aug: &AugmentationConfig,
    on_epoch: &mut dyn FnMut(usize, f64),
) -> Result<TrainOutcome> {
    let loss_curve = fit(model, examples, epochs, cfg, Some(aug), on_epoch)?;
    Ok(TrainOutcome { epochs, loss_curve })
}

/// Supervised training on reference masks for `cfg.epochs` epochs.
pub fn train_teacher(
    model: &mut dyn SegmentationModel,
    samples: &[ImageSample],
    cfg: &TrainingConfig,
    aug: &AugmentationConfig,
    on_epoch: &mut dyn FnMut(usize, f64),
) -> Result<TrainOutcome> {
    run(
        model,
        &labeled_examples(samples)?,
        cfg.epochs,
        cfg,
        aug,
        on_epoch,
    )
}

/// From-scratch baseline; the same path as [`train_teacher`] on a freshly
/// initialized model.
pub fn train_scratch_baseline(
    model: &mut dyn SegmentationModel,
    samples: &[ImageSample],
    cfg: &TrainingConfig,
    aug: &AugmentationConfig,
    on_epoch: &mut dyn FnMut(usize, f64),
) -> Result<TrainOutcome> {
    train_teacher(model, samples, cfg, aug, on_epoch)
}

/// Result of pseudo-annotating a transferal set.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoAnnotation {
    /// Curated manifest; kept records still need their `mask_path` set
    /// once the masks are stored.
    pub manifest: DatasetManifest,
    pub report: CurationReport,
    /// Ensemble masks for kept records only.
    pub masks: BTreeMap<String, SoftMask>,
    /// Records skipped under [`ErrorPolicy::SkipAndLog`], with the error.
    pub skipped: Vec<(String, String)>,
}

fn annotate_one(
    teachers: &[&dyn SegmentationModel],
    ensemble: &TeacherEnsemble,
    image: &Grid,
) -> Result<SoftMask> {
    let masks = teachers
        .iter()
        .map(|t| SoftMask::new(t.predict(image)?, t.output_kind()))
        .collect::<Result<Vec<_>>>()?;
    ensemble.combine(&masks)
}

/// Runs the weighted teacher ensemble over every record of `manifest`,
/// measures each pseudo mask and curates the manifest. `teachers[i]` is the
/// model behind `ensemble.members()[i]`; `load` yields each record's
/// canonical image.
pub fn pseudo_annotate<E: ToString>(
    teachers: &[&dyn SegmentationModel],
    ensemble: &TeacherEnsemble,
    manifest: &DatasetManifest,
    criteria: &FilterCriteria,
    policy: ErrorPolicy,
    load: &mut dyn FnMut(&ManifestRecord) -> core::result::Result<Grid, E>,
) -> core::result::Result<PseudoAnnotation, PipelineError<E>> {
    if teachers.len() != ensemble.len() {
        return Err(Error::MemberCountMismatch {
            expected: ensemble.len(),
            found: teachers.len(),
        }
        .into());
    }
    criteria.validate()?;
    let mut measured = BTreeMap::new();
    let mut masks = BTreeMap::new();
    let mut skipped = Vec::new();
    let mut records = Vec::with_capacity(manifest.len());
    for record in &manifest.records {
        let mask = match load(record) {
            Ok(image) => annotate_one(teachers, ensemble, &image).map_err(PipelineError::Core),
            Err(e) => Err(PipelineError::Load(e)),
        };
        let mask = match (mask, policy) {
            (Ok(m), _) => m,
            (Err(e), ErrorPolicy::FailFast) => return Err(e),
            (Err(e), ErrorPolicy::SkipAndLog) => {
                skipped.push((record.sample_id.clone(), e.to_string()));
                continue;
            }
        };
        measured.insert(
            record.sample_id.clone(),
            MeasuredMask {
                stats: MaskStats::measure(&mask, criteria.entropy_bins),
                kind: mask.kind(),
            },
        );
        masks.insert(record.sample_id.clone(), mask);
        records.push(ManifestRecord {
            mask_path: None,
            ..record.clone()
        });
    }
    let input = DatasetManifest::new(manifest.name.clone(), manifest.split, records)?;
    let (curated, report) = curate_measured(&input, &measured, criteria)?;
    for r in curated.records.iter().filter(|r| r.excluded) {
        masks.remove(&r.sample_id);
    }
    Ok(PseudoAnnotation {
        manifest: curated,
        report,
        masks,
        skipped,
    })
}

/// Either a core failure or an error from the caller's image loader.
#[derive(Debug, Clone, PartialEq)]
pub enum PipelineError<E> {
    Core(Error),
    Load(E),
}

impl<E> From<Error> for PipelineError<E> {
    fn from(e: Error) -> Self {
        Self::Core(e)
    }
}

impl<E: ToString> core::fmt::Display for PipelineError<E> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::Core(e) => core::fmt::Display::fmt(e, f),
            Self::Load(e) => f.write_str(&e.to_string()),
        }
    }
}

/// Trains a student on pseudo-labelled examples for
/// `cfg.epochs_for(examples.len())` epochs.
pub fn train_student(
    model: &mut dyn SegmentationModel,
    pseudo: &[Example],
    cfg: &TrainingConfig,
    aug: &AugmentationConfig,
    on_epoch: &mut dyn FnMut(usize, f64),
) -> Result<TrainOutcome> {
    if pseudo.is_empty() {
        return Err(Error::Empty("curated pseudo-annotated set"));
    }
    run(
        model,
        pseudo,
        cfg.epochs_for(pseudo.len()),
        cfg,
        aug,
        on_epoch,
    )
}

/// Continues training `model` on labelled downstream data. Zero epochs
/// leaves the model untouched. When `expected_architecture` is given it
/// must match the model.
pub fn finetune(
    model: &mut dyn SegmentationModel,
    expected_architecture: Option<&str>,
    samples: &[ImageSample],
    epochs: usize,
    cfg: &TrainingConfig,
    aug: &AugmentationConfig,
    on_epoch: &mut dyn FnMut(usize, f64),
) -> Result<TrainOutcome> {
    if let Some(expected) = expected_architecture {
        if expected != model.architecture_id() {
            return Err(Error::ArchitectureMismatch {
                expected: expected.to_string(),
                found: model.architecture_id().to_string(),
            });
        }
    }
    let examples = labeled_examples(samples)?;
    if epochs == 0 {
        return Ok(TrainOutcome {
            epochs: 0,
            loss_curve: Vec::new(),
        });
    }
    run(model, &examples, epochs, cfg, aug, on_epoch)
}

/// Examples for the kept records of a pseudo annotation, in manifest order.
pub fn pseudo_examples(
    annotation: &PseudoAnnotation,
    images: &BTreeMap<String, Grid>,
) -> Result<Vec<Example>> {
    annotation
        .manifest
        .kept()
        .map(|r| {
            let image = images.get(&r.sample_id).ok_or_else(|| {
                Error::InvalidInput(alloc::format!("no image for `{}`", r.sample_id))
            })?;
            let mask = annotation
                .masks
                .get(&r.sample_id)
                .ok_or_else(|| Error::MissingMask(r.sample_id.clone()))?;
            Ok(Example {
                image: image.clone(),
                target: mask.values().clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArchSpec, LossFn, Param};
    use crate::types::{ExclusionReason, MaskKind, Split};
    use alloc::boxed::Box;
    use alloc::format;
    use alloc::vec;

    /// Teacher that returns a fixed function of the input.
    #[derive(Clone)]
    struct Oracle {
        spec: ArchSpec,
        f: fn(&Grid) -> Grid,
        params: Vec<Param>,
    }

    impl SegmentationModel for Oracle {
        fn architecture_id(&self) -> &str {
            "oracle"
        }
        fn arch_spec(&self) -> &ArchSpec {
            &self.spec
        }
        fn parameters(&self) -> &[Param] {
            &self.params
        }
        fn parameters_mut(&mut self) -> &mut [Param] {
            &mut self.params
        }
        fn predict(&self, image: &Grid) -> Result<Grid> {
            Ok((self.f)(image))
        }
        fn accumulate_gradients(
            &self,
            _: &Grid,
            _: &mut LossFn<'_>,
            _: &mut [Vec<f32>],
        ) -> Result<f64> {
            Ok(0.0)
        }
        fn clone_box(&self) -> Box<dyn SegmentationModel> {
            Box::new(self.clone())
        }
    }

    fn oracle(f: fn(&Grid) -> Grid, binary: bool) -> Oracle {
        Oracle {
            spec: ArchSpec {
                binary_output: binary,
                ..ArchSpec::default()
            },
            f,
            params: Vec::new(),
        }
    }

    fn manifest(n: usize) -> DatasetManifest {
        let records = (0..n)
            .map(|i| ManifestRecord::new(format!("s{i}"), format!("img{i}.png")))
            .collect();
        DatasetManifest::new("transfer", Split::Train, records).unwrap()
    }

    #[test]
    fn all_zero_teacher_keeps_nothing() {
        let t = oracle(|g| Grid::filled(g.width(), g.height(), 0.0), false);
        let ens = TeacherEnsemble::equal([("t".into(), MaskKind::Soft)]).unwrap();
        let m = manifest(10);
        let out = pseudo_annotate::<Error>(
            &[&t],
            &ens,
            &m,
            &FilterCriteria::default(),
            ErrorPolicy::FailFast,
            &mut |_| Ok(Grid::filled(384, 384, 0.4)),
        )
        .unwrap();
        assert_eq!(out.report.kept, 0);
        assert_eq!(out.report.excluded_by_reason.few_target_pixels, 10);
        assert!(out.masks.is_empty());
        assert!(out
            .manifest
            .records
            .iter()
            .all(|r| r.exclusion_reason == Some(ExclusionReason::FewTargetPixels)));
    }

    #[test]
    fn identity_teacher_keeps_disks() {
        let t = oracle(|g| g.map(|v| (v > 0.5) as u8 as f32), true);
        let ens = TeacherEnsemble::equal([("t".into(), MaskKind::Binary)]).unwrap();
        let m = manifest(6);
        let out = pseudo_annotate::<Error>(
            &[&t],
            &ens,
            &m,
            &FilterCriteria::default(),
            ErrorPolicy::FailFast,
            &mut |r| {
                let k = r.sample_id[1..].parse::<f32>().unwrap();
                Ok(Grid::from_fn(384, 384, |x, y| {
                    let (dx, dy) = (x as f32 - 192.0, y as f32 - 192.0);
                    (dx * dx + dy * dy < (30.0 + 5.0 * k).powi(2)) as u8 as f32
                }))
            },
        )
        .unwrap();
        assert_eq!(out.report.kept, 6);
        assert_eq!(out.manifest.kept_count(), out.report.kept);
        assert_eq!(out.masks.len(), 6);
    }

    #[test]
    fn loader_errors_follow_policy() {
        let t = oracle(|g| g.clone(), false);
        let ens = TeacherEnsemble::equal([("t".into(), MaskKind::Soft)]).unwrap();
        let m = manifest(4);
        let mut load = |r: &ManifestRecord| {
            if r.sample_id == "s2" {
                Err("decode failed")
            } else {
                Ok(Grid::filled(384, 384, 1.0))
            }
        };
        let err = pseudo_annotate(
            &[&t],
            &ens,
            &m,
            &FilterCriteria::default(),
            ErrorPolicy::FailFast,
            &mut load,
        )
        .unwrap_err();
        assert_eq!(err, PipelineError::Load("decode failed"));
        let out = pseudo_annotate(
            &[&t],
            &ens,
            &m,
            &FilterCriteria::default(),
            ErrorPolicy::SkipAndLog,
            &mut load,
        )
        .unwrap();
        assert_eq!(
            out.skipped,
            vec![("s2".to_string(), "decode failed".to_string())]
        );
        assert_eq!(out.manifest.len(), 3);
        assert_eq!(out.report.total, 3);
    }

    #[test]
    fn teacher_count_must_match_ensemble() {
        let t = oracle(|g| g.clone(), false);
        let ens =
            TeacherEnsemble::equal([("a".into(), MaskKind::Soft), ("b".into(), MaskKind::Soft)])
                .unwrap();
        let err = pseudo_annotate::<Error>(
            &[&t],
            &ens,
            &manifest(1),
            &FilterCriteria::default(),
            ErrorPolicy::FailFast,
            &mut |_| Ok(Grid::filled(384, 384, 1.0)),
        );
        assert!(matches!(
            err,
            Err(PipelineError::Core(Error::MemberCountMismatch { .. }))
        ));
    }

    #[test]
    fn student_needs_kept_records() {
        let mut t = oracle(|g| g.clone(), false);
        let err = train_student(
            &mut t,
            &[],
            &TrainingConfig::default(),
            &AugmentationConfig::default(),
            &mut |_, _| {},
        );
        assert!(matches!(err, Err(Error::Empty(_))));
    }

    #[test]
    fn unlabeled_teacher_data_is_rejected() {
        let mut t = oracle(|g| g.clone(), false);
        let s = ImageSample::new("u", Grid::filled(384, 384, 0.5), None, "x").unwrap();
        let err = train_teacher(
            &mut t,
            &[s],
            &TrainingConfig::default(),
            &AugmentationConfig::default(),
            &mut |_, _| {},
        );
        assert_eq!(err, Err(Error::MissingReference("u".into())));
    }

    #[test]
    fn finetune_checks_architecture() {
        let mut t = oracle(|g| g.clone(), false);
        let s = ImageSample::new(
            "u",
            Grid::filled(384, 384, 0.5),
            Some(SoftMask::binarized(&Grid::filled(384, 384, 0.0), 0.5)),
            "x",
        )
        .unwrap();
        let cfg = TrainingConfig::default();
        let aug = AugmentationConfig::default();
        let err = finetune(
            &mut t,
            Some("mini_unet"),
            core::slice::from_ref(&s),
            1,
            &cfg,
            &aug,
            &mut |_, _| {},
        );
        assert!(matches!(err, Err(Error::ArchitectureMismatch { .. })));
        let out = finetune(&mut t, Some("oracle"), &[s], 0, &cfg, &aug, &mut |_, _| {}).unwrap();
        assert_eq!(out.epochs, 0);
    }
}
