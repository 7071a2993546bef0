//! File-backed pipeline stages and their run records.
//!
//! A run directory holds:
//!
//! ```text
//! <out>/config.toml          configuration snapshot of the latest stage
//! <out>/manifests/<name>.json
//! <out>/masks/<name>/<id>.{png,smask}
//! <out>/checkpoints/<name>.ckpt
//! <out>/reports/<name>_{curation,eval}.json
//! <out>/records/<run_id>.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ktseg_core::ensemble::{EnsembleMember, TeacherEnsemble};
use ktseg_core::filtering::CurationReport;
use ktseg_core::metrics::{evaluate, EvaluationReport};
use ktseg_core::pipeline::{self, PipelineError, TrainOutcome};
use ktseg_core::seed::{derive_seed, hash_str};
use ktseg_core::train::Example;
use ktseg_core::{DatasetManifest, ImageSample, ModelRegistry, SegmentationModel};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint_with, save_checkpoint, Provenance};
use crate::config::{ModelConfig, RunConfig};
use crate::error::{KtError, Result};
use crate::imageio::{load_image, load_mask, load_record, save_mask};
use crate::manifest::{load_manifest, save_manifest};

const INIT_TAG: u64 = 0x1417;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    TrainTeacher,
    PseudoAnnotate,
    TrainStudent,
    Finetune,
    TrainScratch,
    Evaluate,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::TrainTeacher => "train_teacher",
            Self::PseudoAnnotate => "pseudo_annotate",
            Self::TrainStudent => "train_student",
            Self::Finetune => "finetune",
            Self::TrainScratch => "train_scratch",
            Self::Evaluate => "evaluate",
        }
    }
}

/// Stage inputs beyond the run configuration. `name` labels the outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "stage")]
pub enum StageArgs {
    TrainTeacher {
        manifest: PathBuf,
        architecture: Option<String>,
        name: String,
    },
    PseudoAnnotate {
        teachers: Vec<PathBuf>,
        /// Equal weights when absent.
        weights: Option<Vec<f64>>,
        manifest: PathBuf,
        name: String,
    },
    TrainStudent {
        manifest: PathBuf,
        architecture: Option<String>,
        name: String,
    },
    Finetune {
        checkpoint: PathBuf,
        manifest: PathBuf,
        /// Required architecture of the checkpoint, if any.
        architecture: Option<String>,
        /// Defaults to `finetune_epochs` from the configuration.
        epochs: Option<usize>,
        name: String,
    },
    TrainScratch {
        manifest: PathBuf,
        architecture: Option<String>,
        name: String,
    },
    Evaluate {
        manifest: PathBuf,
        /// Evaluates a freshly initialized `architecture` when absent.
        checkpoint: Option<PathBuf>,
        architecture: Option<String>,
        name: String,
    },
}

impl StageArgs {
    pub fn stage(&self) -> Stage {
        match self {
            Self::TrainTeacher { .. } => Stage::TrainTeacher,
            Self::PseudoAnnotate { .. } => Stage::PseudoAnnotate,
            Self::TrainStudent { .. } => Stage::TrainStudent,
            Self::Finetune { .. } => Stage::Finetune,
            Self::TrainScratch { .. } => Stage::TrainScratch,
            Self::Evaluate { .. } => Stage::Evaluate,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Self::TrainTeacher { name, .. }
            | Self::PseudoAnnotate { name, .. }
            | Self::TrainStudent { name, .. }
            | Self::Finetune { name, .. }
            | Self::TrainScratch { name, .. }
            | Self::Evaluate { name, .. } => name,
        }
    }

    fn absolutize(&mut self) {
        let abs = |p: &mut PathBuf| {
            if let Ok(c) = fs::canonicalize(&*p) {
                *p = c;
            }
        };
        match self {
            Self::TrainTeacher { manifest, .. }
            | Self::TrainStudent { manifest, .. }
            | Self::TrainScratch { manifest, .. } => abs(manifest),
            Self::PseudoAnnotate {
                teachers, manifest, ..
            } => {
                teachers.iter_mut().for_each(abs);
                abs(manifest);
            }
            Self::Finetune {
                checkpoint,
                manifest,
                ..
            } => {
                abs(checkpoint);
                abs(manifest);
            }
            Self::Evaluate {
                manifest,
                checkpoint,
                ..
            } => {
                abs(manifest);
                checkpoint.iter_mut().for_each(abs);
            }
        }
    }
}

/// Everything needed to audit or replay one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub stage: Stage,
    pub args: StageArgs,
    pub config: RunConfig,
    pub input_manifests: Vec<PathBuf>,
    pub output_manifests: Vec<PathBuf>,
    pub input_checkpoints: Vec<PathBuf>,
    pub output_checkpoints: Vec<PathBuf>,
    pub reports: Vec<PathBuf>,
    pub epochs: usize,
    pub loss_curve: Vec<f64>,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| KtError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| KtError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Paths of every stage output.
    pub fn outputs(&self) -> impl Iterator<Item = &PathBuf> {
        self.output_manifests
            .iter()
            .chain(&self.output_checkpoints)
            .chain(&self.reports)
    }
}

/// Receives progress lines.
pub type Log<'a> = dyn FnMut(&str) + 'a;

/// Shared state for running stages into one run directory.
pub struct Runner {
    pub registry: ModelRegistry,
    pub config: RunConfig,
    pub out: PathBuf,
}

struct Outputs {
    input_manifests: Vec<PathBuf>,
    output_manifests: Vec<PathBuf>,
    input_checkpoints: Vec<PathBuf>,
    output_checkpoints: Vec<PathBuf>,
    reports: Vec<PathBuf>,
    outcome: TrainOutcome,
}

impl Outputs {
    fn new(outcome: TrainOutcome) -> Self {
        Self {
            input_manifests: Vec::new(),
            output_manifests: Vec::new(),
            input_checkpoints: Vec::new(),
            output_checkpoints: Vec::new(),
            reports: Vec::new(),
            outcome,
        }
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| KtError::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, text + "\n").map_err(|e| KtError::io(path, e))
}

/// Loads the kept records of a labelled manifest, failing on the first
/// record without a mask before any image is decoded.
pub fn load_labeled(manifest: &DatasetManifest) -> Result<Vec<ImageSample>> {
    if let Some(r) = manifest.kept().find(|r| r.mask_path.is_none()) {
        return Err(KtError::Unlabeled(r.sample_id.clone()));
    }
    let samples: Vec<_> = manifest
        .kept()
        .map(|r| load_record(r, &manifest.name))
        .collect::<Result<_>>()?;
    if samples.is_empty() {
        return Err(KtError::NothingKept(manifest.name.clone()));
    }
    Ok(samples)
}

impl Runner {
    pub fn new(config: RunConfig, out: impl Into<PathBuf>) -> Self {
        Self {
            registry: ModelRegistry::default(),
            config,
            out: out.into(),
        }
    }

    pub fn checkpoint_path(&self, name: &str) -> PathBuf {
        self.out.join("checkpoints").join(format!("{name}.ckpt"))
    }

    pub fn manifest_path(&self, name: &str) -> PathBuf {
        self.out.join("manifests").join(format!("{name}.json"))
    }

    pub fn report_path(&self, name: &str, kind: &str) -> PathBuf {
        self.out.join("reports").join(format!("{name}_{kind}.json"))
    }

    pub fn record_path(&self, run_id: &str) -> PathBuf {
        self.out.join("records").join(format!("{run_id}.json"))
    }

    fn fresh_model(
        &self,
        role: &ModelConfig,
        architecture: Option<&str>,
        name: &str,
    ) -> Result<Box<dyn SegmentationModel>> {
        let id = architecture.unwrap_or(&role.architecture);
        let spec = if id == role.architecture {
            role.arch_spec()
        } else {
            ktseg_core::ArchSpec::default_for(id)
        };
        let seed = derive_seed(self.config.training.seed, &[INIT_TAG, hash_str(name)]);
        Ok(self.registry.build(id, &spec, seed)?)
    }

    fn save_model(
        &self,
        model: &dyn SegmentationModel,
        epoch: usize,
        name: &str,
    ) -> Result<PathBuf> {
        let path = self.checkpoint_path(name);
        let provenance = Provenance {
            epoch,
            seed: self.config.training.seed,
            training_config: Some(self.config.training.clone()),
        };
        save_checkpoint(model, &provenance, &path)?;
        Ok(path)
    }

    /// Runs one stage, persisting its outputs and run record.
    pub fn execute(&self, args: &StageArgs, log: &mut Log<'_>) -> Result<RunRecord> {
        self.config.validate()?;
        let mut args = args.clone();
        args.absolutize();
        fs::create_dir_all(&self.out).map_err(|e| KtError::io(&self.out, e))?;
        let config_path = self.out.join("config.toml");
        fs::write(&config_path, self.config.to_toml()).map_err(|e| KtError::io(&config_path, e))?;

        let started = Instant::now();
        let outputs = match &args {
            StageArgs::TrainTeacher {
                manifest,
                architecture,
                name,
            } => self.supervised(
                manifest,
                &self.config.teacher,
                architecture.as_deref(),
                name,
                log,
            )?,
            StageArgs::TrainScratch {
                manifest,
                architecture,
                name,
            } => self.supervised(
                manifest,
                &self.config.student,
                architecture.as_deref(),
                name,
                log,
            )?,
            StageArgs::PseudoAnnotate {
                teachers,
                weights,
                manifest,
                name,
            } => self.pseudo_annotate(teachers, weights.as_deref(), manifest, name, log)?,
            StageArgs::TrainStudent {
                manifest,
                architecture,
                name,
            } => self.train_student(manifest, architecture.as_deref(), name, log)?,
            StageArgs::Finetune {
                checkpoint,
                manifest,
                architecture,
                epochs,
                name,
            } => self.finetune(
                checkpoint,
                manifest,
                architecture.as_deref(),
                *epochs,
                name,
                log,
            )?,
            StageArgs::Evaluate {
                manifest,
                checkpoint,
                architecture,
                name,
            } => self.evaluate(
                manifest,
                checkpoint.as_deref(),
                architecture.as_deref(),
                name,
                log,
            )?,
        };
        let stage = args.stage();
        let run_id = format!("{}-{}", stage.as_str(), args.name());
        let record = RunRecord {
            run_id: run_id.clone(),
            stage,
            config: self.config.clone(),
            input_manifests: outputs.input_manifests,
            output_manifests: outputs.output_manifests,
            input_checkpoints: outputs.input_checkpoints,
            output_checkpoints: outputs.output_checkpoints,
            reports: outputs.reports,
            epochs: outputs.outcome.epochs,
            loss_curve: outputs.outcome.loss_curve,
            wall_clock_secs: started.elapsed().as_secs_f64(),
            args,
        };
        write_json(&record, &self.record_path(&run_id))?;
        Ok(record)
    }

    fn train_log<'a, 'b: 'a>(
        log: &'a mut Log<'b>,
        name: &'a str,
        total: usize,
    ) -> Box<dyn FnMut(usize, f64) + 'a> {
        Box::new(move |epoch, loss| {
            log(&format!(
                "{name}: epoch {}/{total} loss {loss:.5}",
                epoch + 1
            ))
        })
    }

    fn supervised(
        &self,
        manifest: &Path,
        role: &ModelConfig,
        architecture: Option<&str>,
        name: &str,
        log: &mut Log<'_>,
    ) -> Result<Outputs> {
        let m = load_manifest(manifest)?;
        let samples = load_labeled(&m)?;
        let mut model = self.fresh_model(role, architecture, name)?;
        let outcome = pipeline::train_teacher(
            model.as_mut(),
            &samples,
            &self.config.training,
            &self.config.augmentation,
            &mut Self::train_log(log, name, self.config.training.epochs),
        )?;
        let mut out = Outputs::new(outcome);
        out.output_checkpoints
            .push(self.save_model(model.as_ref(), out.outcome.epochs, name)?);
        out.input_manifests.push(manifest.to_path_buf());
        Ok(out)
    }

    fn pseudo_annotate(
        &self,
        teachers: &[PathBuf],
        weights: Option<&[f64]>,
        manifest: &Path,
        name: &str,
        log: &mut Log<'_>,
    ) -> Result<Outputs> {
        if teachers.is_empty() {
            return Err(KtError::InvalidArgument(
                "at least one teacher checkpoint is required".into(),
            ));
        }
        if let Some(w) = weights {
            if w.len() != teachers.len() {
                return Err(KtError::InvalidArgument(format!(
                    "{} weights given for {} teachers",
                    w.len(),
                    teachers.len()
                )));
            }
        }
        let models = teachers
            .iter()
            .map(|p| load_checkpoint_with(&self.registry, p).map(|c| c.model))
            .collect::<Result<Vec<_>>>()?;
        let ensemble = TeacherEnsemble::new(
            teachers
                .iter()
                .zip(&models)
                .enumerate()
                .map(|(i, (p, m))| EnsembleMember {
                    model_ref: p.to_string_lossy().into_owned(),
                    weight: weights.map_or(1.0, |w| w[i]),
                    output_kind: m.output_kind(),
                })
                .collect(),
        )?;
        let refs: Vec<&dyn SegmentationModel> = models.iter().map(|m| m.as_ref()).collect();
        let input = load_manifest(manifest)?;
        let criteria = self.config.filter.clone();
        let total = input.len();
        let mut done = 0;
        let result = pipeline::pseudo_annotate(
            &refs,
            &ensemble,
            &input,
            &criteria,
            self.config.on_error,
            &mut |r| {
                done += 1;
                if done % 64 == 0 || done == total {
                    log(&format!("{name}: annotated {done}/{total}"));
                }
                load_image(Path::new(&r.image_path))
            },
        );
        let mut annotation = match result {
            Ok(a) => a,
            Err(PipelineError::Core(e)) => return Err(e.into()),
            Err(PipelineError::Load(e)) => return Err(e),
        };
        for (id, err) in &annotation.skipped {
            log(&format!("{name}: skipped `{id}`: {err}"));
        }

        let mask_dir = self.out.join("masks").join(name);
        if mask_dir.exists() {
            fs::remove_dir_all(&mask_dir).map_err(|e| KtError::io(&mask_dir, e))?;
        }
        for record in annotation
            .manifest
            .records
            .iter_mut()
            .filter(|r| !r.excluded)
        {
            let mask = &annotation.masks[&record.sample_id];
            let stored = save_mask(mask, &mask_dir.join(&record.sample_id))?;
            record.mask_path = Some(stored.to_string_lossy().into_owned());
        }
        annotation.manifest.name = name.to_string();
        let manifest_out = self.manifest_path(name);
        save_manifest(&annotation.manifest, &manifest_out)?;
        let mut report = annotation.report.clone();
        report.dataset = input.name.clone();
        let report_path = self.report_path(name, "curation");
        write_json(&report, &report_path)?;
        log(&format!(
            "{name}: kept {}/{} (few_target_pixels {}, high_entropy {})",
            report.kept,
            report.total,
            report.excluded_by_reason.few_target_pixels,
            report.excluded_by_reason.high_entropy
        ));

        let mut out = Outputs::new(TrainOutcome {
            epochs: 0,
            loss_curve: Vec::new(),
        });
        out.input_manifests.push(manifest.to_path_buf());
        out.input_checkpoints.extend(teachers.iter().cloned());
        out.output_manifests.push(manifest_out);
        out.reports.push(report_path);
        if !annotation.skipped.is_empty() {
            let skipped_path = self.report_path(name, "skipped");
            write_json(&annotation.skipped, &skipped_path)?;
            out.reports.push(skipped_path);
        }
        Ok(out)
    }

    fn train_student(
        &self,
        manifest: &Path,
        architecture: Option<&str>,
        name: &str,
        log: &mut Log<'_>,
    ) -> Result<Outputs> {
        let m = load_manifest(manifest)?;
        if m.kept_count() == 0 {
            return Err(KtError::NothingKept(m.name.clone()));
        }
        let examples = m
            .kept()
            .map(|r| {
                let mask = r
                    .mask_path
                    .as_deref()
                    .ok_or_else(|| KtError::Unlabeled(r.sample_id.clone()))?;
                Ok(Example {
                    image: load_image(Path::new(&r.image_path))?,
                    target: load_mask(Path::new(mask))?.into_values(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut model = self.fresh_model(&self.config.student, architecture, name)?;
        let epochs = self.config.training.epochs_for(examples.len());
        let outcome = pipeline::train_student(
            model.as_mut(),
            &examples,
            &self.config.training,
            &self.config.augmentation,
            &mut Self::train_log(log, name, epochs),
        )?;
        let mut out = Outputs::new(outcome);
        out.output_checkpoints
            .push(self.save_model(model.as_ref(), out.outcome.epochs, name)?);
        out.input_manifests.push(manifest.to_path_buf());
        Ok(out)
    }

    fn finetune(
        &self,
        checkpoint: &Path,
        manifest: &Path,
        architecture: Option<&str>,
        epochs: Option<usize>,
        name: &str,
        log: &mut Log<'_>,
    ) -> Result<Outputs> {
        let ck = load_checkpoint_with(&self.registry, checkpoint)?;
        let start_epoch = ck.meta.epoch;
        let mut model = ck.model;
        if let Some(expected) = architecture {
            if expected != model.architecture_id() {
                return Err(ktseg_core::Error::ArchitectureMismatch {
                    expected: expected.to_string(),
                    found: model.architecture_id().to_string(),
                }
                .into());
            }
        }
        let m = load_manifest(manifest)?;
        let samples = load_labeled(&m)?;
        let epochs = epochs.unwrap_or(self.config.finetune_epochs);
        let outcome = pipeline::finetune(
            model.as_mut(),
            architecture,
            &samples,
            epochs,
            &self.config.training,
            &self.config.augmentation,
            &mut Self::train_log(log, name, epochs),
        )?;
        let mut out = Outputs::new(outcome);
        out.output_checkpoints
            .push(self.save_model(model.as_ref(), start_epoch + epochs, name)?);
        out.input_manifests.push(manifest.to_path_buf());
        out.input_checkpoints.push(checkpoint.to_path_buf());
        Ok(out)
    }

    fn evaluate(
        &self,
        manifest: &Path,
        checkpoint: Option<&Path>,
        architecture: Option<&str>,
        name: &str,
        log: &mut Log<'_>,
    ) -> Result<Outputs> {
        let (model, model_id) = match checkpoint {
            Some(p) => {
                let ck = load_checkpoint_with(&self.registry, p)?;
                let id = p.file_stem().map_or_else(
                    || ck.meta.architecture_id.clone(),
                    |s| s.to_string_lossy().into_owned(),
                );
                (ck.model, id)
            }
            None => {
                let model = self.fresh_model(&self.config.teacher, architecture, name)?;
                let id = format!("{} (untrained)", model.architecture_id());
                (model, id)
            }
        };
        let m = load_manifest(manifest)?;
        let samples = load_labeled(&m)?;
        let report = evaluate(model.as_ref(), &model_id, &m.name, &samples)?;
        log(&format!(
            "{name}: {model_id} on {}: mean dice {:.4} over {}",
            m.name,
            report.mean,
            samples.len()
        ));
        let path = self.report_path(name, "eval");
        write_json(&report, &path)?;
        let mut out = Outputs::new(TrainOutcome {
            epochs: 0,
            loss_curve: Vec::new(),
        });
        out.input_manifests.push(manifest.to_path_buf());
        out.input_checkpoints
            .extend(checkpoint.map(Path::to_path_buf));
        out.reports.push(path);
        Ok(out)
    }
}

/// Re-runs the stage described by a stored record into `out`.
pub fn replay(record: &RunRecord, out: impl Into<PathBuf>, log: &mut Log<'_>) -> Result<RunRecord> {
    Runner::new(record.config.clone(), out).execute(&record.args, log)
}

/// Either kind of stored report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnyReport {
    Evaluation(EvaluationReport),
    Curation(CurationReport),
}

pub fn load_report(path: &Path) -> Result<AnyReport> {
    let text = fs::read_to_string(path).map_err(|e| KtError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| KtError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
