//! Command-line interface.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ktseg_core::metrics::ktc;
use ktseg_core::synth::{Background, ShapeFamily};
use ktseg_core::Split;

use crate::config::RunConfig;
use crate::error::{KtError, Result};
use crate::report::{emit_report, ReportFormat};
use crate::stages::{load_report, replay, AnyReport, RunRecord, Runner, StageArgs};
use crate::synthio::gen_synth;

#[derive(Debug, Parser)]
#[command(
    name = "ktseg",
    version,
    about = "Network-agnostic knowledge transfer for binary segmentation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags accepted by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Seed for every random draw of the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

/// Overrides for the training table of the configuration.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Disable online augmentation.
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FamilyArg {
    Disks,
    Rectangles,
    Blobs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BackgroundArg {
    Plain,
    Textured,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    Finetune,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset with images, masks and a manifest.
    GenSynth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, value_enum)]
        family: Option<FamilyArg>,
        #[arg(long, value_enum)]
        background: Option<BackgroundArg>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        empty_fraction: Option<f64>,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        /// Dataset name; defaults to the output directory name.
        #[arg(long)]
        name: Option<String>,
    },
    /// Train a teacher on a labelled manifest.
    TrainTeacher {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        arch: Option<String>,
        #[arg(long, default_value = "teacher")]
        name: String,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Pseudo-annotate and curate a transferal manifest with a teacher ensemble.
    PseudoAnnotate {
        #[command(flatten)]
        common: Common,
        /// Teacher checkpoint; repeat for an ensemble.
        #[arg(long = "teacher", required = true, value_delimiter = ',')]
        teachers: Vec<PathBuf>,
        /// Ensemble weights, one per teacher (normalized).
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "pseudo")]
        name: String,
        /// Skip undecodable images instead of aborting.
        #[arg(long)]
        skip_errors: bool,
    },
    /// Train a student on a curated pseudo-annotated manifest.
    TrainStudent {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        arch: Option<String>,
        #[arg(long, default_value = "student")]
        name: String,
        /// Total image presentations; epochs scale inversely with kept images.
        #[arg(long, conflicts_with = "epochs")]
        epoch_budget: Option<usize>,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Continue training a checkpoint on labelled downstream data.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Fail unless the checkpoint has this architecture.
        #[arg(long)]
        arch: Option<String>,
        #[arg(long, default_value = "finetuned")]
        name: String,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Train a freshly initialized model on labelled data.
    TrainScratch {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        arch: Option<String>,
        #[arg(long, default_value = "scratch")]
        name: String,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Dice evaluation of a checkpoint (or an untrained architecture).
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, required_unless_present = "arch")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        arch: Option<String>,
        #[arg(long, default_value = "eval")]
        name: String,
        #[arg(long, value_enum, default_value = "table")]
        format: ReportFormat,
    },
    /// Knowledge transfer capability: best student dice over teacher dice, in percent.
    Ktc {
        #[command(flatten)]
        common: Common,
        #[arg(long, required_unless_present = "teacher_report")]
        teacher_dice: Option<f64>,
        #[arg(
            long,
            value_delimiter = ',',
            required_unless_present = "student_report"
        )]
        student_dice: Vec<f64>,
        #[arg(long, conflicts_with = "teacher_dice")]
        teacher_report: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', conflicts_with = "student_dice")]
        student_report: Vec<PathBuf>,
    },
    /// Render stored evaluation and curation reports.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long = "input", required = true, value_delimiter = ',')]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: ReportFormat,
    },
    /// Re-run a stage from its run record.
    Replay {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        record: PathBuf,
    },
}

const DEFAULT_RUN_DIR: &str = "run";

fn config_for(common: &Common, train: Option<&TrainFlags>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load_or_default(common.config.as_deref())?.with_seed(common.seed);
    if let Some(t) = train {
        if let Some(e) = t.epochs {
            cfg.training.epochs = e;
            cfg.training.epoch_budget = None;
        }
        if let Some(lr) = t.learning_rate {
            cfg.training.learning_rate = lr;
        }
        if let Some(b) = t.batch_size {
            cfg.training.batch_size = b;
        }
        if t.no_augment {
            cfg.training.augment = false;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(common: &Common) -> PathBuf {
    common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_RUN_DIR))
}

fn stderr_log(line: &str) {
    eprintln!("{line}");
}

fn run_stage(common: &Common, cfg: RunConfig, args: StageArgs) -> Result<RunRecord> {
    Runner::new(cfg, out_dir(common)).execute(&args, &mut stderr_log)
}

fn summarize(record: &RunRecord) -> String {
    let mut s = format!("{} done in {:.1}s", record.run_id, record.wall_clock_secs);
    if let Some(last) = record.loss_curve.last() {
        s.push_str(&format!(", {} epochs, final loss {last:.5}", record.epochs));
    }
    for p in record.outputs() {
        s.push_str(&format!("\n  {}", p.display()));
    }
    s.push('\n');
    s
}

fn mean_dice(path: &Path) -> Result<f64> {
    match load_report(path)? {
        AnyReport::Evaluation(e) => Ok(e.mean),
        AnyReport::Curation(_) => Err(KtError::InvalidArgument(format!(
            "{} is not an evaluation report",
            path.display()
        ))),
    }
}

/// Executes a parsed command and returns what it prints on stdout.
pub fn execute(cli: Cli) -> Result<String> {
    match cli.command {
        Command::GenSynth {
            common,
            n,
            family,
            background,
            noise,
            empty_fraction,
            split,
            name,
        } => {
            let mut spec = config_for(&common, None)?.synth;
            if let Some(n) = n {
                spec.n_images = n;
            }
            if let Some(f) = family {
                spec.shape_family = match f {
                    FamilyArg::Disks => ShapeFamily::Disks,
                    FamilyArg::Rectangles => ShapeFamily::Rectangles,
                    FamilyArg::Blobs => ShapeFamily::Blobs,
                };
            }
            if let Some(b) = background {
                spec.background = match b {
                    BackgroundArg::Plain => Background::Plain,
                    BackgroundArg::Textured => Background::Textured,
                };
            }
            if let Some(v) = noise {
                spec.noise_level = v;
            }
            if let Some(v) = empty_fraction {
                spec.empty_fraction = v;
            }
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
                SplitArg::Finetune => Split::Finetune,
            };
            let out = out_dir(&common);
            let name = name.unwrap_or_else(|| {
                out.file_name()
                    .map_or_else(|| "synth".to_string(), |s| s.to_string_lossy().into_owned())
            });
            let manifest = gen_synth(&spec, &out, &name, split)?;
            Ok(format!(
                "wrote {} images to {}\n",
                manifest.len(),
                out.join(crate::synthio::MANIFEST_FILE).display()
            ))
        }
        Command::TrainTeacher {
            common,
            manifest,
            arch,
            name,
            train,
        } => {
            let cfg = config_for(&common, Some(&train))?;
            let args = StageArgs::TrainTeacher {
                manifest,
                architecture: arch,
                name,
            };
            Ok(summarize(&run_stage(&common, cfg, args)?))
        }
        Command::PseudoAnnotate {
            common,
            teachers,
            weights,
            manifest,
            name,
            skip_errors,
        } => {
            let mut cfg = config_for(&common, None)?;
            if skip_errors {
                cfg.on_error = ktseg_core::pipeline::ErrorPolicy::SkipAndLog;
            }
            let args = StageArgs::PseudoAnnotate {
                teachers,
                weights,
                manifest,
                name,
            };
            Ok(summarize(&run_stage(&common, cfg, args)?))
        }
        Command::TrainStudent {
            common,
            manifest,
            arch,
            name,
            epoch_budget,
            train,
        } => {
            let mut cfg = config_for(&common, Some(&train))?;
            if epoch_budget.is_some() {
                cfg.training.epoch_budget = epoch_budget;
            }
            let args = StageArgs::TrainStudent {
                manifest,
                architecture: arch,
                name,
            };
            Ok(summarize(&run_stage(&common, cfg, args)?))
        }
        Command::Finetune {
            common,
            checkpoint,
            manifest,
            arch,
            name,
            train,
        } => {
            // --epochs here means fine-tuning epochs, which may be zero
            let flags = TrainFlags {
                epochs: None,
                ..train.clone()
            };
            let mut cfg = config_for(&common, Some(&flags))?;
            if let Some(e) = train.epochs {
                cfg.finetune_epochs = e;
            }
            let args = StageArgs::Finetune {
                checkpoint,
                manifest,
                architecture: arch,
                epochs: None,
                name,
            };
            Ok(summarize(&run_stage(&common, cfg, args)?))
        }
        Command::TrainScratch {
            common,
            manifest,
            arch,
            name,
            train,
        } => {
            let cfg = config_for(&common, Some(&train))?;
            let args = StageArgs::TrainScratch {
                manifest,
                architecture: arch,
                name,
            };
            Ok(summarize(&run_stage(&common, cfg, args)?))
        }
        Command::Evaluate {
            common,
            manifest,
            checkpoint,
            arch,
            name,
            format,
        } => {
            let cfg = config_for(&common, None)?;
            let args = StageArgs::Evaluate {
                manifest,
                checkpoint,
                architecture: arch,
                name,
            };
            let record = run_stage(&common, cfg, args)?;
            let reports = record
                .reports
                .iter()
                .map(|p| load_report(p))
                .collect::<Result<Vec<_>>>()?;
            emit_report(&reports, format)
        }
        Command::Ktc {
            common,
            teacher_dice,
            student_dice,
            teacher_report,
            student_report,
        } => {
            let teacher = match (teacher_dice, teacher_report) {
                (Some(d), _) => d,
                (None, Some(p)) => mean_dice(&p)?,
                (None, None) => {
                    return Err(KtError::InvalidArgument("teacher dice is required".into()))
                }
            };
            let students = if student_report.is_empty() {
                student_dice
            } else {
                student_report
                    .iter()
                    .map(|p| mean_dice(p))
                    .collect::<Result<_>>()?
            };
            let text = format!("{:.2}\n", ktc(&students, teacher)?);
            write_out(&common, "ktc.txt", &text)?;
            Ok(text)
        }
        Command::Report {
            common,
            inputs,
            format,
        } => {
            let reports = inputs
                .iter()
                .map(|p| load_report(p))
                .collect::<Result<Vec<_>>>()?;
            let text = emit_report(&reports, format)?;
            let file = match format {
                ReportFormat::Table => "report.md",
                ReportFormat::Csv => "report.csv",
                ReportFormat::Json => "report.json",
            };
            write_out(&common, file, &text)?;
            Ok(text)
        }
        Command::Replay { common, record } => {
            let stored = RunRecord::load(&record)?;
            let replayed = replay(&stored, out_dir(&common), &mut stderr_log)?;
            Ok(summarize(&replayed))
        }
    }
}

/// Mirrors printed output of non-stage commands into `--out` when given.
fn write_out(common: &Common, file: &str, text: &str) -> Result<()> {
    if let Some(dir) = &common.out {
        fs::create_dir_all(dir).map_err(|e| KtError::io(dir, e))?;
        let path = dir.join(file);
        fs::write(&path, text).map_err(|e| KtError::io(&path, e))?;
    }
    Ok(())
}

/// Machine-readable error document printed on failure.
pub fn error_json(err: &KtError) -> String {
    serde_json::json!({ "error": { "kind": err.kind(), "message": err.to_string() } }).to_string()
}

/// Parses `argv`, runs the command and returns the process exit code.
/// Usage errors exit with 2, runtime failures with 1.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            1
        }
    }
}
