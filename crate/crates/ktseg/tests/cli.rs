use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ktseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ktseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn ktc_prints_two_decimals() {
    let o = ktseg(&[
        "ktc",
        "--teacher-dice",
        "87.04",
        "--student-dice",
        "72.64,74.72,85.00,81.12",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "97.66");
}

#[test]
fn usage_errors_exit_2() {
    let o = ktseg(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    let o = ktseg(&["ktc", "--teacher-dice", "87", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_errors_are_json() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    let o = ktseg(&[
        "train-teacher",
        "--manifest",
        s(&missing),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let line = stderr(&o).lines().last().unwrap().to_string();
    let v: serde_json::Value = serde_json::from_str(&line).unwrap();
    assert_eq!(v["error"]["kind"], "missing_file");

    let o = ktseg(&["ktc", "--teacher-dice", "0", "--student-dice", "1"]);
    assert_eq!(o.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert_eq!(v["error"]["kind"], "invalid_input");
}

#[test]
fn evaluate_untrained_model_on_fresh_synth_set() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    let o = ktseg(&["gen-synth", "--n", "10", "--seed", "7", "--out", s(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = ktseg(&[
        "evaluate",
        "--manifest",
        s(&data.join("manifest.json")),
        "--arch",
        "mini_unet",
        "--format",
        "json",
        "--out",
        s(&dir.path().join("run")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v[0]["n"], 10);
    let mean: f64 = v[0]["mean_pct"].as_str().unwrap().parse().unwrap();
    assert!((0.0..50.0).contains(&mean), "untrained dice {mean}");
}

const TINY: &str = r#"
finetune_epochs = 1

[training]
epochs = 1
batch_size = 4
learning_rate = 1e-3
seed = 5

[filter]
alpha = 0
apply_entropy = false

[teacher]
architecture = "mini_unet"
spec = { base_channels = 4, stem_pool = 8, binary_output = false }

[student]
architecture = "mini_dilated"
spec = { base_channels = 4, stem_pool = 8, binary_output = false }
"#;

/// Runs the documented sequence into `root` and returns the run dir.
fn pipeline(root: &Path) -> PathBuf {
    let cfg = root.join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let run = root.join("run");
    let teach = root.join("teach");
    let transfer = root.join("transfer");
    let steps: Vec<Vec<String>> = vec![
        vec!["gen-synth", "--n", "6", "--seed", "1", "--out", s(&teach)],
        vec![
            "gen-synth",
            "--n",
            "6",
            "--seed",
            "2",
            "--family",
            "blobs",
            "--background",
            "textured",
            "--out",
            s(&transfer),
        ],
        vec![
            "train-teacher",
            "--config",
            s(&cfg),
            "--manifest",
            s(&teach.join("manifest.json")),
            "--out",
            s(&run),
        ],
        vec![
            "pseudo-annotate",
            "--config",
            s(&cfg),
            "--teacher",
            s(&run.join("checkpoints/teacher.ckpt")),
            "--manifest",
            s(&transfer.join("manifest.json")),
            "--out",
            s(&run),
        ],
        vec![
            "train-student",
            "--config",
            s(&cfg),
            "--manifest",
            s(&run.join("manifests/pseudo.json")),
            "--out",
            s(&run),
        ],
        vec![
            "evaluate",
            "--config",
            s(&cfg),
            "--checkpoint",
            s(&run.join("checkpoints/student.ckpt")),
            "--manifest",
            s(&teach.join("manifest.json")),
            "--out",
            s(&run),
        ],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    for step in &steps {
        let args: Vec<&str> = step.iter().map(String::as_str).collect();
        let o = ktseg(&args);
        assert!(o.status.success(), "{:?} failed: {}", args, stderr(&o));
    }
    run
}

#[test]
fn six_command_sequence_is_deterministic_and_replayable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let run_a = pipeline(a.path());
    let run_b = pipeline(b.path());

    for rel in [
        "checkpoints/teacher.ckpt",
        "checkpoints/student.ckpt",
        "manifests/pseudo.json",
        "reports/pseudo_curation.json",
        "reports/eval_eval.json",
    ] {
        assert!(run_a.join(rel).is_file(), "{rel} missing");
        assert_eq!(
            fs::read(run_a.join(rel)).unwrap(),
            fs::read(run_b.join(rel)).unwrap(),
            "{rel} differs"
        );
    }
    let curation: serde_json::Value =
        serde_json::from_slice(&fs::read(run_a.join("reports/pseudo_curation.json")).unwrap())
            .unwrap();
    assert_eq!(curation["kept"], 6);

    let record = run_a.join("records/train_student-student.json");
    let stored: serde_json::Value = serde_json::from_slice(&fs::read(&record).unwrap()).unwrap();
    for p in stored["output_checkpoints"].as_array().unwrap() {
        assert!(Path::new(p.as_str().unwrap()).is_file());
    }
    let replay_dir = a.path().join("replay");
    let o = ktseg(&["replay", "--record", s(&record), "--out", s(&replay_dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(run_a.join("checkpoints/student.ckpt")).unwrap(),
        fs::read(replay_dir.join("checkpoints/student.ckpt")).unwrap()
    );

    let o = ktseg(&[
        "report",
        "--input",
        &format!(
            "{},{}",
            s(&run_a.join("reports/eval_eval.json")),
            s(&run_a.join("reports/pseudo_curation.json"))
        ),
        "--format",
        "csv",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("before,after"), "{}", stdout(&o));
}

#[test]
fn finetune_and_scratch_commands() {
    let root = tempfile::tempdir().unwrap();
    let run = pipeline(root.path());
    let cfg = root.path().join("tiny.toml");
    let down = root.path().join("down");
    let o = ktseg(&[
        "gen-synth",
        "--n",
        "4",
        "--seed",
        "3",
        "--family",
        "rectangles",
        "--split",
        "finetune",
        "--out",
        s(&down),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = down.join("manifest.json");
    let student = run.join("checkpoints/student.ckpt");

    let o = ktseg(&[
        "finetune",
        "--config",
        s(&cfg),
        "--checkpoint",
        s(&student),
        "--manifest",
        s(&manifest),
        "--epochs",
        "0",
        "--out",
        s(&run),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let before = ktseg::checkpoint::load_checkpoint(&student).unwrap();
    let after =
        ktseg::checkpoint::load_checkpoint(&run.join("checkpoints/finetuned.ckpt")).unwrap();
    assert_eq!(before.model.parameters(), after.model.parameters());

    let o = ktseg(&[
        "finetune",
        "--config",
        s(&cfg),
        "--checkpoint",
        s(&student),
        "--manifest",
        s(&manifest),
        "--arch",
        "mini_unet",
        "--out",
        s(&run),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("architecture_mismatch"),
        "{}",
        stderr(&o)
    );

    let o = ktseg(&[
        "train-scratch",
        "--config",
        s(&cfg),
        "--manifest",
        s(&manifest),
        "--out",
        s(&run),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let scratch =
        ktseg::checkpoint::load_checkpoint(&run.join("checkpoints/scratch.ckpt")).unwrap();
    assert_eq!(scratch.meta.architecture_id, "mini_dilated");
    assert_eq!(scratch.meta.epoch, 1);
    assert_eq!(scratch.meta.seed, 5);
}

#[test]
fn pseudo_annotate_rejects_unreadable_images_unless_skipping() {
    let root = tempfile::tempdir().unwrap();
    let run = pipeline(root.path());
    let cfg = root.path().join("tiny.toml");
    let transfer = root.path().join("transfer");
    fs::write(transfer.join("images/0002.png"), b"garbage").unwrap();
    let teacher = run.join("checkpoints/teacher.ckpt");
    let base = [
        "pseudo-annotate",
        "--config",
        s(&cfg),
        "--teacher",
        s(&teacher),
        "--manifest",
    ];
    let manifest = transfer.join("manifest.json");

    let mut args = base.to_vec();
    args.extend([s(&manifest), "--out", s(&run), "--name", "strict"]);
    let o = ktseg(&args);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("image_decode"), "{}", stderr(&o));

    let mut args = base.to_vec();
    args.extend([
        s(&manifest),
        "--out",
        s(&run),
        "--name",
        "lenient",
        "--skip-errors",
    ]);
    let o = ktseg(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = ktseg::manifest::load_manifest(run.join("manifests/lenient.json")).unwrap();
    assert_eq!(m.len(), 5);
    assert!(run.join("reports/lenient_skipped.json").is_file());
}
