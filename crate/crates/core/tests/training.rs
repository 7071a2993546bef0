use ktseg_core::augment::AugmentationConfig;
use ktseg_core::pipeline::{train_scratch_baseline, train_teacher};
use ktseg_core::synth::{generate, SynthSpec};
use ktseg_core::{
    build_model, ArchSpec, ImageSample, SoftMask, TrainingConfig, MINI_DILATED, MINI_UNET,
};

fn samples(n: usize, seed: u64) -> Vec<ImageSample> {
    generate(&SynthSpec {
        n_images: n,
        seed,
        ..SynthSpec::default()
    })
    .unwrap()
    .into_iter()
    .enumerate()
    .map(|(i, s)| {
        ImageSample::new(
            format!("{i}"),
            s.image,
            Some(SoftMask::binarized(&s.mask, 0.5)),
            "synth",
        )
        .unwrap()
    })
    .collect()
}

fn tiny(id: &str, seed: u64) -> Box<dyn ktseg_core::SegmentationModel> {
    build_model(
        id,
        &ArchSpec {
            base_channels: 4,
            ..ArchSpec::default()
        },
        seed,
    )
    .unwrap()
}

#[test]
fn teacher_loss_decreases_over_thirty_epochs() {
    let data = samples(64, 3);
    let mut m = tiny(MINI_UNET, 1);
    let cfg = TrainingConfig {
        epochs: 30,
        learning_rate: 1e-3,
        batch_size: 8,
        ..TrainingConfig::default()
    };
    let out = train_teacher(
        m.as_mut(),
        &data,
        &cfg,
        &AugmentationConfig::default(),
        &mut |_, _| {},
    )
    .unwrap();
    assert_eq!(out.loss_curve.len(), 30);
    let (first, last) = (out.loss_curve[0], *out.loss_curve.last().unwrap());
    assert!(last < first, "first {first} last {last}");
}

#[test]
fn same_seed_gives_identical_curves() {
    let data = samples(8, 4);
    let cfg = TrainingConfig {
        epochs: 2,
        learning_rate: 1e-3,
        seed: 9,
        ..TrainingConfig::default()
    };
    let aug = AugmentationConfig::default();
    let run = || {
        let mut m = tiny(MINI_DILATED, 2);
        let out = train_scratch_baseline(m.as_mut(), &data, &cfg, &aug, &mut |_, _| {}).unwrap();
        (out.loss_curve, m.parameters().to_vec())
    };
    assert_eq!(run(), run());
    let other = {
        let mut m = tiny(MINI_DILATED, 2);
        let cfg = TrainingConfig {
            seed: 10,
            ..cfg.clone()
        };
        train_scratch_baseline(m.as_mut(), &data, &cfg, &aug, &mut |_, _| {})
            .unwrap()
            .loss_curve
    };
    assert_ne!(run().0, other);
}

#[test]
fn scratch_baseline_loss_decreases() {
    let data = samples(32, 5);
    let mut m = tiny(MINI_DILATED, 3);
    let cfg = TrainingConfig {
        epochs: 15,
        learning_rate: 1e-3,
        ..TrainingConfig::default()
    };
    let out = train_scratch_baseline(
        m.as_mut(),
        &data,
        &cfg,
        &AugmentationConfig::identity(),
        &mut |_, _| {},
    )
    .unwrap();
    assert!(
        out.loss_curve.last().unwrap() < &out.loss_curve[0],
        "{:?}",
        out.loss_curve
    );
}
