use ktseg_core::nn::graph::shape_signature;
use ktseg_core::{
    build_model, ArchSpec, Error, Grid, ModelRegistry, SegmentationModel, MINI_DILATED, MINI_UNET,
};
use proptest::prelude::*;

fn image(seed: usize) -> Grid {
    Grid::from_fn(384, 384, |x, y| {
        (((x * 31 + y * 17 + seed * 101) % 251) as f32) / 250.0
    })
}

fn model(id: &str, seed: u64) -> Box<dyn SegmentationModel> {
    build_model(id, &ArchSpec::default_for(id), seed).unwrap()
}

#[test]
fn batch_forward_shape_and_range() {
    for id in [MINI_UNET, MINI_DILATED] {
        let m = model(id, 1);
        let out = m.forward(&[image(0), image(1)]).unwrap();
        assert_eq!(out.len(), 2);
        for g in &out {
            assert_eq!(g.dims(), (384, 384));
            assert!(g.in_unit_range());
        }
        assert!(
            m.parameter_count() <= 500_000,
            "{id}: {}",
            m.parameter_count()
        );
    }
}

#[test]
fn seeded_init_and_inference_are_deterministic() {
    for id in [MINI_UNET, MINI_DILATED] {
        let a = model(id, 42);
        let b = model(id, 42);
        let x = image(3);
        assert_eq!(a.predict(&x).unwrap(), b.predict(&x).unwrap());
        assert_eq!(a.predict(&x).unwrap(), a.predict(&x).unwrap());
        assert_ne!(a.parameters(), model(id, 43).parameters());
    }
}

#[test]
fn unknown_architecture_lists_registered_ids() {
    match build_model("nonexistent", &ArchSpec::default(), 0) {
        Err(Error::UnknownArchitecture {
            requested,
            registered,
        }) => {
            assert_eq!(requested, "nonexistent");
            assert_eq!(registered, ModelRegistry::default().ids());
            assert!(
                registered.iter().any(|r| r == MINI_UNET)
                    && registered.iter().any(|r| r == MINI_DILATED)
            );
        }
        other => panic!(
            "unexpected {:?}",
            other.map(|m| m.architecture_id().to_string())
        ),
    }
}

#[test]
fn wrong_spatial_size_is_rejected() {
    let m = model(MINI_UNET, 0);
    assert!(matches!(
        m.predict(&Grid::filled(200, 384, 0.5)),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn batched_equals_per_sample() {
    for id in [MINI_UNET, MINI_DILATED] {
        let m = model(id, 5);
        let batch: Vec<Grid> = (0..3).map(image).collect();
        let together = m.forward(&batch).unwrap();
        for (x, y) in batch.iter().zip(&together) {
            let single = m.predict(x).unwrap();
            let worst = single
                .as_slice()
                .iter()
                .zip(y.as_slice())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f32, f32::max);
            assert!(worst <= 1e-5, "{id}: {worst}");
        }
    }
}

#[test]
fn reference_architectures_share_no_shape_signature() {
    let unet = model(MINI_UNET, 0);
    let dilated = model(MINI_DILATED, 0);
    assert_ne!(
        shape_signature(unet.as_ref()),
        shape_signature(dilated.as_ref())
    );
    // Transplanting weights across architectures must fail.
    let mut d = dilated.clone();
    assert!(matches!(
        d.load_parameters(unet.parameters().to_vec()),
        Err(Error::ParameterMismatch(_))
    ));
}

#[test]
fn binary_output_models_emit_zero_or_one() {
    let m = build_model(
        MINI_DILATED,
        &ArchSpec {
            binary_output: true,
            ..ArchSpec::default_for(MINI_DILATED)
        },
        2,
    )
    .unwrap();
    let out = m.predict(&image(4)).unwrap();
    assert!(out.as_slice().iter().all(|&v| v == 0.0 || v == 1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn outputs_stay_in_unit_range(seed in any::<u64>(), lo in 0.0f32..1.0, span in 0.0f32..1.0, arch in 0usize..2) {
        let id = [MINI_UNET, MINI_DILATED][arch];
        let m = model(id, seed);
        let hi = (lo + span).min(1.0);
        let x = Grid::from_fn(384, 384, |i, j| {
            let h = (i as u64).wrapping_mul(0x9E37_79B9).wrapping_add((j as u64).wrapping_mul(0x85EB_CA6B)) ^ seed;
            lo + (hi - lo) * ((h % 1000) as f32 / 999.0)
        });
        let y = m.predict(&x).unwrap();
        prop_assert!(y.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
