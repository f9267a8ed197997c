//! End-to-end run on a trained model plus property tests over the
//! augmentation and scoring kernels.

use image::RgbImage;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xplain::attribution::{explain, Method};
use xplain::augment::{
    apply_augmentation, validity_mask, warp_explanation, AugmentationInterval, AugmentationKind,
    AugmentationSpec,
};
use xplain::harness::corpus::generate_synthetic_corpus;
use xplain::harness::fixtures::train_fixture;
use xplain::harness::{run_evaluation, IntervalChoice, RunConfig};
use xplain::metrics::{curve_score, CurveKind, MetricConfig, ResponseCurve};
use xplain::Tensor;

#[test]
fn trained_model_report_is_fully_populated() {
    let train = generate_synthetic_corpus(21, 60, 16, 16).unwrap();
    let (model, accuracy) = train_fixture(&train, 21, 12).unwrap();
    assert!(accuracy >= 0.9);

    let corpus = generate_synthetic_corpus(22, 12, 16, 16).unwrap();
    let config = RunConfig {
        methods: vec![Method::Gradients, Method::EpsilonPlusFlat],
        kinds: vec![AugmentationKind::Hue, AugmentationKind::Rotate],
        intervals: IntervalChoice::Explicit(vec![
            AugmentationInterval { kind: AugmentationKind::Hue, low: -20.0, high: 20.0, samples: 3 },
            AugmentationInterval { kind: AugmentationKind::Rotate, low: -20.0, high: 20.0, samples: 3 },
        ]),
        metric: MetricConfig::default(),
        samples: 3,
        seed: 22,
        workers: 1,
    };
    let report = run_evaluation(&model, &corpus, &config).unwrap();

    assert!(report.kept_images >= 8, "kept {}", report.kept_images);
    assert!(report.failed.is_empty(), "{:?}", report.failed);
    assert_eq!(report.records.len(), report.kept_images * 4);
    assert_eq!(report.aggregates.len(), 4);
    for row in &report.aggregates {
        assert!(row.n >= 2);
        assert!(row.s_correlation_mean.is_finite() && row.s_correlation_mean > 0.0);
        assert!(row.s_top1000_mean.is_finite() && row.s_top1000_mean > 0.0);
        assert!(row.probability_score_mean > 0.0 && row.probability_score_mean <= 1.0);
        assert!(row.s_correlation_sem.is_some());
    }
    // Two method rows plus the random baseline, baseline last.
    assert_eq!(report.flip_aggregates.len(), 3);
    assert_eq!(report.flip_aggregates.last().unwrap().method, None);
    for cell in &report.curves {
        assert!(!cell.rows.is_empty());
        for pair in cell.rows.windows(2) {
            assert!(pair[1].param > pair[0].param);
        }
        assert!(cell
            .rows
            .iter()
            .all(|r| (0.0..=1.0).contains(&r.probability)));
    }
}

#[test]
fn every_method_produces_a_full_size_finite_heatmap() {
    let train = generate_synthetic_corpus(23, 60, 16, 16).unwrap();
    let (model, _) = train_fixture(&train, 23, 12).unwrap();
    let image = &generate_synthetic_corpus(24, 1, 16, 16).unwrap().entries[0].image;
    for method in Method::all() {
        let expl = explain(&model, image, 2, method).unwrap();
        assert_eq!(expl.method, method);
        assert_eq!(expl.heatmap.shape(), &[16, 16]);
        assert_eq!(expl.per_channel.shape(), &[3, 16, 16]);
        assert!(
            expl.heatmap.data().iter().all(|v| v.is_finite()),
            "{} produced non-finite values",
            method.slug()
        );
    }
}

fn arbitrary_image() -> impl Strategy<Value = RgbImage> {
    (8u32..=20, 8u32..=20, any::<u64>()).prop_map(|(w, h, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(w, h, |_, _| image::Rgb([rng.gen(), rng.gen(), rng.gen()]))
    })
}

/// Strictly increasing parameter grid with the identity value included.
fn arbitrary_curve() -> impl Strategy<Value = ResponseCurve> {
    (
        2usize..=24,
        proptest::collection::vec(0.01f64..1.5, 25),
        proptest::collection::vec(-3.0f64..3.0, 25),
        any::<u32>(),
    )
        .prop_map(|(n, steps, values, pick)| {
            let mut params = vec![0.0f64];
            for step in steps.iter().take(n - 1) {
                params.push(params.last().unwrap() + step);
            }
            let identity_index = pick as usize % n;
            let shift = params[identity_index];
            for p in &mut params {
                *p -= shift;
            }
            ResponseCurve {
                kind: CurveKind::Probability,
                params,
                values: values[..n].to_vec(),
                identity_index,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn identity_parameters_change_nothing(image in arbitrary_image()) {
        for kind in AugmentationKind::all() {
            let spec = AugmentationSpec::identity(kind);
            prop_assert_eq!(&apply_augmentation(&image, &spec).unwrap(), &image);
            let mask = validity_mask(&spec, image.height() as usize, image.width() as usize);
            prop_assert!(mask.data().iter().all(|&m| m));
        }
    }

    #[test]
    fn identity_warp_is_exact_on_equivariant_kinds(image in arbitrary_image(), seed in any::<u64>()) {
        let (h, w) = (image.height() as usize, image.width() as usize);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let heatmap = Tensor::from_vec(
            &[h, w],
            (0..h * w).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
        ).unwrap();
        for kind in [AugmentationKind::Rotate, AugmentationKind::Scale, AugmentationKind::Translate] {
            let warped = warp_explanation(&heatmap, &AugmentationSpec::identity(kind)).unwrap();
            prop_assert_eq!(warped.data(), heatmap.data());
        }
    }

    #[test]
    fn brightness_is_monotone_per_channel(image in arbitrary_image(), t1 in -200.0f64..200.0, dt in 0.0f64..120.0) {
        let darker = apply_augmentation(&image, &AugmentationSpec::new(AugmentationKind::Brightness, t1)).unwrap();
        let lighter = apply_augmentation(&image, &AugmentationSpec::new(AugmentationKind::Brightness, t1 + dt)).unwrap();
        for (a, b) in darker.pixels().zip(lighter.pixels()) {
            for c in 0..3 {
                // Rounding inside the color conversion can locally reorder
                // by one step; anything larger is a real violation.
                prop_assert!(b[c] as i16 >= a[c] as i16 - 1, "{} then {}", a[c], b[c]);
            }
        }
    }

    #[test]
    fn curve_scores_stay_in_the_unit_interval(curve in arbitrary_curve()) {
        let low = curve.params[0];
        let high = *curve.params.last().unwrap();
        if low < high {
            let score = curve_score(&curve, low, high).unwrap();
            prop_assert!((0.0..=1.0).contains(&score.value), "score {}", score.value);
        }
    }

    #[test]
    fn raising_a_curve_never_lowers_its_score(curve in arbitrary_curve(), lifts in proptest::collection::vec(0.0f64..1.0, 25)) {
        let low = curve.params[0];
        let high = *curve.params.last().unwrap();
        prop_assume!(low < high);
        let mut raised = curve.clone();
        for (i, v) in raised.values.iter_mut().enumerate() {
            // The identity sample stays put so both curves share their
            // normalization anchor.
            if i != raised.identity_index {
                *v += lifts[i];
            }
        }
        let a = curve_score(&curve, low, high).unwrap().value;
        let b = curve_score(&raised, low, high).unwrap().value;
        prop_assert!(b >= a - 1e-12, "raised {b} below original {a}");
    }

    #[test]
    fn scale_masks_shrink_with_the_zoom(factor in 0.3f64..0.95, side in 10usize..=24) {
        let spec = AugmentationSpec::new(AugmentationKind::Scale, factor);
        let mask = validity_mask(&spec, side, side);
        let count = mask.count_true();
        prop_assert!(count < side * side);
        prop_assert!(count > 0);
        let wider = validity_mask(&AugmentationSpec::new(AugmentationKind::Scale, factor.sqrt()), side, side);
        prop_assert!(wider.count_true() >= count);
    }
}
