#![allow(clippy::needless_range_loop)]

use event_spectra::image::{DepthMap, Image, ImageRgb, LabelMap, Mask};
use event_spectra::metrics::iou;
use event_spectra::scene::{make_forest_scene, ForestParams};
use event_spectra::segment::{
    evaluate, extract_features, predict, random_labels, train, ClassifierModel, FeatureSubset, LabeledFrame,
    DEFAULT_DEPTH_NOISE, DEFAULT_RGB_NOISE,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn forest(seed: u64) -> LabeledFrame {
    let scene = make_forest_scene(seed, &ForestParams::default()).unwrap();
    LabeledFrame::from_scene(&scene, DEFAULT_RGB_NOISE, DEFAULT_DEPTH_NOISE, seed).unwrap()
}

/// Two blobs of distinct color and depth over a background.
fn separable(seed: u64) -> LabeledFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (40, 30);
    let cx = rng.random_range(8..14);
    let labels = Image::from_fn(w, h, |x, y| {
        if (x as i64 - cx as i64).pow(2) + (y as i64 - 15).pow(2) < 36 {
            1
        } else if (x as i64 - 30).pow(2) + (y as i64 - 15).pow(2) < 25 {
            2
        } else {
            0
        }
    })
    .unwrap();
    let rgb = ImageRgb::from_fn(w, h, |x, y| [[200, 200, 200], [20, 180, 20], [120, 60, 20]][*labels.get(x, y) as usize])
        .unwrap();
    let depth = DepthMap::from_values(Image::from_fn(w, h, |x, y| [3.0f32, 1.5, 1.0][*labels.get(x, y) as usize]).unwrap());
    LabeledFrame {
        rgb,
        depth,
        labels: LabelMap::new(labels).unwrap(),
    }
}

#[test]
fn separable_blobs_train_perfectly() {
    let frames: Vec<_> = (0..3).map(separable).collect();
    let model = train(&frames, FeatureSubset::Rgb).unwrap();
    let r = evaluate(&model, &frames).unwrap();
    assert_eq!(r.iou.per_class, [Some(1.0); 3]);
}

#[test]
fn single_class_rejected() {
    let mut f = separable(0);
    f.labels = LabelMap::filled(40, 30, 0).unwrap();
    assert!(train(&[f], FeatureSubset::Rgbd).is_err());
}

#[test]
fn identical_features_fall_back_to_prior() {
    let rgb = ImageRgb::filled(10, 10, [50, 50, 50]).unwrap();
    let depth = DepthMap::from_values(Image::filled(10, 10, 2.0f32).unwrap());
    // Class 2 is the most frequent.
    let labels = LabelMap::new(Image::from_fn(10, 10, |x, _| if x < 2 { 0 } else if x < 4 { 1 } else { 2 }).unwrap()).unwrap();
    let frame = LabeledFrame { rgb, depth, labels };
    let model = train(std::slice::from_ref(&frame), FeatureSubset::Rgbd).unwrap();
    let pred = predict(&model, &frame.rgb, &frame.depth).unwrap();
    assert!(pred.image().data().iter().all(|&c| c == 2));
}

#[test]
fn invalid_depth_is_excluded_from_training() {
    let mut f = separable(1);
    let (w, h) = f.rgb.dims();
    // Hide every class-1 pixel's depth: class 1 then has no usable samples.
    let mask = Mask::from_fn(w, h, |x, y| f.labels.get(x, y) != 1).unwrap();
    f.depth = DepthMap::new(f.depth.depth().clone(), mask.clone()).unwrap();
    let feats = extract_features(&f.rgb, &f.depth).unwrap();
    assert_eq!(feats.valid, mask);
    assert!(train(&[f], FeatureSubset::Rgb).is_err());
}

#[test]
fn step_edge_std_band() {
    let (w, h, edge) = (20, 9, 10);
    let depth = DepthMap::from_values(Image::from_fn(w, h, |x, _| if x < edge { 1.0f32 } else { 2.0 }).unwrap());
    let f = extract_features(&ImageRgb::filled(w, h, [0; 3]).unwrap(), &depth).unwrap();
    for x in 0..w {
        let elevated = f.values.get(x, 4)[4] > 0.0;
        // The 5×5 window straddles the edge for x in [edge-2, edge+1].
        assert_eq!(elevated, (edge - 2..=edge + 1).contains(&x), "column {x}");
    }
}

#[test]
fn predictions_match_likelihood_oracle() {
    let train_set: Vec<_> = (0..2).map(forest).collect();
    let model = train(&train_set, FeatureSubset::Rgbd).unwrap();
    let test = forest(40);
    let pred = predict(&model, &test.rgb, &test.depth).unwrap();
    let feats = extract_features(&test.rgb, &test.depth).unwrap();
    for (i, f) in feats.values.data().iter().enumerate() {
        let mut best = (f64::NEG_INFINITY, 0u8);
        for c in 0..3 {
            let mut ll = model.priors[c].ln();
            for k in 0..5 {
                let v = model.variances[c][k];
                ll += -0.5 * (2.0 * std::f64::consts::PI * v).ln() - (f[k] - model.means[c][k]).powi(2) / (2.0 * v);
            }
            if ll > best.0 {
                best = (ll, c as u8);
            }
        }
        assert_eq!(pred.image().data()[i], best.1, "pixel {i}");
    }
}

#[test]
fn random_guess_iou_near_one_fifth() {
    let truth = LabelMap::new(Image::from_fn(300, 300, |x, _| (x % 3) as u8).unwrap()).unwrap();
    let pred = random_labels(300, 300, 7).unwrap();
    let r = iou(&pred, &truth).unwrap();
    // p/(2−p) with p = 1/3.
    assert!((r.mean - 0.2).abs() < 0.05, "{}", r.mean);
}

#[test]
fn model_json_round_trip() {
    let model = train(&[separable(2)], FeatureSubset::Depth).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    assert_eq!(ClassifierModel::load(&path).unwrap(), model);
}

#[test]
fn depth_improves_over_rgb_on_forest() {
    let train_set: Vec<_> = (0..10).map(forest).collect();
    let test_set: Vec<_> = (100..108).map(forest).collect();
    let mean = |s| {
        let m = train(&train_set, s).unwrap();
        evaluate(&m, &test_set).unwrap().iou.mean
    };
    let (rgb, depth, rgbd) = (mean(FeatureSubset::Rgb), mean(FeatureSubset::Depth), mean(FeatureSubset::Rgbd));
    println!("rgb {rgb:.3} depth {depth:.3} rgbd {rgbd:.3}");
    assert!(rgbd > rgb && rgb > depth);
    assert!(rgbd - rgb >= 0.03);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn rgb_model_ignores_depth(seed in any::<u64>()) {
        let frame = separable(seed % 5);
        let model = train(std::slice::from_ref(&frame), FeatureSubset::Rgb).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = frame.rgb.dims();
        let noisy = DepthMap::from_values(Image::from_fn(w, h, |_, _| rng.random_range(0.5f32..4.0)).unwrap());
        prop_assert_eq!(
            predict(&model, &frame.rgb, &frame.depth).unwrap(),
            predict(&model, &frame.rgb, &noisy).unwrap()
        );
    }

    #[test]
    fn deterministic(seed in 0u64..50) {
        let f = forest(seed);
        let a = train(std::slice::from_ref(&f), FeatureSubset::Rgbd).unwrap();
        let b = train(std::slice::from_ref(&f), FeatureSubset::Rgbd).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(predict(&a, &f.rgb, &f.depth).unwrap(), predict(&b, &f.rgb, &f.depth).unwrap());
    }

    #[test]
    fn depth_scale_invariance(scale in 0.25f32..4.0) {
        // Depth features are median-normalized, so a global depth scale
        // leaves predictions unchanged.
        let train_set: Vec<_> = (0..2).map(forest).collect();
        let test = forest(77);
        let model = train(&train_set, FeatureSubset::Rgbd).unwrap();
        let scaled = DepthMap::from_values(test.depth.depth().map(|&z| z * scale));
        prop_assert_eq!(
            predict(&model, &test.rgb, &test.depth).unwrap(),
            predict(&model, &test.rgb, &scaled).unwrap()
        );
    }
}
