use event_spectra::events::EventStream;
use event_spectra::image::{region_mean_rgb, Image, ImageFloat, ImageRgb, Mask, Rect};
use event_spectra::projector::{ProjectorConfig, ProjectorMode, SPECTROSCOPY_WAVELENGTHS_NM};
use event_spectra::scene::{
    make_chart_scene, make_materials_scene, make_plane_scene, make_wedge_scene, reflectance_image, srgb_image,
    PinholeModel, RigGeometry,
};
use event_spectra::sensor::{simulate, SensorConfig};
use event_spectra::spectral::color::{
    chart_error, correct_chart, delta_e76, delta_e76_lab, linearize_curve, srgb_to_lab, white_balance, ColorStage,
};
use event_spectra::spectral::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rig(w: usize, h: usize) -> RigGeometry {
    RigGeometry {
        camera: PinholeModel::centered(w as f64 * 500.0 / 640.0, w, h).unwrap(),
        projector: PinholeModel::centered(w as f64 * 1000.0 / 640.0, 3 * w, 3 * h / 2).unwrap(),
        baseline: 0.1,
        rectified: true,
    }
}

fn chopped() -> ProjectorConfig {
    ProjectorConfig {
        mode: ProjectorMode::Chopped,
        ..Default::default()
    }
}

/// Slow follower so the sweep resolves reflectance through bandwidth.
fn slow_sensor(w: usize, h: usize) -> SensorConfig {
    SensorConfig {
        pr_bias: 0.02,
        ..SensorConfig::default()
    }
    .with_resolution(w, h)
}

/// DIFF_ON offsets putting the effective ON threshold on a geometric ladder.
fn diff_on_ladder(k: usize, first: f64, last: f64, c_on: f64) -> Vec<f64> {
    (0..k)
        .map(|i| first * (last / first).powf(i as f64 / (k - 1) as f64) - c_on)
        .collect()
}

fn sweep_with_wedge(
    scene: &event_spectra::scene::SceneModel,
    dims: (usize, usize),
    plan: &SweepPlan,
) -> (ImageFloat, SweepCalibration) {
    let calib: Vec<f64> = (0..32).map(|i| 0.02 * (0.99f64 / 0.02).powf(i as f64 / 31.0)).collect();
    let wedge = make_wedge_scene(64, 2, &calib).unwrap();
    let cmaps = run_sweep(&wedge.scene, &rig(64, 2), &chopped(), &slow_sensor(64, 2), plan).unwrap();
    let cal = calibrate_sweep(&cmaps, plan, &wedge.steps).unwrap();
    let maps = run_sweep(scene, &rig(dims.0, dims.1), &chopped(), &slow_sensor(dims.0, dims.1), plan).unwrap();
    (reflectance_from_sweep(&maps, plan, &cal).unwrap(), cal)
}

#[test]
fn wedge_sweep_recovers_ranks_within_one_bin() {
    let truth = [0.05, 0.08, 0.12, 0.18, 0.27, 0.4, 0.6, 0.9];
    let wedge = make_wedge_scene(16, 2, &truth).unwrap();
    let c_on = slow_sensor(1, 1).c_on;
    let plan = SweepPlan::new(SweepParam::DiffOnBias, diff_on_ladder(8, 0.11, 1.0, c_on), 500.0, 638.0).unwrap();
    let (refl, cal) = sweep_with_wedge(&wedge.scene, (16, 2), &plan);
    let recovered: Vec<f64> = wedge
        .steps
        .iter()
        .map(|(r, _)| *refl.get(r.x, r.y) as f64)
        .collect();
    assert_eq!(spearman(&recovered, &truth).unwrap(), 1.0, "{recovered:?}");
    let bins = cal.bins();
    for (&r, &t) in recovered.iter().zip(&truth) {
        let i = bins.iter().position(|&b| (b - r).abs() < 1e-6).expect("value is a bin");
        let below = if i == 0 { 0.0 } else { bins[i - 1] };
        let above = bins.get(i + 1).copied().unwrap_or(f64::INFINITY);
        assert!(below <= t && t <= above, "{r} vs {t} with bins {bins:?}");
    }
}

#[test]
fn zero_reflectance_never_fires() {
    let wedge = make_wedge_scene(6, 2, &[0.0]).unwrap();
    let plan = SweepPlan::new(SweepParam::DiffOnBias, vec![-0.25, 0.0, 0.5], 100.0, 638.0).unwrap();
    let maps = run_sweep(&wedge.scene, &rig(6, 2), &chopped(), &SensorConfig::ideal().with_resolution(6, 2), &plan).unwrap();
    assert!(maps.iter().all(|m| m.fired.data().iter().all(|&f| !f)));
}

#[test]
fn panel_fires_at_loosest_level() {
    let wedge = make_wedge_scene(6, 2, &[0.99]).unwrap();
    let plan = SweepPlan::new(SweepParam::PrBias, vec![1.0, 0.1, 0.01], 100.0, 638.0).unwrap();
    let maps = run_sweep(&wedge.scene, &rig(6, 2), &chopped(), &slow_sensor(6, 2), &plan).unwrap();
    let loosest = plan.strictness_order()[0];
    assert!(maps[loosest].fired.data().iter().all(|&f| f));
}

#[test]
fn darker_fires_only_where_brighter_does() {
    let wedge = make_wedge_scene(8, 2, &[0.15, 0.45]).unwrap();
    let (dark, bright) = (wedge.steps[0].0, wedge.steps[1].0);
    let c_on = slow_sensor(1, 1).c_on;
    let plans = [
        SweepPlan::new(SweepParam::DiffOnBias, diff_on_ladder(10, 0.05, 1.2, c_on), 200.0, 638.0).unwrap(),
        SweepPlan::geometric(SweepParam::PrBias, 0.2, 0.002, 10, 200.0, 638.0).unwrap(),
    ];
    for plan in &plans {
        let sensor = SensorConfig {
            pr_bias: 0.02,
            diff_on_bias: 0.0,
            ..SensorConfig::default()
        }
        .with_resolution(8, 2);
        let maps = run_sweep(&wedge.scene, &rig(8, 2), &chopped(), &sensor, plan).unwrap();
        let mut saw_split = false;
        for m in &maps {
            let any_dark = dark.pixels().any(|(x, y)| *m.fired.get(x, y));
            let all_bright = bright.pixels().all(|(x, y)| *m.fired.get(x, y));
            assert!(!any_dark || all_bright, "{:?} level {}", plan.param, m.level);
            saw_split |= all_bright && !any_dark;
        }
        assert!(saw_split, "{:?} never separates the two grays", plan.param);
    }
}

#[test]
fn counting_on_uniform_scene_is_one() {
    let scene = make_plane_scene(12, 8, 1.0).unwrap();
    let out = simulate(&scene, &rig(12, 8), &chopped(), &SensorConfig::ideal().with_resolution(12, 8), 0.1, 638.0)
        .unwrap();
    assert!(!out.events.is_empty());
    let img = event_count_reflectance(&out.events, 0.1, &Rect::new(0, 0, 12, 8)).unwrap();
    assert!(img.data().iter().all(|&v| v == 1.0));

    let silent = event_count_reflectance(&EventStream::empty(4, 4), 0.1, &Rect::new(0, 0, 2, 2)).unwrap();
    assert!(silent.data().iter().all(|&v| v == 0.0));
}

#[test]
fn counting_is_monotone_but_compressed() {
    let truth = [0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 0.99];
    let (w, h) = (28, 2);
    let wedge = make_wedge_scene(w, h, &truth).unwrap();
    let sensor = SensorConfig {
        pr_bias: 0.05,
        ..SensorConfig::default()
    }
    .with_resolution(w, h);
    let out = simulate(&wedge.scene, &rig(w, h), &chopped(), &sensor, 0.5, 638.0).unwrap();
    let panel = wedge.steps[truth.len() - 1].0;
    let img = event_count_reflectance(&out.events, 0.5, &panel).unwrap();
    let means: Vec<f64> = wedge
        .steps
        .iter()
        .map(|(r, _)| event_spectra::image::region_mean(&img, r).unwrap())
        .collect();
    assert!(means.windows(2).all(|p| p[1] >= p[0]), "{means:?}");
    // Whole-event quantization merges distinct grays.
    assert!(means.windows(2).any(|p| p[1] == p[0]), "{means:?}");
}

fn random_cube(seed: u64, bands: usize) -> SpectralCube {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SpectralCube::new(
        (0..bands)
            .map(|b| {
                let img = Image::from_fn(9, 7, |_, _| rng.random_range(0.05f32..1.0)).unwrap();
                (600.0 + 40.0 * b as f64, img)
            })
            .collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalization_ignores_band_scale(seed in any::<u64>(), scales in prop::collection::vec(0.05f32..20.0, 4)) {
        let cube = random_cube(seed, 4);
        let panel = Rect::new(1, 1, 3, 3);
        let scaled = SpectralCube::new(
            cube.bands().iter().zip(&scales).map(|((l, img), s)| (*l, img.map(|v| v * s))).collect(),
        ).unwrap();
        let a = normalize_to_reference(&cube, &panel, 0.99).unwrap();
        let b = normalize_to_reference(&scaled, &panel, 0.99).unwrap();
        for ((_, x), (_, y)) in a.bands().iter().zip(b.bands()) {
            for (p, q) in x.data().iter().zip(y.data()) {
                prop_assert!((p - q).abs() <= 1e-5 * p.abs().max(1.0), "{} vs {}", p, q);
            }
        }
    }

    #[test]
    fn sweep_output_matches_strictest_fired_level(seed in any::<u64>(), k in 2usize..7) {
        // Nested fired sets: a pixel fires at every level up to its own depth.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let depth = Image::from_fn(5, 4, |_, _| rng.random_range(0..=k)).unwrap();
        let plan = SweepPlan::new(SweepParam::PrBias, (0..k).map(|i| 1.0 / (i + 1) as f64).collect(), 10.0, 700.0).unwrap();
        let maps: Vec<FiredMap> = (0..k)
            .map(|level| FiredMap {
                level,
                value: plan.values[level],
                fired: Mask::from_fn(5, 4, |x, y| *depth.get(x, y) > level).unwrap(),
            })
            .collect();
        let cal = SweepCalibration { level_reflectance: (0..k).map(|i| 0.1 * (i + 1) as f64).collect() };
        let out = reflectance_from_sweep(&maps, &plan, &cal).unwrap();
        for (x, y) in Rect::new(0, 0, 5, 4).pixels() {
            let d = *depth.get(x, y);
            let want = if d == 0 { 0.0 } else { (0.1 * d as f64) as f32 };
            prop_assert_eq!(*out.get(x, y), want);
        }
    }
}

#[test]
fn signature_of_split_region_is_the_mean() {
    let band = Image::from_fn(4, 2, |x, _| if x < 2 { 0.2f32 } else { 0.6 }).unwrap();
    let cube = SpectralCube::new(vec![(650.0, band.clone()), (700.0, band.map(|v| v * 0.5))]).unwrap();
    let sig = spectral_signature(&cube, &Rect::new(0, 0, 4, 2)).unwrap();
    assert_eq!(sig.len(), 2);
    assert!((sig[0].1 - 0.4).abs() < 1e-6 && (sig[1].1 - 0.2).abs() < 1e-6, "{sig:?}");
}

#[test]
fn noiseless_materials_cube_matches_ground_truth() {
    // Bands illuminated at arbitrary per-band strength, then normalized.
    let m = make_materials_scene(64, 32).unwrap();
    let bands = SPECTROSCOPY_WAVELENGTHS_NM
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let s = 0.3 + 0.1 * i as f32;
            (l, reflectance_image(&m.scene, l).unwrap().map(|v| v * s))
        })
        .collect();
    let cube = normalize_to_reference(&SpectralCube::new(bands).unwrap(), &m.panel, REFERENCE_PANEL_REFLECTANCE).unwrap();
    for (name, rect) in &m.samples {
        let mat = &m.scene.materials()[m.scene.material_index(name).unwrap()];
        for (l, v) in spectral_signature(&cube, rect).unwrap() {
            let t = mat.reflectance.sample(l).unwrap();
            assert!((v - t).abs() < 1e-5, "{name} at {l}: {v} vs {t}");
        }
    }
}

#[test]
fn cube_survives_disk_round_trip() {
    let cube = random_cube(3, 6);
    let dir = tempfile::tempdir().unwrap();
    write_cube(&cube, dir.path()).unwrap();
    assert_eq!(read_cube(dir.path()).unwrap(), cube);
}

/// Straight-line sRGB → Lab with the standard constants written out.
fn lab_oracle(rgb: [u8; 3]) -> [f64; 3] {
    let mut lin = [0.0; 3];
    for c in 0..3 {
        let v = rgb[c] as f64 / 255.0;
        lin[c] = if v <= 0.04045 { v / 12.92 } else { ((v + 0.055) / 1.055).powf(2.4) };
    }
    let x = 0.4124564 * lin[0] + 0.3575761 * lin[1] + 0.1804375 * lin[2];
    let y = 0.2126729 * lin[0] + 0.7151522 * lin[1] + 0.0721750 * lin[2];
    let z = 0.0193339 * lin[0] + 0.1191920 * lin[1] + 0.9503041 * lin[2];
    let (xn, yn, zn) = (0.95047, 1.0000001, 1.08883);
    let eps = 216.0 / 24389.0;
    let kappa = 24389.0 / 27.0;
    let f = |t: f64| if t > eps { t.cbrt() } else { (kappa * t + 16.0) / 116.0 };
    let (fx, fy, fz) = (f(x / xn), f(y / yn), f(z / zn));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

#[test]
fn red_green_difference_matches_oracle() {
    let (a, b) = (lab_oracle([255, 0, 0]), lab_oracle([0, 255, 0]));
    let want = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
    let got = delta_e76([255, 0, 0], [0, 255, 0]);
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    assert!((delta_e76([255; 3], [0; 3]) - 100.0).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn delta_e_is_a_metric(a in any::<[u8; 3]>(), b in any::<[u8; 3]>(), c in any::<[u8; 3]>()) {
        let ab = delta_e76(a, b);
        prop_assert_eq!(ab, delta_e76(b, a));
        prop_assert_eq!(delta_e76(a, a), 0.0);
        prop_assert_eq!(ab == 0.0, a == b);
        prop_assert!(ab <= delta_e76(a, c) + delta_e76(c, b) + 1e-9);
        let (la, lb) = (lab_oracle(a), lab_oracle(b));
        prop_assert!((srgb_to_lab(a.map(f64::from))[0] - la[0]).abs() < 1e-9);
        prop_assert!((ab - delta_e76_lab(la, lb)).abs() < 1e-9);
    }
}

struct Chart {
    truth: ImageRgb,
    blocks: Vec<Rect>,
    grays: Vec<Rect>,
}

fn chart() -> Chart {
    let c = make_chart_scene(96, 80).unwrap();
    Chart {
        truth: srgb_image(&c.scene).unwrap(),
        blocks: c.layout.blocks.iter().map(|p| p.rect).collect(),
        grays: c.layout.grays.iter().map(|p| p.rect).collect(),
    }
}

fn gray_truths(c: &Chart) -> Vec<[f64; 3]> {
    c.grays.iter().map(|r| region_mean_rgb(&c.truth, r).unwrap()).collect()
}

#[test]
fn white_balance_inverts_channel_gains() {
    let c = chart();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let d: [f64; 3] = [0, 1, 2].map(|_| rng.random_range(0.4..1.0));
        let distorted = c.truth.map(|p| [0, 1, 2].map(|i| (p[i] as f64 * d[i]).round() as u8));
        let (_, gains) = white_balance(&distorted, &c.grays, &gray_truths(&c)).unwrap();
        for i in 0..3 {
            assert!((gains[i] * d[i] - 1.0).abs() < 0.01, "channel {i}: {} vs {}", gains[i], 1.0 / d[i]);
        }
    }
    let halved = c.truth.map(|p| [p[0] / 2, p[1], p[2]]);
    let flat = ImageRgb::filled(4, 4, [100, 100, 100]).unwrap();
    let (_, g) = white_balance(&flat.map(|p| [p[0] / 2, p[1], p[2]]), &[Rect::new(0, 0, 4, 4)], &[[100.0; 3]]).unwrap();
    assert_eq!(g, [2.0, 1.0, 1.0]);
    assert!(white_balance(&halved, &c.grays, &gray_truths(&c)).unwrap().1[0] > 1.9);
}

#[test]
fn curve_inverts_squared_response() {
    let levels = [0.1f64, 0.3, 0.5, 0.7, 0.9];
    let (w, h) = (5 * 4, 4);
    let patch = |x: usize| x / 4;
    let truth_of = |i: usize| levels[i] * 255.0;
    let image = ImageRgb::from_fn(w, h, |x, _| {
        let v = (levels[patch(x)].powi(2) * 255.0).round() as u8;
        [v; 3]
    })
    .unwrap();
    let regions: Vec<Rect> = (0..5).map(|i| Rect::new(4 * i, 0, 4, h)).collect();
    let truths: Vec<[f64; 3]> = (0..5).map(|i| [truth_of(i); 3]).collect();
    let (out, curves) = linearize_curve(&image, &regions, &truths).unwrap();
    for (i, r) in regions.iter().enumerate() {
        assert_eq!(region_mean_rgb(&out, r).unwrap(), [truth_of(i).round(); 3]);
    }
    // Between knots the curve is the chord through the neighbouring patches,
    // which tracks the square root.
    let knots: Vec<(f64, f64)> = levels.iter().map(|&l| ((l * l * 255.0).round(), l * 255.0)).collect();
    for v in [0.2f64, 0.4, 0.6, 0.8] {
        let measured = (v * v * 255.0).round();
        let i = knots.iter().rposition(|k| k.0 <= measured).unwrap();
        let ((x0, y0), (x1, y1)) = (knots[i], knots[i + 1]);
        let chord = y0 + (measured - x0) / (x1 - x0) * (y1 - y0);
        let mapped = curves[0].apply(measured);
        assert!((mapped - chord).abs() < 1e-9, "{v}: {mapped} vs {chord}");
        assert!((mapped / 255.0 - v).abs() < 0.035, "{v}: {mapped}");
    }
}

#[test]
fn chart_error_reports_a_single_block_shift() {
    let c = chart();
    for stage in ColorStage::ALL {
        let e = chart_error(&c.truth, &c.truth, &c.blocks, stage).unwrap();
        assert_eq!((e.mean_delta_e, e.rgb_rmse), (0.0, 0.0));
    }
    let block = c.blocks[5];
    let original = *c.truth.get(block.x, block.y);
    let shifted_to = [original[0].saturating_sub(30), original[1], original[2].saturating_add(20)];
    let mut img = c.truth.clone();
    for (x, y) in block.pixels() {
        img.set(x, y, shifted_to);
    }
    let e = chart_error(&img, &c.truth, &c.blocks, ColorStage::Raw).unwrap();
    let want = delta_e76(shifted_to, original) / 16.0;
    assert!((e.mean_delta_e - want).abs() < 1e-9, "{} vs {want}", e.mean_delta_e);
    let channel_sq = (30.0f64.powi(2) + 20.0f64.powi(2)) / (3.0 * 16.0);
    assert!((e.rgb_rmse - channel_sq.sqrt()).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn correction_stages_improve_within_model(
        gains in prop::array::uniform3(0.45f64..0.95),
        gamma in 0.8f64..1.25,
    ) {
        // A shared power law followed by per-channel gains: correction
        // undoes them in reverse order, gains first.
        let c = chart();
        let raw = c.truth.map(|p| [0, 1, 2].map(|i| {
            let v = (p[i] as f64 / 255.0).powf(gamma) * gains[i];
            (v * 255.0).round() as u8
        }));
        let out = correct_chart(&raw, &c.truth, &c.blocks, &c.grays).unwrap();
        let [r, w, k] = [0, 1, 2].map(|i| out.errors[i].rgb_rmse);
        // Each stage re-quantizes to 8 bits; allow one code value.
        prop_assert!(r + 1.0 >= w && w + 1.0 >= k, "raw {} wb {} curve {}", r, w, k);
    }
}
