//! Pipeline execution: simulate, reconstruct, evaluate, write artifacts.
//!
//! A run writes into `<out>.partial` and renames it to `<out>` only after
//! every stage succeeded, so a failed run leaves no half-written tree.

use std::fs;
use std::path::{Path, PathBuf};

use event_spectra::cloud::{format_sig9, write_pointcloud};
use event_spectra::events::write_events;
use event_spectra::image::{DepthMap, ImageFloat, Mask, Rect};
use event_spectra::metrics::{
    chamfer, icp_align, metrics_to_csv, rmse_pointcloud, IcpConfig, InitialGuess, IouCounts, MetricRow,
};
use event_spectra::pnm::{write_depth_map, write_labels, write_ppm};
use event_spectra::projector::{ProjectorConfig, ProjectorMode, ProjectorView, RGB_WAVELENGTHS_NM};
use event_spectra::scene::{
    depth_to_pointcloud, make_chart_scene, make_forest_scene, make_materials_scene, make_wedge_scene, srgb_image,
    PinholeModel, RigGeometry, SceneModel,
};
use event_spectra::segment::{evaluate, predict, random_labels, train, FeatureSubset, LabeledFrame, CLASS_NAMES};
use event_spectra::sensor::{simulate, SensorConfig};
use event_spectra::spectral::color::{correct_chart, reconstruct_rgb};
use event_spectra::spectral::{
    calibrate_sweep, event_count_reflectance, normalize_to_reference, reflectance_from_sweep, run_sweep,
    spectral_signature, write_cube, SpectralCube, SweepCalibration, SweepParam, SweepPlan,
};
use event_spectra::{Error, Result};
use rayon::prelude::*;
use thiserror::Error as ThisError;

use crate::config::{ConfigError, Pipeline, RunConfig, SweepSpec};
use crate::render::{render_depth_colormap, render_overlay};
use crate::report::render_report;

#[derive(Debug, ThisError)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{stage} pipeline failed: {source}")]
    Pipeline {
        stage: &'static str,
        #[source]
        source: Error,
    },
    #[error("output {path}: {message}")]
    Output { path: PathBuf, message: String },
}

impl RunError {
    /// Process exit status: 2 for configuration problems, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            _ => 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out: PathBuf,
    pub seed: u64,
    pub rows: Vec<MetricRow>,
}

fn partial_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_else(|| "out".into());
    name.push(".partial");
    out.with_file_name(name)
}

fn output_error(path: &Path, e: impl std::fmt::Display) -> RunError {
    RunError::Output {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// An existing target is replaced only if it is empty or holds a previous run.
fn check_target(out: &Path) -> Result<(), RunError> {
    if !out.exists() {
        return Ok(());
    }
    if !out.is_dir() {
        return Err(output_error(out, "exists and is not a directory"));
    }
    let empty = fs::read_dir(out).map_err(|e| output_error(out, e))?.next().is_none();
    if empty || out.join("metrics.csv").is_file() {
        Ok(())
    } else {
        Err(output_error(out, "exists and does not look like a previous run; refusing to replace it"))
    }
}

/// Runs the configured pipelines into `out`. `seed` overrides the config seed.
pub fn run(config: &RunConfig, out: &Path, seed: Option<u64>) -> Result<RunSummary, RunError> {
    config.validate()?;
    let seed = seed.unwrap_or(config.seed);
    check_target(out)?;
    let partial = partial_path(out);
    if partial.exists() {
        fs::remove_dir_all(&partial).map_err(|e| output_error(&partial, e))?;
    }
    fs::create_dir_all(&partial).map_err(|e| output_error(&partial, e))?;
    match run_into(config, seed, &partial) {
        Ok(rows) => {
            if out.exists() {
                fs::remove_dir_all(out).map_err(|e| output_error(out, e))?;
            }
            fs::rename(&partial, out).map_err(|e| output_error(out, e))?;
            Ok(RunSummary {
                out: out.to_path_buf(),
                seed,
                rows,
            })
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&partial);
            Err(e)
        }
    }
}

/// Like [`run`], on a dedicated pool of `threads` workers when given.
pub fn run_with_threads(
    config: &RunConfig,
    out: &Path,
    seed: Option<u64>,
    threads: Option<usize>,
) -> Result<RunSummary, RunError> {
    match threads {
        None => run(config, out, seed),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| output_error(out, format!("cannot start {n} worker threads: {e}")))?;
            pool.install(|| run(config, out, seed))
        }
    }
}

fn run_into(config: &RunConfig, seed: u64, dir: &Path) -> Result<Vec<MetricRow>, RunError> {
    let mut rows = Vec::new();
    for &stage in config.pipeline.stages() {
        let sub = dir.join(stage.name());
        let fail = |source| RunError::Pipeline {
            stage: stage.name(),
            source,
        };
        fs::create_dir_all(&sub).map_err(|e| fail(e.into()))?;
        let stage_rows = match stage {
            Pipeline::Depth => depth_stage(config, seed, &sub),
            Pipeline::Rgb => rgb_stage(config, seed, &sub),
            Pipeline::Spectral => spectral_stage(config, seed, &sub),
            Pipeline::Segment => segment_stage(config, seed, &sub),
            Pipeline::All => unreachable!("`all` expands to concrete stages"),
        }
        .map_err(fail)?;
        rows.extend(stage_rows);
    }
    let mut effective = config.clone();
    effective.seed = seed;
    let preamble = vec![
        format!("- pipeline: {}", config.pipeline.name()),
        format!("- seed: {seed}"),
    ];
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| output_error(&path, e))
    };
    write("config.json", effective.to_json() + "\n")?;
    write("metrics.csv", metrics_to_csv(&rows))?;
    write("report.md", render_report("Run report", &preamble, &rows))?;
    Ok(rows)
}

/// Base sensor with the run seed folded into the mismatch seed.
fn base_sensor(config: &RunConfig, seed: u64) -> SensorConfig {
    let mut s = config.sensor.clone();
    s.noise.seed = s.noise.seed.wrapping_add(seed);
    s
}

/// The rig resized to a `width`×`height` camera, keeping field of view and baseline.
pub fn rig_for(rig: &RigGeometry, width: usize, height: usize) -> Result<RigGeometry> {
    let s = width as f64 / rig.camera.width as f64;
    let scaled = |n: usize| ((n as f64 * s).round() as usize).max(1);
    Ok(RigGeometry {
        camera: PinholeModel::centered(rig.camera.focal * s, width, height)?,
        projector: PinholeModel::centered(
            rig.projector.focal * s,
            scaled(rig.projector.width),
            scaled(rig.projector.height),
        )?,
        baseline: rig.baseline,
        rectified: rig.rectified,
    })
}

/// Full-field chopped source over `wavelengths`, unit intensity per band.
pub fn chopped_projector(base: &ProjectorConfig, wavelengths: &[f64]) -> ProjectorConfig {
    ProjectorConfig {
        mode: ProjectorMode::Chopped,
        wavelengths: wavelengths.to_vec(),
        band_intensity: vec![1.0; wavelengths.len()],
        ..base.clone()
    }
}

/// One swept band: the scene's lower-bound reflectance and the wedge table it came from.
#[derive(Debug, Clone)]
pub struct BandSweep {
    pub reflectance: ImageFloat,
    pub calibration: SweepCalibration,
    pub plan: SweepPlan,
}

/// Sweeps a calibration wedge and then `scene` under the same plan.
pub fn sweep_band(
    scene: &SceneModel,
    rig: &RigGeometry,
    projector: &ProjectorConfig,
    sensor: &SensorConfig,
    spec: &SweepSpec,
    wavelength_nm: f64,
) -> Result<BandSweep> {
    let mut sensor = sensor.clone();
    if spec.param == SweepParam::DiffOnBias {
        sensor.pr_bias = spec.pr_bias;
    }
    let plan = SweepPlan::new(spec.param, spec.values(sensor.c_on), spec.capture_ms, wavelength_nm)?;
    let grays = spec.calibration.reflectances();
    let wedge = make_wedge_scene(2 * grays.len(), 2, &grays)?;
    let (ww, wh) = wedge.scene.dims();
    let cmaps = run_sweep(
        &wedge.scene,
        &rig_for(rig, ww, wh)?,
        projector,
        &sensor.clone().with_resolution(ww, wh),
        &plan,
    )?;
    let calibration = calibrate_sweep(&cmaps, &plan, &wedge.steps)?;
    let (w, h) = scene.dims();
    let maps = run_sweep(scene, &rig_for(rig, w, h)?, projector, &sensor.with_resolution(w, h), &plan)?;
    Ok(BandSweep {
        reflectance: reflectance_from_sweep(&maps, &plan, &calibration)?,
        calibration,
        plan,
    })
}

/// Event-counting baseline for one band, normalized to `panel`.
pub fn counting_band(
    scene: &SceneModel,
    rig: &RigGeometry,
    projector: &ProjectorConfig,
    sensor: &SensorConfig,
    duration: f64,
    wavelength_nm: f64,
    panel: &Rect,
) -> Result<ImageFloat> {
    let (w, h) = scene.dims();
    let out = simulate(
        scene,
        &rig_for(rig, w, h)?,
        projector,
        &sensor.clone().with_resolution(w, h),
        duration,
        wavelength_nm,
    )?;
    event_count_reflectance(&out.events, duration, panel)
}

fn depth_stage(config: &RunConfig, seed: u64, dir: &Path) -> Result<Vec<MetricRow>> {
    let scene = config.scene.build(seed)?;
    let rig = config.rig;
    let (w, h) = scene.dims();
    if (w, h) != (rig.camera.width, rig.camera.height) {
        return Err(Error::Invalid {
            what: "rig",
            message: format!("camera is {}x{} but the scene is {w}x{h}", rig.camera.width, rig.camera.height),
        });
    }
    let d = &config.depth;
    let n = (rig.projector.width * rig.projector.height) as f64;
    let projector = ProjectorConfig {
        mode: ProjectorMode::Scanning,
        width: rig.projector.width,
        height: rig.projector.height,
        frame_rate: 1.0 / (d.dwell_us * 1e-6 * n),
        ..config.projector.clone()
    };
    let schedule = projector.schedule()?;
    let mut sensor = base_sensor(config, seed).with_resolution(w, h);
    if d.ideal_sensor {
        let ideal = SensorConfig::ideal();
        sensor.f_dark = ideal.f_dark;
        sensor.kappa = ideal.kappa;
        sensor.epsilon = ideal.epsilon;
    }
    let out = simulate(&scene, &rig, &projector, &sensor, schedule.frame_time(), d.wavelength_nm)?;
    write_events(&out.events, dir.join("events.csv"))?;

    let depth = event_spectra::depth::reconstruct_depth(&out.events, &rig, &schedule, &d.reconstruction)?;
    write_depth_map(&depth, dir, "depth")?;
    let cloud = depth_to_pointcloud(&depth, &rig.camera);
    write_pointcloud(&cloud, dir.join("cloud.xyz"))?;
    write_ppm(&render_depth_colormap(&depth)?, dir.join("depth_color.ppm"))?;

    let lit = ProjectorView::build(&scene, &rig)?.lit_mask(w, h)?;
    let truth = scene.depth();
    let seen = Mask::from_fn(w, h, |x, y| *lit.get(x, y) && truth.at(x, y).is_some())?;
    let lit_count = seen.data().iter().filter(|&&v| v).count();
    let mut covered = 0usize;
    let mut sq = 0.0;
    let mut n_valid = 0usize;
    for y in 0..h {
        for x in 0..w {
            if let (Some(z), Some(t)) = (depth.at(x, y), truth.at(x, y)) {
                sq += (z as f64 - t as f64).powi(2);
                n_valid += 1;
                covered += usize::from(*seen.get(x, y));
            }
        }
    }
    let truth_cloud = depth_to_pointcloud(&DepthMap::new(truth.depth().clone(), seen)?, &rig.camera);
    let name = config.scene.name();
    let method = "structured_light";
    let mut rows = vec![
        MetricRow::new(name, method, "events", out.events.len() as f64),
        MetricRow::new(
            name,
            method,
            "coverage",
            if lit_count == 0 { 0.0 } else { covered as f64 / lit_count as f64 },
        ),
    ];
    if n_valid > 0 {
        rows.push(MetricRow::new(name, method, "depth_rmse_cm", (sq / n_valid as f64).sqrt() * 100.0));
    }
    if !truth_cloud.is_empty() {
        let mean_z = truth_cloud.points().iter().map(|p| p.z).sum::<f64>() / truth_cloud.len() as f64;
        let bound = mean_z * mean_z / (rig.projector.focal * rig.baseline);
        rows.push(MetricRow::new(name, method, "quantization_bound_cm", bound * 100.0));
    }
    if cloud.len() >= 3 && truth_cloud.len() >= 3 {
        let icp = icp_align(
            &cloud,
            &truth_cloud,
            &IcpConfig {
                initial: InitialGuess::Identity,
                ..IcpConfig::default()
            },
        )?;
        rows.push(MetricRow::new(name, method, "icp_rmse_cm", rmse_pointcloud(&icp.aligned, &truth_cloud)?));
        rows.push(MetricRow::new(name, method, "chamfer_cm", chamfer(&icp.aligned, &truth_cloud)?));
        rows.push(MetricRow::new(name, method, "icp_iterations", icp.iterations as f64));
    }
    Ok(rows)
}

fn rgb_stage(config: &RunConfig, seed: u64, dir: &Path) -> Result<Vec<MetricRow>> {
    let r = &config.rgb;
    let chart = make_chart_scene(r.chart.width, r.chart.height)?;
    let truth = srgb_image(&chart.scene)?;
    let blocks: Vec<Rect> = chart.layout.blocks.iter().map(|p| p.rect).collect();
    let grays: Vec<Rect> = chart.layout.grays.iter().map(|p| p.rect).collect();
    let projector = chopped_projector(&config.projector, &RGB_WAVELENGTHS_NM);
    let sensor = base_sensor(config, seed);

    let swept = RGB_WAVELENGTHS_NM
        .iter()
        .map(|&l| Ok(sweep_band(&chart.scene, &config.rig, &projector, &sensor, &r.sweep, l)?.reflectance))
        .collect::<Result<Vec<_>>>()?;
    let counting_sensor = SensorConfig {
        pr_bias: r.counting_pr_bias,
        ..sensor.clone()
    };
    let white = chart.layout.white().rect;
    let counted = RGB_WAVELENGTHS_NM
        .iter()
        .map(|&l| {
            counting_band(
                &chart.scene,
                &config.rig,
                &projector,
                &counting_sensor,
                r.counting_ms * 1e-3,
                l,
                &white,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    write_ppm(&truth, dir.join("truth.ppm"))?;
    let mut rmse_rows = Vec::new();
    let mut de_rows = Vec::new();
    for (method, bands, stem) in [("sweep", &swept, "rgb"), ("event_counting", &counted, "rgb_counting")] {
        let raw = reconstruct_rgb(&bands[0], &bands[1], &bands[2])?;
        let c = correct_chart(&raw, &truth, &blocks, &grays)?;
        write_ppm(&c.images[0], dir.join(format!("{stem}_raw.ppm")))?;
        write_ppm(&c.images[2], dir.join(format!("{stem}.ppm")))?;
        for e in &c.errors {
            rmse_rows.push(MetricRow::new("chart", method, format!("rgb_rmse_{}", e.stage.name()), e.rgb_rmse));
            de_rows.push(MetricRow::new("chart", method, format!("delta_e_{}", e.stage.name()), e.mean_delta_e));
        }
    }
    rmse_rows.extend(de_rows);
    Ok(rmse_rows)
}

fn spectral_stage(config: &RunConfig, seed: u64, dir: &Path) -> Result<Vec<MetricRow>> {
    let s = &config.spectral;
    let m = make_materials_scene(s.materials.width, s.materials.height)?;
    let projector = chopped_projector(&config.projector, &s.wavelengths);
    let sensor = base_sensor(config, seed);
    let bands = s
        .wavelengths
        .iter()
        .map(|&l| Ok((l, sweep_band(&m.scene, &config.rig, &projector, &sensor, &s.sweep, l)?.reflectance)))
        .collect::<Result<Vec<_>>>()?;
    let cube = normalize_to_reference(&SpectralCube::new(bands)?, &m.panel, s.panel_reflectance)?;
    write_cube(&cube, dir.join("bands"))?;

    let mut rows = Vec::new();
    for (name, rect) in &m.samples {
        let idx = m
            .scene
            .material_index(name)
            .ok_or_else(|| Error::Degenerate(format!("material {name} missing from scene")))?;
        let material = &m.scene.materials()[idx];
        let scene_name = format!("materials/{name}");
        let sig = spectral_signature(&cube, rect)?;
        let mut err_sq = 0.0;
        let mut truth_sq = 0.0;
        let mut measured = Vec::new();
        let mut reference = Vec::new();
        for &(l, v) in &sig {
            let t = material.reflectance.sample(l)?;
            err_sq += (v - t).powi(2);
            truth_sq += t * t;
            let metric = format!("r_{}nm", format_sig9(l));
            measured.push(MetricRow::new(&scene_name, "sweep", &metric, v));
            reference.push(MetricRow::new(&scene_name, "ground_truth", metric, t));
        }
        rows.extend(measured);
        rows.extend(reference);
        rows.push(MetricRow::new(&scene_name, "sweep", "nrmse", (err_sq / truth_sq).sqrt()));
    }
    Ok(rows)
}

fn segment_stage(config: &RunConfig, seed: u64, dir: &Path) -> Result<Vec<MetricRow>> {
    let s = &config.segment;
    let frames = |seeds: Vec<u64>| {
        seeds
            .into_par_iter()
            .map(|sd| {
                let scene = make_forest_scene(sd, &s.forest)?;
                LabeledFrame::from_scene(&scene, s.rgb_noise, s.depth_noise, sd)
            })
            .collect::<Result<Vec<_>>>()
    };
    let train_set = frames(s.train.seeds(seed))?;
    let test_set = frames(s.test.seeds(seed))?;

    let mut rows = Vec::new();
    for subset in FeatureSubset::ALL {
        let model = train(&train_set, subset)?;
        rows.extend(evaluate(&model, &test_set)?.rows("forest"));
        if subset == FeatureSubset::Rgbd {
            model.save(dir.join("model_rgbd.json"))?;
            let first = &test_set[0];
            let pred = predict(&model, &first.rgb, &first.depth)?;
            write_ppm(&first.rgb, dir.join("rgb.ppm"))?;
            write_labels(&pred, dir.join("labels.pgm"))?;
            write_labels(&first.labels, dir.join("labels_truth.pgm"))?;
            write_ppm(&render_overlay(&first.rgb, &pred)?, dir.join("overlay.ppm"))?;
        }
    }
    let mut chance = IouCounts::default();
    for (i, fr) in test_set.iter().enumerate() {
        let (w, h) = fr.labels.dims();
        chance.add(&random_labels(w, h, seed.wrapping_add(i as u64))?, &fr.labels)?;
    }
    let report = chance.report();
    for (name, v) in CLASS_NAMES.iter().zip(report.per_class) {
        if let Some(v) = v {
            rows.push(MetricRow::new("forest", "random", format!("iou_{name}"), v));
        }
    }
    rows.push(MetricRow::new("forest", "random", "iou_mean", report.mean));
    Ok(rows)
}
