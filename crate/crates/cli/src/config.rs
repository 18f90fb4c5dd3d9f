//! Run configuration: a versioned JSON document with one section per pipeline.
//! Every section has defaults, so `{"schema": 1, "pipeline": "depth"}` is a
//! complete config.

use std::fmt;
use std::path::{Path, PathBuf};

use event_spectra::depth::DepthConfig;
use event_spectra::projector::{ProjectorConfig, SPECTROSCOPY_WAVELENGTHS_NM};
use event_spectra::scene::{
    load_scene, make_chart_scene, make_forest_scene, make_materials_scene, make_plane_scene, make_step_scene,
    ForestParams, RigGeometry, SceneModel,
};
use event_spectra::segment::{DEFAULT_DEPTH_NOISE, DEFAULT_RGB_NOISE};
use event_spectra::sensor::SensorConfig;
use event_spectra::spectral::SweepParam;
use serde::{Deserialize, Serialize};

pub const CONFIG_SCHEMA: u32 = 1;

/// A config problem located by its dotted field path, e.g. `rig.baseline`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "config: {}", self.message)
        } else {
            write!(f, "config field `{}`: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    Depth,
    Rgb,
    Spectral,
    Segment,
    All,
}

impl Pipeline {
    /// The concrete pipelines this selector runs, in execution order.
    pub fn stages(self) -> &'static [Pipeline] {
        match self {
            Pipeline::Depth => &[Pipeline::Depth],
            Pipeline::Rgb => &[Pipeline::Rgb],
            Pipeline::Spectral => &[Pipeline::Spectral],
            Pipeline::Segment => &[Pipeline::Segment],
            Pipeline::All => &[Pipeline::Depth, Pipeline::Rgb, Pipeline::Spectral, Pipeline::Segment],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Depth => "depth",
            Pipeline::Rgb => "rgb",
            Pipeline::Spectral => "spectral",
            Pipeline::Segment => "segment",
            Pipeline::All => "all",
        }
    }
}

/// Scene for the depth pipeline: a builtin generator or a scene JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SceneSpec {
    Plane {
        width: usize,
        height: usize,
        depth: f64,
    },
    Step {
        width: usize,
        height: usize,
        near: f64,
        far: f64,
        edge: usize,
    },
    Chart {
        width: usize,
        height: usize,
    },
    Materials {
        width: usize,
        height: usize,
    },
    Forest {
        seed: u64,
        #[serde(default)]
        params: ForestParams,
    },
    /// Relative paths resolve against the config file's directory.
    File {
        path: PathBuf,
    },
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec::Plane {
            width: 640,
            height: 480,
            depth: 1.0,
        }
    }
}

impl SceneSpec {
    pub fn name(&self) -> &'static str {
        match self {
            SceneSpec::Plane { .. } => "plane",
            SceneSpec::Step { .. } => "step",
            SceneSpec::Chart { .. } => "chart",
            SceneSpec::Materials { .. } => "materials",
            SceneSpec::Forest { .. } => "forest",
            SceneSpec::File { .. } => "file",
        }
    }

    /// Builds the scene. `seed` offsets the forest generator's seed.
    pub fn build(&self, seed: u64) -> event_spectra::Result<SceneModel> {
        match self {
            SceneSpec::Plane { width, height, depth } => make_plane_scene(*width, *height, *depth),
            SceneSpec::Step {
                width,
                height,
                near,
                far,
                edge,
            } => make_step_scene(*width, *height, *near, *far, *edge),
            SceneSpec::Chart { width, height } => Ok(make_chart_scene(*width, *height)?.scene),
            SceneSpec::Materials { width, height } => Ok(make_materials_scene(*width, *height)?.scene),
            SceneSpec::Forest { seed: s, params } => make_forest_scene(s.wrapping_add(seed), params),
            SceneSpec::File { path } => load_scene(path),
        }
    }

    /// Pixel dimensions, where known without loading anything.
    pub fn dims(&self) -> Option<(usize, usize)> {
        match *self {
            SceneSpec::Plane { width, height, .. }
            | SceneSpec::Step { width, height, .. }
            | SceneSpec::Chart { width, height }
            | SceneSpec::Materials { width, height } => Some((width, height)),
            SceneSpec::Forest { params, .. } => Some((params.width, params.height)),
            SceneSpec::File { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthSection {
    /// Projector dwell per pixel in µs; sets the scan frame rate.
    pub dwell_us: f64,
    pub wavelength_nm: f64,
    /// Replace the sensor's bandwidth model with the instant-tracking limit.
    /// A realistic follower cannot resolve microsecond dwells.
    pub ideal_sensor: bool,
    pub reconstruction: DepthConfig,
}

impl Default for DepthSection {
    fn default() -> Self {
        DepthSection {
            dwell_us: 2.0,
            wavelength_nm: 638.0,
            ideal_sensor: true,
            reconstruction: DepthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSpec {
    /// Number of grays in the calibration wedge, spaced geometrically.
    pub steps: usize,
    pub min: f64,
    pub max: f64,
}

impl Default for CalibrationSpec {
    fn default() -> Self {
        CalibrationSpec {
            steps: 48,
            min: 0.02,
            max: 0.99,
        }
    }
}

impl CalibrationSpec {
    pub fn reflectances(&self) -> Vec<f64> {
        let n = self.steps;
        (0..n)
            .map(|i| self.min * (self.max / self.min).powf(i as f64 / (n - 1) as f64))
            .collect()
    }
}

/// Bias sweep. For `diff_on_bias`, `first` and `last` are effective ON
/// thresholds (c_on + offset) and the levels step geometrically between them;
/// for `pr_bias` they are the bias values themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub levels: usize,
    pub first: f64,
    pub last: f64,
    pub capture_ms: f64,
    /// Photoreceptor bias held during a DIFF_ON sweep.
    pub pr_bias: f64,
    pub calibration: CalibrationSpec,
}

impl SweepSpec {
    pub fn with_levels(levels: usize, first: f64, last: f64) -> Self {
        SweepSpec {
            param: SweepParam::DiffOnBias,
            levels,
            first,
            last,
            capture_ms: 500.0,
            pr_bias: 0.02,
            calibration: CalibrationSpec::default(),
        }
    }

    /// Level values for a sensor whose ON threshold is `c_on`.
    pub fn values(&self, c_on: f64) -> Vec<f64> {
        let k = self.levels;
        (0..k)
            .map(|i| {
                let v = self.first * (self.last / self.first).powf(i as f64 / (k - 1) as f64);
                match self.param {
                    SweepParam::DiffOnBias => v - c_on,
                    SweepParam::PrBias => v,
                }
            })
            .collect()
    }
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec::with_levels(16, 0.08, 1.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Size {
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RgbSection {
    pub chart: Size,
    pub sweep: SweepSpec,
    /// Photoreceptor bias for the event-counting baseline.
    pub counting_pr_bias: f64,
    pub counting_ms: f64,
}

impl Default for RgbSection {
    fn default() -> Self {
        RgbSection {
            chart: Size { width: 96, height: 80 },
            sweep: SweepSpec::default(),
            counting_pr_bias: 0.05,
            counting_ms: 500.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralSection {
    pub materials: Size,
    pub wavelengths: Vec<f64>,
    pub sweep: SweepSpec,
    pub panel_reflectance: f64,
}

impl Default for SpectralSection {
    fn default() -> Self {
        SpectralSection {
            materials: Size { width: 64, height: 32 },
            wavelengths: SPECTROSCOPY_WAVELENGTHS_NM.to_vec(),
            sweep: SweepSpec::with_levels(40, 0.06, 1.15),
            panel_reflectance: 0.99,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedRange {
    pub start: u64,
    pub count: usize,
}

impl SeedRange {
    /// Seeds shifted by the run seed.
    pub fn seeds(&self, run_seed: u64) -> Vec<u64> {
        (0..self.count as u64)
            .map(|i| self.start.wrapping_add(run_seed).wrapping_add(i))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentSection {
    pub forest: ForestParams,
    pub train: SeedRange,
    pub test: SeedRange,
    /// Gaussian RGB noise, 8-bit code values.
    pub rgb_noise: f64,
    /// Relative depth noise.
    pub depth_noise: f64,
}

impl Default for SegmentSection {
    fn default() -> Self {
        SegmentSection {
            forest: ForestParams::default(),
            train: SeedRange { start: 0, count: 10 },
            test: SeedRange { start: 100, count: 8 },
            rgb_noise: DEFAULT_RGB_NOISE,
            depth_noise: DEFAULT_DEPTH_NOISE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub pipeline: Pipeline,
    #[serde(default)]
    pub seed: u64,
    /// Output directory, relative to the config file.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub scene: SceneSpec,
    #[serde(default)]
    pub rig: RigGeometry,
    #[serde(default)]
    pub projector: ProjectorConfig,
    #[serde(default)]
    pub sensor: SensorConfig,
    #[serde(default)]
    pub depth: DepthSection,
    #[serde(default)]
    pub rgb: RgbSection,
    #[serde(default)]
    pub spectral: SpectralSection,
    #[serde(default)]
    pub segment: SegmentSection,
}

impl RunConfig {
    pub fn new(pipeline: Pipeline) -> Self {
        RunConfig {
            schema: CONFIG_SCHEMA,
            pipeline,
            seed: 0,
            output: None,
            scene: SceneSpec::default(),
            rig: RigGeometry::default(),
            projector: ProjectorConfig::default(),
            sensor: SensorConfig::default(),
            depth: DepthSection::default(),
            rgb: RgbSection::default(),
            spectral: SpectralSection::default(),
            segment: SegmentSection::default(),
        }
    }

    /// Parses and validates JSON text. Relative paths resolve against `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { String::new() } else { path };
            ConfigError::new(path, e.into_inner().to_string())
        })?;
        if let SceneSpec::File { path } = &mut cfg.scene {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        if let Some(out) = &mut cfg.output {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn runs(&self, p: Pipeline) -> bool {
        self.pipeline.stages().contains(&p)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema != CONFIG_SCHEMA {
            return Err(ConfigError::new(
                "schema",
                format!("unsupported schema {}, expected {CONFIG_SCHEMA}", self.schema),
            ));
        }
        check_rig(&self.rig)?;
        self.projector
            .validate()
            .map_err(|e| ConfigError::new("projector", e.to_string()))?;
        check_sensor(&self.sensor)?;
        if self.runs(Pipeline::Depth) {
            self.check_depth()?;
        }
        if self.runs(Pipeline::Rgb) {
            let r = &self.rgb;
            check_size("rgb.chart", r.chart, (48, 40))?;
            check_sweep("rgb.sweep", &r.sweep)?;
            positive("rgb.counting_pr_bias", r.counting_pr_bias)?;
            positive("rgb.counting_ms", r.counting_ms)?;
        }
        if self.runs(Pipeline::Spectral) {
            let s = &self.spectral;
            check_size("spectral.materials", s.materials, (32, 16))?;
            check_sweep("spectral.sweep", &s.sweep)?;
            if s.wavelengths.is_empty() {
                return Err(ConfigError::new("spectral.wavelengths", "at least one band required"));
            }
            if !s.wavelengths.windows(2).all(|w| w[1] > w[0]) || s.wavelengths.iter().any(|l| l.is_nan() || *l <= 0.0) {
                return Err(ConfigError::new(
                    "spectral.wavelengths",
                    "band centers must be positive and strictly increasing",
                ));
            }
            if !(s.panel_reflectance > 0.0 && s.panel_reflectance <= 1.0) {
                return Err(ConfigError::new("spectral.panel_reflectance", "must be in (0, 1]"));
            }
        }
        if self.runs(Pipeline::Segment) {
            let s = &self.segment;
            check_size(
                "segment.forest",
                Size {
                    width: s.forest.width,
                    height: s.forest.height,
                },
                (16, 16),
            )?;
            if !(0.0..=1.0).contains(&s.forest.brown_leaf_fraction) {
                return Err(ConfigError::new("segment.forest.brown_leaf_fraction", "must be in [0, 1]"));
            }
            if s.train.count == 0 {
                return Err(ConfigError::new("segment.train.count", "must be >= 1"));
            }
            if s.test.count == 0 {
                return Err(ConfigError::new("segment.test.count", "must be >= 1"));
            }
            non_negative("segment.rgb_noise", s.rgb_noise)?;
            non_negative("segment.depth_noise", s.depth_noise)?;
        }
        Ok(())
    }

    fn check_depth(&self) -> Result<(), ConfigError> {
        positive("depth.dwell_us", self.depth.dwell_us)?;
        positive("depth.wavelength_nm", self.depth.wavelength_nm)?;
        if self.depth.reconstruction.row_tolerance < 0.0 {
            return Err(ConfigError::new("depth.reconstruction.row_tolerance", "must be >= 0"));
        }
        match &self.scene {
            SceneSpec::File { path } => {
                if !path.is_file() {
                    return Err(ConfigError::new(
                        "scene.path",
                        format!("{} does not exist", path.display()),
                    ));
                }
            }
            SceneSpec::Plane { depth, .. } => positive("scene.depth", *depth)?,
            SceneSpec::Step { near, far, edge, width, .. } => {
                positive("scene.near", *near)?;
                positive("scene.far", *far)?;
                if edge >= width {
                    return Err(ConfigError::new("scene.edge", "must lie inside the image"));
                }
            }
            _ => {}
        }
        if let Some((w, h)) = self.scene.dims() {
            if w == 0 || h == 0 {
                return Err(ConfigError::new("scene.width", "scene dimensions must be > 0"));
            }
            if (w, h) != (self.rig.camera.width, self.rig.camera.height) {
                return Err(ConfigError::new(
                    "rig.camera.width",
                    format!(
                        "camera is {}x{} but the scene is {w}x{h}",
                        self.rig.camera.width, self.rig.camera.height
                    ),
                ));
            }
        }
        Ok(())
    }
}

fn positive(path: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(path, format!("must be > 0 (got {v})")))
    }
}

fn non_negative(path: &str, v: f64) -> Result<(), ConfigError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(path, format!("must be >= 0 (got {v})")))
    }
}

fn check_size(path: &str, s: Size, min: (usize, usize)) -> Result<(), ConfigError> {
    if s.width < min.0 || s.height < min.1 {
        return Err(ConfigError::new(
            format!("{path}.width"),
            format!("needs at least {}x{}, got {}x{}", min.0, min.1, s.width, s.height),
        ));
    }
    Ok(())
}

fn check_rig(rig: &RigGeometry) -> Result<(), ConfigError> {
    positive("rig.baseline", rig.baseline)?;
    for (name, cam) in [("camera", &rig.camera), ("projector", &rig.projector)] {
        positive(&format!("rig.{name}.focal"), cam.focal)?;
        if cam.width == 0 || cam.height == 0 {
            return Err(ConfigError::new(format!("rig.{name}.width"), "resolution must be > 0"));
        }
        if !(cam.cx.is_finite() && cam.cy.is_finite()) {
            return Err(ConfigError::new(format!("rig.{name}.cx"), "principal point must be finite"));
        }
    }
    rig.validate().map_err(|e| ConfigError::new("rig", e.to_string()))
}

fn check_sensor(s: &SensorConfig) -> Result<(), ConfigError> {
    positive("sensor.c_on", s.c_on)?;
    positive("sensor.c_off", s.c_off)?;
    positive("sensor.pr_bias", s.pr_bias)?;
    positive("sensor.f_dark", s.f_dark)?;
    non_negative("sensor.kappa", s.kappa)?;
    positive("sensor.epsilon", s.epsilon)?;
    non_negative("sensor.noise.threshold_sigma", s.noise.threshold_sigma)?;
    if let Some(dt) = s.dt_sim {
        positive("sensor.dt_sim", dt)?;
    }
    s.validate().map_err(|e| ConfigError::new("sensor", e.to_string()))
}

fn check_sweep(path: &str, s: &SweepSpec) -> Result<(), ConfigError> {
    if s.levels < 2 {
        return Err(ConfigError::new(format!("{path}.levels"), "at least two levels required"));
    }
    positive(&format!("{path}.first"), s.first)?;
    positive(&format!("{path}.last"), s.last)?;
    if s.first == s.last {
        return Err(ConfigError::new(format!("{path}.last"), "must differ from first"));
    }
    positive(&format!("{path}.capture_ms"), s.capture_ms)?;
    positive(&format!("{path}.pr_bias"), s.pr_bias)?;
    let c = &s.calibration;
    if c.steps < 2 {
        return Err(ConfigError::new(format!("{path}.calibration.steps"), "at least two grays required"));
    }
    if !(c.min > 0.0 && c.min < c.max && c.max <= 1.0) {
        return Err(ConfigError::new(
            format!("{path}.calibration.min"),
            "need 0 < min < max <= 1",
        ));
    }
    Ok(())
}
