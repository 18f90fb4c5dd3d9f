//! Per-pixel leaves / branches / background segmentation from RGB, depth, or
//! both, with a diagonal-Gaussian classifier.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{DepthMap, Image, ImageRgb, LabelMap, NUM_CLASSES};
use crate::metrics::{IouCounts, IouReport, MetricRow};
use crate::scene::{srgb_image, SceneModel};
use crate::spectral::color::srgb_to_linear;

pub const NUM_FEATURES: usize = 5;
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = ["r", "g", "b", "depth", "depth_std"];
pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const MODEL_SCHEMA: u32 = 1;
/// Default additive RGB noise (8-bit units) for frames built from scenes.
pub const DEFAULT_RGB_NOISE: f64 = 3.0;
/// Default relative depth noise for frames built from scenes, roughly what
/// a structured-light sensor delivers on swaying foliage at 1–3 m.
pub const DEFAULT_DEPTH_NOISE: f64 = 0.2;
const STD_RADIUS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubset {
    Rgb,
    Depth,
    Rgbd,
}

impl FeatureSubset {
    pub const ALL: [FeatureSubset; 3] = [FeatureSubset::Rgb, FeatureSubset::Depth, FeatureSubset::Rgbd];

    /// Indices into the full feature vector.
    pub fn indices(self) -> &'static [usize] {
        match self {
            FeatureSubset::Rgb => &[0, 1, 2],
            FeatureSubset::Depth => &[3, 4],
            FeatureSubset::Rgbd => &[0, 1, 2, 3, 4],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureSubset::Rgb => "rgb",
            FeatureSubset::Depth => "depth",
            FeatureSubset::Rgbd => "rgbd",
        }
    }
}

/// Per-pixel features `[r, g, b, depth / median, 5×5 depth std / median]`.
/// Invalid depth is replaced by the scene median before both depth features
/// are computed, and flagged in `valid`.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub values: Image<[f64; NUM_FEATURES]>,
    pub valid: Image<bool>,
}

fn median(values: &mut [f32]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    Some(values[values.len() / 2] as f64)
}

/// Population standard deviation, exactly zero for constant input.
fn window_std(values: &[f64]) -> f64 {
    let base = values[0];
    let n = values.len() as f64;
    let mean = values.iter().map(|v| v - base).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - base - mean).powi(2)).sum::<f64>() / n;
    var.sqrt()
}

pub fn extract_features(rgb: &ImageRgb, depth: &DepthMap) -> Result<Features> {
    let (w, h) = rgb.dims();
    if depth.dims() != (w, h) {
        return Err(Error::DimensionMismatch {
            expected: (w, h),
            actual: depth.dims(),
        });
    }
    let med = median(&mut depth.valid_values()).unwrap_or(1.0);
    let med = if med > 0.0 { med } else { 1.0 };
    let z = Image::from_fn(w, h, |x, y| depth.at(x, y).map_or(1.0, |d| d as f64 / med))?;

    let lut: Vec<f64> = (0..=255u8).map(|v| srgb_to_linear(v as f64 / 255.0)).collect();
    let rows: Vec<Vec<[f64; NUM_FEATURES]>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut window = Vec::with_capacity((2 * STD_RADIUS + 1).pow(2));
            (0..w)
                .map(|x| {
                    window.clear();
                    for yy in y.saturating_sub(STD_RADIUS)..(y + STD_RADIUS + 1).min(h) {
                        for xx in x.saturating_sub(STD_RADIUS)..(x + STD_RADIUS + 1).min(w) {
                            window.push(*z.get(xx, yy));
                        }
                    }
                    let p = rgb.get(x, y);
                    [
                        lut[p[0] as usize],
                        lut[p[1] as usize],
                        lut[p[2] as usize],
                        *z.get(x, y),
                        window_std(&window),
                    ]
                })
                .collect()
        })
        .collect();
    Ok(Features {
        values: Image::from_vec(w, h, rows.into_iter().flatten().collect())?,
        valid: depth.valid().clone(),
    })
}

/// One labeled RGB-D frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrame {
    pub rgb: ImageRgb,
    pub depth: DepthMap,
    pub labels: LabelMap,
}

impl LabeledFrame {
    /// Ground-truth colors and depth of a labeled scene with additive noise:
    /// `rgb_noise` in 8-bit units, `depth_noise` relative to depth.
    pub fn from_scene(scene: &SceneModel, rgb_noise: f64, depth_noise: f64, seed: u64) -> Result<Self> {
        let labels = scene
            .labels()
            .ok_or_else(|| Error::invalid("scene", "segmentation needs a label map"))?
            .clone();
        if !(rgb_noise >= 0.0 && depth_noise >= 0.0) {
            return Err(Error::invalid("frame noise", "noise levels must be non-negative"));
        }
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = scene.dims();
        let mut rgb = srgb_image(scene)?;
        if rgb_noise > 0.0 {
            for p in rgb.data_mut() {
                for v in p.iter_mut() {
                    *v = (*v as f64 + rgb_noise * unit.sample(&mut rng)).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        let truth = scene.depth();
        let depth = if depth_noise > 0.0 {
            let z = Image::from_fn(w, h, |x, y| {
                let z = *truth.depth().get(x, y) as f64;
                (z * (1.0 + depth_noise * unit.sample(&mut rng))).max(0.0) as f32
            })?;
            DepthMap::new(z, truth.valid().clone())?
        } else {
            truth.clone()
        };
        Ok(LabeledFrame { rgb, depth, labels })
    }
}

/// Diagonal Gaussian per class over the full feature vector; only the
/// subset's features enter the likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierModel {
    pub schema: u32,
    pub subset: FeatureSubset,
    pub means: Vec<[f64; NUM_FEATURES]>,
    pub variances: Vec<[f64; NUM_FEATURES]>,
    pub priors: Vec<f64>,
}

impl ClassifierModel {
    pub fn validate(&self) -> Result<()> {
        if self.schema != MODEL_SCHEMA {
            return Err(Error::invalid("classifier", format!("unsupported schema {}", self.schema)));
        }
        if self.means.len() != NUM_CLASSES || self.variances.len() != NUM_CLASSES || self.priors.len() != NUM_CLASSES {
            return Err(Error::invalid("classifier", format!("expected {NUM_CLASSES} classes")));
        }
        if self.variances.iter().flatten().any(|&v| !(v > 0.0) || !v.is_finite())
            || self.means.iter().flatten().any(|v| !v.is_finite())
        {
            return Err(Error::invalid("classifier", "variances must be positive and means finite"));
        }
        let total: f64 = self.priors.iter().sum();
        if self.priors.iter().any(|&p| !(p > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("classifier", "priors must be positive and sum to 1"));
        }
        Ok(())
    }

    /// Log prior plus Gaussian log-likelihood of each class.
    pub fn class_scores(&self, f: &[f64; NUM_FEATURES]) -> [f64; NUM_CLASSES] {
        std::array::from_fn(|c| {
            let mut s = self.priors[c].ln();
            for &i in self.subset.indices() {
                let var = self.variances[c][i];
                let d = f[i] - self.means[c][i];
                s -= 0.5 * ((2.0 * std::f64::consts::PI * var).ln() + d * d / var);
            }
            s
        })
    }

    /// Highest-scoring class; ties go to the smaller class id.
    pub fn classify(&self, f: &[f64; NUM_FEATURES]) -> u8 {
        let scores = self.class_scores(f);
        let mut best = 0;
        for c in 1..NUM_CLASSES {
            if scores[c] > scores[best] {
                best = c;
            }
        }
        best as u8
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let m: ClassifierModel = serde_json::from_slice(&fs::read(path)?)?;
        m.validate()?;
        Ok(m)
    }
}

/// Fits class means, variances (floored) and priors over all valid pixels.
pub fn train(frames: &[LabeledFrame], subset: FeatureSubset) -> Result<ClassifierModel> {
    if frames.is_empty() {
        return Err(Error::invalid("training set", "no frames"));
    }
    let mut count = [0u64; NUM_CLASSES];
    let mut sum = [[0.0f64; NUM_FEATURES]; NUM_CLASSES];
    let mut feats = Vec::with_capacity(frames.len());
    for fr in frames {
        fr.rgb.ensure_same_dims(fr.labels.image())?;
        let f = extract_features(&fr.rgb, &fr.depth)?;
        for ((v, &ok), &l) in f.values.data().iter().zip(f.valid.data()).zip(fr.labels.image().data()) {
            if ok {
                let c = l as usize;
                count[c] += 1;
                for i in 0..NUM_FEATURES {
                    sum[c][i] += v[i];
                }
            }
        }
        feats.push(f);
    }
    if let Some(c) = count.iter().position(|&n| n == 0) {
        return Err(Error::invalid("training set", format!("class {c} has no valid pixels")));
    }
    let means: Vec<[f64; NUM_FEATURES]> =
        (0..NUM_CLASSES).map(|c| sum[c].map(|s| s / count[c] as f64)).collect();
    let mut sq = [[0.0f64; NUM_FEATURES]; NUM_CLASSES];
    for (f, fr) in feats.iter().zip(frames) {
        for ((v, &ok), &l) in f.values.data().iter().zip(f.valid.data()).zip(fr.labels.image().data()) {
            if ok {
                let c = l as usize;
                for i in 0..NUM_FEATURES {
                    sq[c][i] += (v[i] - means[c][i]).powi(2);
                }
            }
        }
    }
    let variances = (0..NUM_CLASSES)
        .map(|c| sq[c].map(|s| (s / count[c] as f64).max(VARIANCE_FLOOR)))
        .collect();
    let total: u64 = count.iter().sum();
    let model = ClassifierModel {
        schema: MODEL_SCHEMA,
        subset,
        means,
        variances,
        priors: count.iter().map(|&n| n as f64 / total as f64).collect(),
    };
    model.validate()?;
    Ok(model)
}

pub fn predict_features(model: &ClassifierModel, features: &Features) -> Result<LabelMap> {
    let (w, h) = features.values.dims();
    let labels: Vec<u8> = features.values.data().par_iter().map(|f| model.classify(f)).collect();
    LabelMap::new(Image::from_vec(w, h, labels)?)
}

pub fn predict(model: &ClassifierModel, rgb: &ImageRgb, depth: &DepthMap) -> Result<LabelMap> {
    predict_features(model, &extract_features(rgb, depth)?)
}

/// IoU pooled over the pixels of every frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationReport {
    pub subset: FeatureSubset,
    pub counts: IouCounts,
    pub iou: IouReport,
}

impl SegmentationReport {
    pub fn rows(&self, scene: &str) -> Vec<MetricRow> {
        let method = format!("segment_{}", self.subset.name());
        let mut rows: Vec<MetricRow> = CLASS_NAMES
            .iter()
            .zip(self.iou.per_class)
            .filter_map(|(name, v)| v.map(|v| MetricRow::new(scene, &method, format!("iou_{name}"), v)))
            .collect();
        rows.push(MetricRow::new(scene, method, "iou_mean", self.iou.mean));
        rows
    }
}

pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["background", "leaves", "branches"];

pub fn evaluate(model: &ClassifierModel, frames: &[LabeledFrame]) -> Result<SegmentationReport> {
    let mut counts = IouCounts::default();
    for fr in frames {
        let pred = predict(model, &fr.rgb, &fr.depth)?;
        counts.add(&pred, &fr.labels)?;
    }
    Ok(SegmentationReport {
        subset: model.subset,
        counts,
        iou: counts.report(),
    })
}

/// Markdown table with one row per report.
pub fn reports_to_markdown(reports: &[SegmentationReport]) -> String {
    let mut s = String::from("| features | background | leaves | branches | mean |\n|---|---|---|---|---|\n");
    for r in reports {
        let cell = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {:.3} |",
            r.subset.name(),
            cell(r.iou.per_class[0]),
            cell(r.iou.per_class[1]),
            cell(r.iou.per_class[2]),
            r.iou.mean
        );
    }
    s
}

/// Uniformly random labels, a chance-level reference.
pub fn random_labels(width: usize, height: usize, seed: u64) -> Result<LabelMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LabelMap::new(Image::from_fn(width, height, |_, _| rng.random_range(0..NUM_CLASSES as u8))?)
}
