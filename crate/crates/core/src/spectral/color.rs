//! sRGB / CIELAB conversions, RGB assembly from band images, and the chart
//! color-correction chain (white balance, then tone-curve linearization).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{region_mean_rgb, ImageFloat, ImageRgb, Rect};

/// IEC 61966-2-1 decoding of a nonlinear sRGB value in `[0, 1]`.
pub fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(v: f64) -> f64 {
    if v <= 0.0031308 {
        v * 12.92
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

fn xyz_from_linear(rgb: [f64; 3]) -> [f64; 3] {
    SRGB_TO_XYZ.map(|row| row[0] * rgb[0] + row[1] * rgb[1] + row[2] * rgb[2])
}

/// sRGB color on the 0..255 scale (fractional values allowed) to CIELAB.
/// The reference white is the XYZ of sRGB white, so white maps to L*=100, a*=b*=0.
pub fn srgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(|c| srgb_to_linear(c / 255.0));
    let [x, y, z] = xyz_from_linear(lin);
    let [xn, yn, zn] = xyz_from_linear([1.0; 3]);
    let f = |t: f64| {
        const D: f64 = 6.0 / 29.0;
        if t > D * D * D {
            t.cbrt()
        } else {
            t / (3.0 * D * D) + 4.0 / 29.0
        }
    };
    let (fx, fy, fz) = (f(x / xn), f(y / yn), f(z / zn));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub fn delta_e76_lab(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// CIE 1976 color difference between two 8-bit sRGB colors.
pub fn delta_e76(a: [u8; 3], b: [u8; 3]) -> f64 {
    delta_e76_lab(srgb_to_lab(a.map(f64::from)), srgb_to_lab(b.map(f64::from)))
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Stacks three linear band images as RGB, clamps to `[0, 1]` and rounds to 8 bits.
pub fn reconstruct_rgb(r: &ImageFloat, g: &ImageFloat, b: &ImageFloat) -> Result<ImageRgb> {
    r.ensure_same_dims(g)?;
    r.ensure_same_dims(b)?;
    let data = r
        .data()
        .iter()
        .zip(g.data())
        .zip(b.data())
        .map(|((&r, &g), &b)| [quantize(r as f64), quantize(g as f64), quantize(b as f64)])
        .collect();
    ImageRgb::from_vec(r.width(), r.height(), data)
}

fn check_patches(regions: &[Rect], truths: &[[f64; 3]], min: usize) -> Result<()> {
    if regions.len() != truths.len() {
        return Err(Error::invalid(
            "gray patches",
            format!("{} regions but {} truths", regions.len(), truths.len()),
        ));
    }
    if regions.len() < min {
        return Err(Error::invalid(
            "gray patches",
            format!("need at least {min}, got {}", regions.len()),
        ));
    }
    Ok(())
}

/// Per-channel gains mapping measured gray-patch means onto their truths
/// (0..255 scale), applied multiplicatively with clamping.
pub fn white_balance(
    image: &ImageRgb,
    gray_regions: &[Rect],
    gray_truths: &[[f64; 3]],
) -> Result<(ImageRgb, [f64; 3])> {
    check_patches(gray_regions, gray_truths, 1)?;
    let mut gains = [0.0; 3];
    for (rect, truth) in gray_regions.iter().zip(gray_truths) {
        let m = region_mean_rgb(image, rect)?;
        for c in 0..3 {
            if m[c] == 0.0 {
                return Err(Error::Degenerate(format!(
                    "gray patch {rect:?} has zero mean in channel {c}"
                )));
            }
            gains[c] += truth[c] / m[c];
        }
    }
    let n = gray_regions.len() as f64;
    let gains = gains.map(|g| g / n);
    Ok((apply_gains(image, gains), gains))
}

fn apply_gains(image: &ImageRgb, gains: [f64; 3]) -> ImageRgb {
    image.map(|p| [0, 1, 2].map(|c| (p[c] as f64 * gains[c]).clamp(0.0, 255.0).round() as u8))
}

/// Per-channel least-squares gains `Σ m·t / Σ m²` over the gray patches.
/// Bright patches dominate, so a dark patch reading near zero cannot blow up
/// the gain the way a ratio average does.
pub fn white_balance_fit(
    image: &ImageRgb,
    gray_regions: &[Rect],
    gray_truths: &[[f64; 3]],
) -> Result<(ImageRgb, [f64; 3])> {
    check_patches(gray_regions, gray_truths, 1)?;
    let mut num = [0.0; 3];
    let mut den = [0.0; 3];
    for (rect, truth) in gray_regions.iter().zip(gray_truths) {
        let m = region_mean_rgb(image, rect)?;
        for c in 0..3 {
            num[c] += m[c] * truth[c];
            den[c] += m[c] * m[c];
        }
    }
    if let Some(c) = (0..3).find(|&c| den[c] == 0.0) {
        return Err(Error::Degenerate(format!("every gray patch reads zero in channel {c}")));
    }
    let gains = [0, 1, 2].map(|c| num[c] / den[c]);
    Ok((apply_gains(image, gains), gains))
}

/// Monotone piecewise-linear map with constant extrapolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToneCurve {
    knots: Vec<(f64, f64)>,
}

impl ToneCurve {
    /// Knots must be strictly increasing in input and non-decreasing in output.
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::invalid("tone curve", "no knots"));
        }
        for w in knots.windows(2) {
            if !(w[1].0 > w[0].0) || w[1].1 < w[0].1 {
                return Err(Error::invalid(
                    "tone curve",
                    format!("knots not monotone at ({}, {})", w[1].0, w[1].1),
                ));
            }
        }
        Ok(ToneCurve { knots })
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn apply(&self, v: f64) -> f64 {
        let k = &self.knots;
        if v <= k[0].0 {
            return k[0].1;
        }
        let last = k[k.len() - 1];
        if v >= last.0 {
            return last.1;
        }
        let i = k.partition_point(|&(x, _)| x <= v);
        let ((x0, y0), (x1, y1)) = (k[i - 1], k[i]);
        y0 + (v - x0) / (x1 - x0) * (y1 - y0)
    }
}

/// Per-channel gains and tone curves fitted on a chart's gray patches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorCalibration {
    pub gains: [f64; 3],
    pub curves: [ToneCurve; 3],
}

/// Fits, per channel, a monotone curve through (measured mean, truth) of each
/// gray patch and applies it. Patches with equal measured means are merged by
/// averaging their truths; a brighter truth measuring darker is an error.
/// Inputs above the brightest patch hold its truth.
pub fn linearize_curve(
    image: &ImageRgb,
    gray_regions: &[Rect],
    gray_truths: &[[f64; 3]],
) -> Result<(ImageRgb, [ToneCurve; 3])> {
    check_patches(gray_regions, gray_truths, 3)?;
    let means = gray_regions
        .iter()
        .map(|r| region_mean_rgb(image, r))
        .collect::<Result<Vec<_>>>()?;
    let fit = |c: usize| -> Result<ToneCurve> {
        let mut pts: Vec<(f64, f64)> = means.iter().zip(gray_truths).map(|(m, t)| (m[c], t[c])).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let mut knots: Vec<(f64, f64, usize)> = Vec::new();
        for (m, t) in pts {
            match knots.last_mut() {
                Some(k) if k.0 == m => {
                    k.1 += t;
                    k.2 += 1;
                }
                _ => knots.push((m, t, 1)),
            }
        }
        // Zero signal is zero reflectance, so the curve starts at the origin
        // rather than extrapolating the darkest patch downwards.
        if knots[0].0 > 0.0 {
            knots.insert(0, (0.0, 0.0, 1));
        }
        ToneCurve::new(knots.into_iter().map(|(m, t, n)| (m, t / n as f64)).collect())
            .map_err(|_| Error::invalid("gray patches", format!("channel {c} response is not monotone")))
    };
    let curves = [fit(0)?, fit(1)?, fit(2)?];
    let out = image.map(|p| [0, 1, 2].map(|c| curves[c].apply(p[c] as f64).clamp(0.0, 255.0).round() as u8));
    Ok((out, curves))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorStage {
    Raw,
    Wb,
    Curve,
}

impl ColorStage {
    pub const ALL: [ColorStage; 3] = [ColorStage::Raw, ColorStage::Wb, ColorStage::Curve];

    pub fn name(self) -> &'static str {
        match self {
            ColorStage::Raw => "raw",
            ColorStage::Wb => "wb",
            ColorStage::Curve => "curve",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChartError {
    pub stage: ColorStage,
    /// ΔE76 per block, in block order.
    pub per_block: Vec<f64>,
    pub mean_delta_e: f64,
    pub rms_delta_e: f64,
    /// RMSE of the per-block mean colors over all channels, 0..255 scale.
    pub rgb_rmse: f64,
}

/// Compares per-block mean colors of a reconstructed chart with the truth chart.
pub fn chart_error(
    reconstructed: &ImageRgb,
    truth: &ImageRgb,
    block_regions: &[Rect],
    stage: ColorStage,
) -> Result<ChartError> {
    reconstructed.ensure_same_dims(truth)?;
    if block_regions.is_empty() {
        return Err(Error::invalid("chart", "no blocks"));
    }
    let mut per_block = Vec::with_capacity(block_regions.len());
    let mut sq = 0.0;
    for r in block_regions {
        let a = region_mean_rgb(reconstructed, r)?;
        let b = region_mean_rgb(truth, r)?;
        per_block.push(delta_e76_lab(srgb_to_lab(a), srgb_to_lab(b)));
        sq += (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>();
    }
    let n = per_block.len() as f64;
    Ok(ChartError {
        stage,
        mean_delta_e: per_block.iter().sum::<f64>() / n,
        rms_delta_e: (per_block.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
        rgb_rmse: (sq / (3.0 * n)).sqrt(),
        per_block,
    })
}

/// The three correction stages applied to a raw chart reconstruction.
#[derive(Debug, Clone)]
pub struct ChartCorrection {
    pub images: [ImageRgb; 3],
    pub calibration: ColorCalibration,
    pub errors: [ChartError; 3],
}

/// Runs raw → white balance → tone curve and scores every stage.
pub fn correct_chart(
    raw: &ImageRgb,
    truth: &ImageRgb,
    block_regions: &[Rect],
    gray_regions: &[Rect],
) -> Result<ChartCorrection> {
    let gray_truths = gray_regions
        .iter()
        .map(|r| region_mean_rgb(truth, r))
        .collect::<Result<Vec<_>>>()?;
    let (wb, gains) = white_balance_fit(raw, gray_regions, &gray_truths)?;
    let (curve, curves) = linearize_curve(&wb, gray_regions, &gray_truths)?;
    let images = [raw.clone(), wb, curve];
    let errors = [
        chart_error(&images[0], truth, block_regions, ColorStage::Raw)?,
        chart_error(&images[1], truth, block_regions, ColorStage::Wb)?,
        chart_error(&images[2], truth, block_regions, ColorStage::Curve)?,
    ];
    Ok(ChartCorrection {
        images,
        calibration: ColorCalibration { gains, curves },
        errors,
    })
}
