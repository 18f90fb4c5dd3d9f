//! Structured-light depth: event timestamps are inverted through the scan
//! schedule to find the lit projector pixel, then triangulated against the
//! camera pixel in a rectified rig.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{EventStream, Polarity};
use crate::image::{DepthMap, Image};
use crate::projector::ScanSchedule;
use crate::scene::RigGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolarityFilter {
    #[default]
    On,
    Off,
    Both,
}

impl PolarityFilter {
    fn accepts(self, p: Polarity) -> bool {
        match self {
            PolarityFilter::On => p == Polarity::On,
            PolarityFilter::Off => p == Polarity::Off,
            PolarityFilter::Both => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthConfig {
    pub polarity: PolarityFilter,
    pub median_radius: usize,
    /// Largest allowed gap, in camera rows, between an event's row and the
    /// row its projector pixel maps to.
    pub row_tolerance: f64,
    /// Column slack when scoring correspondences against ground truth.
    pub column_tolerance: usize,
}

impl Default for DepthConfig {
    fn default() -> Self {
        DepthConfig {
            polarity: PolarityFilter::On,
            median_radius: 1,
            row_tolerance: 1.0,
            column_tolerance: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Correspondence {
    pub x: usize,
    pub y: usize,
    pub col: usize,
    pub row: usize,
    pub frame: u64,
    pub t_us: u64,
}

/// Maps events to the projector pixel lit at their timestamp. Only the first
/// accepted event of each camera pixel in each frame is kept.
pub fn match_events(
    stream: &EventStream,
    schedule: &ScanSchedule,
    polarity: PolarityFilter,
) -> Result<Vec<Correspondence>> {
    let w = stream.width();
    let mut last_frame: Vec<Option<u64>> = vec![None; w * stream.height()];
    let mut out = Vec::new();
    for e in stream.events() {
        if !polarity.accepts(e.p) {
            continue;
        }
        let (col, row, frame) = schedule.scan_position_at(e.t as f64 * 1e-6)?;
        let slot = &mut last_frame[e.y as usize * w + e.x as usize];
        if slot.is_some_and(|f| f >= frame) {
            continue;
        }
        *slot = Some(frame);
        out.push(Correspondence {
            x: e.x as usize,
            y: e.y as usize,
            col,
            row,
            frame,
            t_us: e.t,
        });
    }
    Ok(out)
}

/// A projector coordinate expressed in camera pixels. A camera pixel covers
/// `f_p / f_c` projector pixels, and the first one lit is on average half a
/// footprint minus half a pixel left of the footprint center.
pub fn projector_to_camera_coords(col: f64, row: f64, rig: &RigGeometry) -> (f64, f64) {
    let ratio = rig.focal_ratio();
    let lead = (ratio - 1.0).max(0.0) / 2.0;
    (
        rig.camera.cx + (col + lead - rig.projector.cx) / ratio,
        rig.camera.cy + (row + lead - rig.projector.cy) / ratio,
    )
}

/// Disparity in camera pixels.
pub fn disparity(corr: &Correspondence, rig: &RigGeometry) -> f64 {
    let (xp, _) = projector_to_camera_coords(corr.col as f64, corr.row as f64, rig);
    corr.x as f64 - xp
}

/// Z = f * b / d.
pub fn depth_from_disparity(d: f64, focal: f64, baseline: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::invalid("correspondence", format!("non-positive disparity {d}")));
    }
    Ok(focal * baseline / d)
}

pub fn triangulate(corr: &Correspondence, rig: &RigGeometry) -> Result<f64> {
    if !rig.rectified {
        return Err(Error::invalid("rig", "only rectified rigs are supported"));
    }
    depth_from_disparity(disparity(corr, rig), rig.camera.focal, rig.baseline)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthReconstruction {
    pub depth: DepthMap,
    pub correspondences: Vec<Correspondence>,
    /// Correspondences dropped for non-positive disparity or an off-epipolar row.
    pub rejected: usize,
}

/// Full pipeline: match, triangulate the earliest correspondence of every
/// camera pixel, then median-filter.
pub fn reconstruct_depth_detailed(
    stream: &EventStream,
    rig: &RigGeometry,
    schedule: &ScanSchedule,
    config: &DepthConfig,
) -> Result<DepthReconstruction> {
    rig.validate()?;
    if (stream.width(), stream.height()) != (rig.camera.width, rig.camera.height) {
        return Err(Error::DimensionMismatch {
            expected: (rig.camera.width, rig.camera.height),
            actual: (stream.width(), stream.height()),
        });
    }
    let corr = match_events(stream, schedule, config.polarity)?;
    let (w, h) = (stream.width(), stream.height());
    let mut depth = Image::filled(w, h, 0.0f32)?;
    let mut valid = Image::filled(w, h, false)?;
    let mut rejected = 0;
    for c in &corr {
        if *valid.get(c.x, c.y) {
            continue;
        }
        let (_, yp) = projector_to_camera_coords(c.col as f64, c.row as f64, rig);
        if (yp - c.y as f64).abs() > config.row_tolerance {
            rejected += 1;
            continue;
        }
        match triangulate(c, rig) {
            Ok(z) if z.is_finite() && (z as f32) > 0.0 => {
                depth.set(c.x, c.y, z as f32);
                valid.set(c.x, c.y, true);
            }
            _ => rejected += 1,
        }
    }
    let raw = DepthMap::new(depth, valid)?;
    Ok(DepthReconstruction {
        depth: median_filter(&raw, config.median_radius),
        correspondences: corr,
        rejected,
    })
}

pub fn reconstruct_depth(
    stream: &EventStream,
    rig: &RigGeometry,
    schedule: &ScanSchedule,
    config: &DepthConfig,
) -> Result<DepthMap> {
    Ok(reconstruct_depth_detailed(stream, rig, schedule, config)?.depth)
}

/// Median over the valid pixels of each `(2r+1)²` window, applied to valid
/// pixels only. With an even count the upper median is taken. Pixels with
/// fewer than three valid neighbours (self included) keep their value.
pub fn median_filter(depth: &DepthMap, radius: usize) -> DepthMap {
    if radius == 0 {
        return depth.clone();
    }
    let (w, h) = depth.dims();
    let rows: Vec<Vec<f32>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut window = Vec::with_capacity((2 * radius + 1).pow(2));
            (0..w)
                .map(|x| {
                    let Some(z) = depth.at(x, y) else {
                        return 0.0;
                    };
                    window.clear();
                    for yy in y.saturating_sub(radius)..(y + radius + 1).min(h) {
                        for xx in x.saturating_sub(radius)..(x + radius + 1).min(w) {
                            if let Some(v) = depth.at(xx, yy) {
                                window.push(v);
                            }
                        }
                    }
                    if window.len() < 3 {
                        return z;
                    }
                    window.sort_unstable_by(f32::total_cmp);
                    window[window.len() / 2]
                })
                .collect()
        })
        .collect();
    let values = Image::from_vec(w, h, rows.into_iter().flatten().collect()).expect("same dims");
    DepthMap::new(values, depth.valid().clone()).expect("medians of valid depths are valid")
}

/// CSV dump of correspondences: `x,y,col,row,frame,t_us`.
pub fn correspondences_to_csv(corr: &[Correspondence]) -> String {
    let mut s = String::from("x,y,col,row,frame,t_us\n");
    for c in corr {
        let _ = writeln!(s, "{},{},{},{},{},{}", c.x, c.y, c.col, c.row, c.frame, c.t_us);
    }
    s
}
