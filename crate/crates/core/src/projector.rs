//! Active illumination: a raster-scanning point projector and a full-field
//! chopped source.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageFloat;
use crate::scene::{RigGeometry, SceneModel};

/// Slack used when deciding on which side of a boundary a sample falls.
pub(crate) const BOUNDARY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectorMode {
    Scanning,
    Chopped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectorConfig {
    pub width: usize,
    pub height: usize,
    pub frame_rate: f64,
    /// Band centers in nm.
    pub wavelengths: Vec<f64>,
    /// Projector intensity I_p per band, aligned with `wavelengths`.
    pub band_intensity: Vec<f64>,
    pub mode: ProjectorMode,
    pub chopper_rate: f64,
    /// Scan start time in seconds.
    pub start: f64,
}

pub const RGB_WAVELENGTHS_NM: [f64; 3] = [638.0, 520.0, 450.0];
pub const SPECTROSCOPY_WAVELENGTHS_NM: [f64; 6] = [650.0, 690.0, 730.0, 770.0, 810.0, 850.0];

impl Default for ProjectorConfig {
    fn default() -> Self {
        ProjectorConfig {
            width: 1920,
            height: 720,
            frame_rate: 60.0,
            wavelengths: RGB_WAVELENGTHS_NM.to_vec(),
            band_intensity: vec![1.0; 3],
            mode: ProjectorMode::Scanning,
            chopper_rate: 100.0,
            start: 0.0,
        }
    }
}

impl ProjectorConfig {
    /// Full-field chopped source over the six spectroscopy bands.
    pub fn chopped_spectroscopy() -> Self {
        ProjectorConfig {
            mode: ProjectorMode::Chopped,
            wavelengths: SPECTROSCOPY_WAVELENGTHS_NM.to_vec(),
            band_intensity: vec![1.0; 6],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(Error::invalid("projector", format!("frame_rate {} must be > 0", self.frame_rate)));
        }
        if self.wavelengths.is_empty() {
            return Err(Error::invalid("projector", "no wavelengths configured"));
        }
        if self.band_intensity.len() != self.wavelengths.len() {
            return Err(Error::invalid(
                "projector",
                format!(
                    "{} band intensities for {} wavelengths",
                    self.band_intensity.len(),
                    self.wavelengths.len()
                ),
            ));
        }
        if self.band_intensity.iter().any(|&i| !(i >= 0.0 && i.is_finite())) {
            return Err(Error::invalid("projector", "band intensities must be finite and >= 0"));
        }
        if !(self.start >= 0.0 && self.start.is_finite()) {
            return Err(Error::invalid("projector", "start must be >= 0"));
        }
        match self.mode {
            ProjectorMode::Scanning if self.width == 0 || self.height == 0 => {
                Err(Error::invalid("projector", "scanning mode needs a resolution"))
            }
            ProjectorMode::Chopped if !(self.chopper_rate > 0.0 && self.chopper_rate.is_finite()) => {
                Err(Error::invalid("projector", "chopped mode needs chopper_rate > 0"))
            }
            _ => Ok(()),
        }
    }

    /// I_p for a configured band.
    pub fn intensity_at(&self, wavelength_nm: f64) -> Result<f64> {
        self.wavelengths
            .iter()
            .position(|&w| w == wavelength_nm)
            .map(|i| self.band_intensity[i])
            .ok_or_else(|| {
                Error::invalid("wavelength", format!("{wavelength_nm} nm is not a configured band"))
            })
    }

    pub fn schedule(&self) -> Result<ScanSchedule> {
        ScanSchedule::new(self.start, self.width, self.height, self.frame_rate)
    }

    /// Chopper state at time `t` (seconds): on during the first half of each period.
    pub fn chopper_on(&self, t: f64) -> bool {
        (t * self.chopper_rate + BOUNDARY_EPS).fract() < 0.5
    }
}

/// Row-major raster scan timing, one projector pixel per dwell interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanSchedule {
    start: f64,
    width: usize,
    height: usize,
    dwell: f64,
}

impl ScanSchedule {
    pub fn new(start: f64, width: usize, height: usize, frame_rate: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("schedule", "resolution must be positive"));
        }
        let dwell = 1.0 / (frame_rate * (width * height) as f64);
        if !(dwell > 0.0 && dwell.is_finite()) {
            return Err(Error::invalid("schedule", "dwell must be positive"));
        }
        Ok(ScanSchedule {
            start,
            width,
            height,
            dwell,
        })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn dwell(&self) -> f64 {
        self.dwell
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels_per_frame(&self) -> u64 {
        (self.width * self.height) as u64
    }

    pub fn frame_time(&self) -> f64 {
        self.pixels_per_frame() as f64 * self.dwell
    }

    /// Start time of the `k`-th scanned pixel counted from the schedule start.
    pub fn time_of_index(&self, k: u64) -> f64 {
        let n = self.pixels_per_frame();
        self.start + (k / n) as f64 * self.frame_time() + (k % n) as f64 * self.dwell
    }

    pub fn time_of_pixel(&self, col: usize, row: usize, frame: u64) -> Result<f64> {
        if col >= self.width || row >= self.height {
            return Err(Error::invalid(
                "projector pixel",
                format!("({col}, {row}) outside {}x{}", self.width, self.height),
            ));
        }
        Ok(self.time_of_index(frame * self.pixels_per_frame() + (row * self.width + col) as u64))
    }

    /// Index of the pixel lit at `t`, counted from the schedule start.
    pub fn index_at(&self, t: f64) -> Result<u64> {
        if !(t >= self.start) {
            return Err(Error::invalid("time", format!("{t} s precedes scan start {} s", self.start)));
        }
        let mut k = ((t - self.start) / self.dwell).floor() as u64;
        while k > 0 && self.time_of_index(k) > t {
            k -= 1;
        }
        while self.time_of_index(k + 1) <= t {
            k += 1;
        }
        Ok(k)
    }

    /// `(col, row, frame)` lit at `t`.
    pub fn scan_position_at(&self, t: f64) -> Result<(usize, usize, u64)> {
        let k = self.index_at(t)?;
        let n = self.pixels_per_frame();
        let i = (k % n) as usize;
        Ok((i % self.width, i / self.width, k / n))
    }
}

/// Which camera pixel each projector pixel lands on, after projector-side
/// occlusion. Built once per (scene, rig).
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorView {
    width: usize,
    height: usize,
    camera_width: usize,
    /// Row-major over projector pixels: camera linear index, or `NONE`.
    lit: Vec<u32>,
}

impl ProjectorView {
    const NONE: u32 = u32::MAX;

    /// Splats each camera pixel's fronto-parallel footprint into the projector
    /// image. A projector pixel belongs to the footprint containing its center
    /// (half-open on the right and bottom); the nearest surface wins and ties
    /// keep the first camera pixel in row-major order.
    pub fn build(scene: &SceneModel, rig: &RigGeometry) -> Result<Self> {
        rig.validate()?;
        if !rig.rectified {
            return Err(Error::invalid("rig", "only rectified rigs are supported"));
        }
        let cam = &rig.camera;
        let proj = &rig.projector;
        if scene.dims() != (cam.width, cam.height) {
            return Err(Error::DimensionMismatch {
                expected: (cam.width, cam.height),
                actual: scene.dims(),
            });
        }
        let (pw, ph) = (proj.width, proj.height);
        let ratio = rig.focal_ratio();
        let mut lit = vec![Self::NONE; pw * ph];
        let mut zbuf = vec![f32::INFINITY; pw * ph];
        let span = |lo: f64, hi: f64, n: usize| {
            let a = (lo - BOUNDARY_EPS).ceil().max(0.0);
            let b = (hi - BOUNDARY_EPS).ceil().min(n as f64);
            if b > a {
                a as usize..b as usize
            } else {
                0..0
            }
        };
        for y in 0..cam.height {
            let v0 = proj.cy + ratio * (y as f64 - 0.5 - cam.cy);
            let rows = span(v0, v0 + ratio, ph);
            if rows.is_empty() {
                continue;
            }
            for x in 0..cam.width {
                let Some(z) = scene.depth().at(x, y) else {
                    continue;
                };
                let shift = proj.focal * rig.baseline / z as f64;
                let u0 = proj.cx + ratio * (x as f64 - 0.5 - cam.cx) - shift;
                let cols = span(u0, u0 + ratio, pw);
                let cam_index = (y * cam.width + x) as u32;
                for r in rows.clone() {
                    for c in cols.clone() {
                        let i = r * pw + c;
                        if z < zbuf[i] {
                            zbuf[i] = z;
                            lit[i] = cam_index;
                        }
                    }
                }
            }
        }
        Ok(ProjectorView {
            width: pw,
            height: ph,
            camera_width: cam.width,
            lit,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Camera pixel illuminated by projector pixel `(col, row)`, if any.
    pub fn camera_pixel(&self, col: usize, row: usize) -> Option<(usize, usize)> {
        let c = self.lit[row * self.width + col];
        (c != Self::NONE).then(|| (c as usize % self.camera_width, c as usize / self.camera_width))
    }

    /// For every camera pixel (row-major), the projector pixel indices that
    /// land on it, in scan order.
    pub fn hits_per_camera_pixel(&self, camera_len: usize) -> Vec<Vec<u32>> {
        let mut hits = vec![Vec::new(); camera_len];
        for (p, &c) in self.lit.iter().enumerate() {
            if c != Self::NONE {
                hits[c as usize].push(p as u32);
            }
        }
        hits
    }

    /// Camera pixels receiving projector light at least once per frame.
    pub fn lit_mask(&self, camera_width: usize, camera_height: usize) -> Result<crate::image::Mask> {
        let mut mask = crate::image::Mask::filled(camera_width, camera_height, false)?;
        for &c in &self.lit {
            if c != Self::NONE {
                mask.data_mut()[c as usize] = true;
            }
        }
        Ok(mask)
    }
}

/// Irradiance reaching each camera pixel at time `t`, before reflectance.
pub fn irradiance(
    scene: &SceneModel,
    rig: &RigGeometry,
    config: &ProjectorConfig,
    t: f64,
    wavelength_nm: f64,
) -> Result<ImageFloat> {
    config.validate()?;
    let ip = config.intensity_at(wavelength_nm)?;
    let ia = scene.ambient_at(wavelength_nm)?;
    let (w, h) = scene.dims();
    match config.mode {
        ProjectorMode::Chopped => {
            let on = if config.chopper_on(t) { ip } else { 0.0 };
            ImageFloat::filled(w, h, (ia + on) as f32)
        }
        ProjectorMode::Scanning => {
            if (config.width, config.height) != (rig.projector.width, rig.projector.height) {
                return Err(Error::DimensionMismatch {
                    expected: (rig.projector.width, rig.projector.height),
                    actual: (config.width, config.height),
                });
            }
            let view = ProjectorView::build(scene, rig)?;
            let (col, row, _) = config.schedule()?.scan_position_at(t)?;
            let mut img = ImageFloat::filled(w, h, ia as f32)?;
            if let Some((x, y)) = view.camera_pixel(col, row) {
                img.set(x, y, (ia + ip) as f32);
            }
            Ok(img)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{make_plane_scene, PinholeModel};

    fn small_rig() -> RigGeometry {
        RigGeometry {
            camera: PinholeModel::centered(50.0, 64, 48).unwrap(),
            projector: PinholeModel::centered(100.0, 192, 72).unwrap(),
            baseline: 0.1,
            rectified: true,
        }
    }

    #[test]
    fn schedule_row_major() {
        let s = ScanSchedule::new(0.5, 10, 4, 60.0).unwrap();
        assert_eq!(s.scan_position_at(0.5).unwrap(), (0, 0, 0));
        let t = 0.5 + s.dwell() * 11.0;
        assert_eq!(s.scan_position_at(t + s.dwell() * 0.25).unwrap(), (1, 1, 0));
        assert_eq!(s.time_of_pixel(1, 1, 0).unwrap(), t);
        assert!(s.scan_position_at(0.4).is_err());
        assert!(s.time_of_pixel(10, 0, 0).is_err());
    }

    #[test]
    fn chopper_halves() {
        let c = ProjectorConfig {
            mode: ProjectorMode::Chopped,
            ..Default::default()
        };
        assert!(c.chopper_on(0.0));
        assert!(c.chopper_on(0.0049));
        assert!(!c.chopper_on(0.005));
        assert!(!c.chopper_on(0.0099));
        assert!(c.chopper_on(0.01));
    }

    #[test]
    fn plane_lit_once_per_frame() {
        let rig = small_rig();
        let scene = make_plane_scene(64, 48, 1.0).unwrap();
        let view = ProjectorView::build(&scene, &rig).unwrap();
        let hits = view.hits_per_camera_pixel(64 * 48);
        // A footprint fully inside the projector image covers a 2x2 block.
        assert!(hits.iter().all(|h| h.len() <= 4));
        assert!(hits.iter().filter(|h| h.len() == 4).count() > 64 * 48 / 2);
        // Every projector pixel lands on exactly one camera pixel of the plane.
        let total: usize = hits.iter().map(Vec::len).sum();
        let lit = (0..72)
            .flat_map(|r| (0..192).map(move |c| (c, r)))
            .filter(|&(c, r)| view.camera_pixel(c, r).is_some())
            .count();
        assert_eq!(total, lit);
    }

    #[test]
    fn unconfigured_band_rejected() {
        let rig = small_rig();
        let scene = make_plane_scene(64, 48, 1.0).unwrap();
        let cfg = ProjectorConfig {
            width: 192,
            height: 72,
            ..Default::default()
        };
        assert!(irradiance(&scene, &rig, &cfg, 0.0, 700.0).is_err());
        assert!(irradiance(&scene, &rig, &cfg, 0.0, 638.0).is_ok());
    }
}
