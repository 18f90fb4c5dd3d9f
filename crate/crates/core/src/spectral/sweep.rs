//! Bias sweeps: which pixels still fire as the sensor is made stricter, and
//! how that maps back to a reflectance lower bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{EventStream, Polarity};
use crate::image::{Image, ImageFloat, Mask, Rect};
use crate::projector::{ProjectorConfig, ProjectorMode};
use crate::scene::{RigGeometry, SceneModel};
use crate::sensor::{simulate, SensorConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Additive ON-threshold offset; higher is stricter.
    DiffOnBias,
    /// Follower bandwidth scale; lower is stricter.
    PrBias,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    pub param: SweepParam,
    pub values: Vec<f64>,
    #[serde(default = "default_capture_ms")]
    pub capture_ms: f64,
    pub wavelength_nm: f64,
}

fn default_capture_ms() -> f64 {
    500.0
}

impl SweepPlan {
    pub fn new(param: SweepParam, values: Vec<f64>, capture_ms: f64, wavelength_nm: f64) -> Result<Self> {
        let plan = SweepPlan {
            param,
            values,
            capture_ms,
            wavelength_nm,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// `k` values spaced geometrically from `first` to `last` inclusive.
    pub fn geometric(
        param: SweepParam,
        first: f64,
        last: f64,
        k: usize,
        capture_ms: f64,
        wavelength_nm: f64,
    ) -> Result<Self> {
        if k < 2 || !(first > 0.0 && last > 0.0) {
            return Err(Error::invalid("sweep plan", "geometric sweep needs k >= 2 and positive ends"));
        }
        let ratio = (last / first).powf(1.0 / (k - 1) as f64);
        let values = (0..k)
            .map(|i| if i == k - 1 { last } else { first * ratio.powi(i as i32) })
            .collect();
        Self::new(param, values, capture_ms, wavelength_nm)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() < 2 {
            return Err(Error::invalid("sweep plan", "at least two levels required"));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("sweep plan", "levels must be finite"));
        }
        let up = self.values.windows(2).all(|w| w[1] > w[0]);
        let down = self.values.windows(2).all(|w| w[1] < w[0]);
        if !(up || down) {
            return Err(Error::invalid("sweep plan", "levels must be strictly monotone"));
        }
        if !(self.capture_ms > 0.0 && self.capture_ms.is_finite()) {
            return Err(Error::invalid("sweep plan", "capture_ms must be > 0"));
        }
        Ok(())
    }

    /// Level indices ordered from loosest to strictest.
    pub fn strictness_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.values.len()).collect();
        match self.param {
            SweepParam::DiffOnBias => idx.sort_by(|&a, &b| self.values[a].total_cmp(&self.values[b])),
            SweepParam::PrBias => idx.sort_by(|&a, &b| self.values[b].total_cmp(&self.values[a])),
        }
        idx
    }

    /// Sensor configuration for level `k`.
    pub fn apply(&self, sensor: &SensorConfig, k: usize) -> SensorConfig {
        let mut s = sensor.clone();
        match self.param {
            SweepParam::DiffOnBias => s.diff_on_bias = self.values[k],
            SweepParam::PrBias => s.pr_bias = self.values[k],
        }
        s
    }
}

/// Pixels that emitted at least one ON event during one sweep level.
#[derive(Debug, Clone, PartialEq)]
pub struct FiredMap {
    pub level: usize,
    pub value: f64,
    pub fired: Mask,
}

/// Simulates every level of `plan` under chopped light and records which
/// pixels fired. The sensor restarts from its steady state at each level.
pub fn run_sweep(
    scene: &SceneModel,
    rig: &RigGeometry,
    projector: &ProjectorConfig,
    sensor: &SensorConfig,
    plan: &SweepPlan,
) -> Result<Vec<FiredMap>> {
    plan.validate()?;
    if projector.mode != ProjectorMode::Chopped {
        return Err(Error::invalid("sweep", "sweeps need a chopped projector"));
    }
    plan.values
        .iter()
        .enumerate()
        .map(|(k, &value)| {
            let cfg = plan.apply(sensor, k);
            let out = simulate(scene, rig, projector, &cfg, plan.capture_ms * 1e-3, plan.wavelength_nm)?;
            Ok(FiredMap {
                level: k,
                value,
                fired: out.fired(),
            })
        })
        .collect()
}

/// Reflectance assigned to a pixel whose strictest firing level is `k`,
/// indexed like the plan's levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCalibration {
    pub level_reflectance: Vec<f64>,
}

impl SweepCalibration {
    pub fn maximum(&self) -> f64 {
        self.level_reflectance.iter().copied().fold(0.0, f64::max)
    }

    /// Distinct calibration values in increasing order.
    pub fn bins(&self) -> Vec<f64> {
        let mut v = self.level_reflectance.clone();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }
}

fn check_maps(maps: &[FiredMap], plan: &SweepPlan) -> Result<()> {
    if maps.len() != plan.values.len() {
        return Err(Error::invalid(
            "sweep",
            format!("{} fired maps for {} levels", maps.len(), plan.values.len()),
        ));
    }
    for m in &maps[1..] {
        maps[0].fired.ensure_same_dims(&m.fired)?;
    }
    Ok(())
}

/// Builds the level → reflectance table from a swept gray wedge: each level
/// maps to the dimmest gray whose region mostly fired. Levels at which no
/// gray fires inherit the brightest gray, and the table is made
/// non-decreasing in strictness.
pub fn calibrate_sweep(
    maps: &[FiredMap],
    plan: &SweepPlan,
    grays: &[(Rect, f64)],
) -> Result<SweepCalibration> {
    check_maps(maps, plan)?;
    if grays.is_empty() {
        return Err(Error::invalid("calibration", "no gray patches"));
    }
    let brightest = grays.iter().map(|g| g.1).fold(f64::NEG_INFINITY, f64::max);
    let mut table = vec![0.0; maps.len()];
    for (k, m) in maps.iter().enumerate() {
        let mut dimmest = None::<f64>;
        for (rect, refl) in grays {
            rect.check_in(&m.fired)?;
            let count = rect.pixels().filter(|&(x, y)| *m.fired.get(x, y)).count();
            if 2 * count >= rect.area() {
                dimmest = Some(dimmest.map_or(*refl, |d| d.min(*refl)));
            }
        }
        table[k] = dimmest.unwrap_or(brightest);
    }
    let mut running = f64::NEG_INFINITY;
    for k in plan.strictness_order() {
        running = running.max(table[k]);
        table[k] = running;
    }
    Ok(SweepCalibration {
        level_reflectance: table,
    })
}

/// Per-pixel lower bound from the strictest level at which it fired; pixels
/// that never fired get 0.
pub fn reflectance_from_sweep(
    maps: &[FiredMap],
    plan: &SweepPlan,
    calibration: &SweepCalibration,
) -> Result<ImageFloat> {
    check_maps(maps, plan)?;
    if calibration.level_reflectance.len() != maps.len() {
        return Err(Error::invalid("calibration", "table length differs from level count"));
    }
    let (w, h) = maps[0].fired.dims();
    let order = plan.strictness_order();
    Image::from_fn(w, h, |x, y| {
        order
            .iter()
            .rev()
            .find(|&&k| *maps[k].fired.get(x, y))
            .map_or(0.0, |&k| calibration.level_reflectance[k] as f32)
    })
}

/// Event-counting baseline: ON events per pixel divided by the mean count
/// over `panel_region`.
pub fn event_count_reflectance(stream: &EventStream, duration: f64, panel_region: &Rect) -> Result<ImageFloat> {
    if !(duration > 0.0) {
        return Err(Error::invalid("duration", "must be > 0"));
    }
    let (w, h) = (stream.width(), stream.height());
    let mut counts = Image::filled(w, h, 0u32)?;
    for e in stream.events().iter().filter(|e| e.p == Polarity::On) {
        *counts.get_mut(e.x as usize, e.y as usize) += 1;
    }
    panel_region.check_in(&counts)?;
    let panel: f64 =
        panel_region.pixels().map(|(x, y)| *counts.get(x, y) as f64).sum::<f64>() / panel_region.area() as f64;
    if panel == 0.0 {
        return Ok(counts.map(|_| 0.0));
    }
    Ok(counts.map(|&c| (c as f64 / panel) as f32))
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::invalid("spearman", "need two equal-length samples of size >= 2"));
    }
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    };
    let (ra, rb) = (rank(a), rank(b));
    let mean = (a.len() as f64 + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - mean) * (y - mean);
        va += (x - mean).powi(2);
        vb += (y - mean).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Degenerate("constant sample has no rank correlation".into()));
    }
    Ok(cov / (va * vb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Event;

    fn plan(values: Vec<f64>) -> SweepPlan {
        SweepPlan::new(SweepParam::PrBias, values, 10.0, 650.0).unwrap()
    }

    fn maps(levels: &[&[bool]]) -> Vec<FiredMap> {
        levels
            .iter()
            .enumerate()
            .map(|(k, f)| FiredMap {
                level: k,
                value: 0.0,
                fired: Image::from_vec(f.len(), 1, f.to_vec()).unwrap(),
            })
            .collect()
    }

    #[test]
    fn plan_validation() {
        assert!(SweepPlan::new(SweepParam::PrBias, vec![0.1], 10.0, 650.0).is_err());
        assert!(SweepPlan::new(SweepParam::PrBias, vec![0.1, 0.2, 0.15], 10.0, 650.0).is_err());
        let p = plan(vec![0.1, 0.05, 0.01]);
        assert_eq!(p.strictness_order(), vec![0, 1, 2]);
        let d = SweepPlan::new(SweepParam::DiffOnBias, vec![0.3, 0.2, 0.1], 10.0, 650.0).unwrap();
        assert_eq!(d.strictness_order(), vec![2, 1, 0]);
    }

    #[test]
    fn never_and_always_fired() {
        let p = plan(vec![0.1, 0.05, 0.01]);
        let m = maps(&[&[false, true, true], &[false, true, false], &[false, true, false]]);
        let cal = SweepCalibration {
            level_reflectance: vec![0.1, 0.4, 0.8],
        };
        let img = reflectance_from_sweep(&m, &p, &cal).unwrap();
        assert_eq!(img.data(), &[0.0, 0.8, 0.1]);
        assert!(reflectance_from_sweep(&m[..2], &p, &cal).is_err());
    }

    #[test]
    fn calibration_is_monotone() {
        let p = plan(vec![0.1, 0.05, 0.01]);
        // Three one-pixel grays 0.2, 0.5, 0.9.
        let m = maps(&[&[true, true, true], &[true, true, true], &[false, false, true]]);
        let grays: Vec<_> = [0.2, 0.5, 0.9]
            .iter()
            .enumerate()
            .map(|(i, &r)| (Rect::new(i, 0, 1, 1), r))
            .collect();
        let cal = calibrate_sweep(&m, &p, &grays).unwrap();
        assert_eq!(cal.level_reflectance, vec![0.2, 0.2, 0.9]);
    }

    #[test]
    fn counting_normalizes_to_panel() {
        let ev = vec![
            Event::new(1, 0, 0, Polarity::On),
            Event::new(2, 1, 0, Polarity::On),
            Event::new(3, 1, 0, Polarity::On),
            Event::new(4, 1, 0, Polarity::Off),
        ];
        let s = EventStream::new(2, 1, ev).unwrap();
        let img = event_count_reflectance(&s, 1.0, &Rect::new(1, 0, 1, 1)).unwrap();
        assert_eq!(img.data(), &[0.5, 1.0]);
        let empty = EventStream::empty(2, 1);
        let img = event_count_reflectance(&empty, 1.0, &Rect::new(1, 0, 1, 1)).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }
}
