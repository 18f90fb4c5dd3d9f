//! Whole-sensor simulation. Every pixel sees a piecewise-constant irradiance
//! sampled at the start of each step; the follower is advanced with the exact
//! exponential update and thresholds are checked after every step.

use rayon::prelude::*;

use super::{bandwidth_of, follow, pixel_update, retention, step_timestamp_us, Engine, PixelState, SensorConfig};
use crate::error::{Error, Result};
use crate::events::{Event, EventStream, Polarity};
use crate::image::{Image, Mask};
use crate::projector::{ProjectorConfig, ProjectorMode, ProjectorView, ScanSchedule};
use crate::scene::{RigGeometry, SceneModel};

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub events: EventStream,
    pub on_counts: Image<u32>,
    pub off_counts: Image<u32>,
    /// Simulation step in seconds.
    pub dt: f64,
    pub steps: u64,
}

impl SimOutput {
    /// Pixels with at least one ON event.
    pub fn fired(&self) -> Mask {
        self.on_counts.map(|&c| c > 0)
    }

    /// Follower updates performed by the step-by-step engine.
    pub fn pixel_updates(&self) -> u64 {
        self.steps * self.on_counts.len() as u64
    }
}

/// Smallest step index `k` with `k * dt >= t`.
fn first_step_at_or_after(t: f64, dt: f64) -> u64 {
    if t <= 0.0 {
        return 0;
    }
    let mut k = (t / dt).ceil() as u64;
    while k > 0 && (k - 1) as f64 * dt >= t {
        k -= 1;
    }
    while (k as f64) * dt < t {
        k += 1;
    }
    k
}

/// Runs of (length in steps, projector on) covering at least `min_steps`.
fn chopper_runs(projector: &ProjectorConfig, dt: f64, min_steps: u64) -> Vec<(u64, bool)> {
    let on_at = |k: u64| projector.chopper_on(k as f64 * dt);
    let half = 0.5 / projector.chopper_rate;
    let mut runs = Vec::new();
    let mut start = 0u64;
    let mut state = on_at(0);
    let mut m = 1u64;
    while start < min_steps {
        // Next half-period boundary after `start`; confirm the predicate flips there.
        let mut k = first_step_at_or_after(m as f64 * half, dt).max(start + 1).saturating_sub(2).max(start + 1);
        while on_at(k) == state {
            k += 1;
        }
        runs.push((k - start, state));
        start = k;
        state = !state;
        m = (k as f64 * dt / half).round() as u64 + 1;
    }
    runs
}

/// Irradiance pattern shared by the engines.
enum Drive {
    Chopped {
        runs: Vec<(u64, bool)>,
    },
    Scanning {
        schedule: ScanSchedule,
        view: ProjectorView,
        hits: Vec<Vec<u32>>,
    },
}

struct Setup<'a> {
    scene: &'a SceneModel,
    projector: &'a ProjectorConfig,
    sensor: &'a SensorConfig,
    dt: f64,
    steps: u64,
    ambient: f64,
    projector_intensity: f64,
    reflectance: Vec<f64>,
    thresholds: Vec<(f64, f64)>,
    drive: Drive,
}

impl Setup<'_> {
    fn pixel_reflectance(&self, x: usize, y: usize) -> f64 {
        self.reflectance[*self.scene.material_map().get(x, y) as usize]
    }

    fn level(&self, lit: bool, t: f64) -> f64 {
        let irr = if lit {
            self.ambient + self.projector_intensity
        } else {
            self.ambient
        };
        irr * t
    }

    fn log_level(&self, intensity: f64) -> f64 {
        (intensity + self.sensor.epsilon).ln()
    }

    fn retention_of(&self, intensity: f64) -> f64 {
        retention(bandwidth_of(intensity, self.sensor), self.dt)
    }

    /// Follower output at t = 0: the periodic steady state of the chopper
    /// cycle (entered at the start of an on phase), or the ambient level for
    /// a scanning projector.
    fn initial_v(&self, reflectance: f64) -> f64 {
        let lo = self.level(false, reflectance);
        match &self.drive {
            Drive::Scanning { .. } => self.log_level(lo),
            Drive::Chopped { runs } => {
                let hi = self.level(true, reflectance);
                let (l_hi, l_lo) = (self.log_level(hi), self.log_level(lo));
                let n_on = runs[0].0 as f64;
                let n_off = runs.get(1).map_or(0.0, |r| r.0 as f64);
                let a = self.retention_of(hi).powf(n_on);
                let b = self.retention_of(lo).powf(n_off);
                let denom = 1.0 - a * b;
                if denom <= 0.0 {
                    l_hi
                } else {
                    (l_lo * (1.0 - b) + b * (1.0 - a) * l_hi) / denom
                }
            }
        }
    }

    /// Segments `(first_step, length, lit)` seen by camera pixel `index`.
    fn segments(&self, index: usize) -> Vec<(u64, u64, bool)> {
        let mut out = Vec::new();
        match &self.drive {
            Drive::Chopped { runs } => {
                let mut k = 0;
                for &(len, on) in runs {
                    if k >= self.steps {
                        break;
                    }
                    out.push((k, len.min(self.steps - k), on));
                    k += len;
                }
            }
            Drive::Scanning { schedule, hits, .. } => {
                let per_frame = schedule.pixels_per_frame();
                let mut lit: Vec<(u64, u64)> = Vec::new();
                'frames: for frame in 0.. {
                    for &p in &hits[index] {
                        let k = frame * per_frame + p as u64;
                        let s0 = first_step_at_or_after(schedule.time_of_index(k), self.dt);
                        if s0 >= self.steps {
                            break 'frames;
                        }
                        let s1 = first_step_at_or_after(schedule.time_of_index(k + 1), self.dt).min(self.steps);
                        if s1 <= s0 {
                            continue;
                        }
                        match lit.last_mut() {
                            Some(last) if last.1 == s0 => last.1 = s1,
                            _ => lit.push((s0, s1)),
                        }
                    }
                    if hits[index].is_empty() {
                        break;
                    }
                }
                let mut k = 0;
                for (s0, s1) in lit {
                    if s0 > k {
                        out.push((k, s0 - k, false));
                    }
                    out.push((s0, s1 - s0, true));
                    k = s1;
                }
                if k < self.steps {
                    out.push((k, self.steps - k, false));
                }
            }
        }
        out
    }
}

fn setup<'a>(
    scene: &'a SceneModel,
    rig: &RigGeometry,
    projector: &'a ProjectorConfig,
    sensor: &'a SensorConfig,
    duration: f64,
    wavelength_nm: f64,
) -> Result<Setup<'a>> {
    projector.validate()?;
    sensor.validate()?;
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::invalid("simulation", format!("duration {duration} must be > 0")));
    }
    let dims = (sensor.width, sensor.height);
    if scene.dims() != dims {
        return Err(Error::DimensionMismatch {
            expected: dims,
            actual: scene.dims(),
        });
    }
    if (rig.camera.width, rig.camera.height) != dims {
        return Err(Error::DimensionMismatch {
            expected: dims,
            actual: (rig.camera.width, rig.camera.height),
        });
    }
    let projector_intensity = projector.intensity_at(wavelength_nm)?;
    let ambient = scene.ambient_at(wavelength_nm)?;
    let schedule = projector.schedule()?;
    let dt = sensor
        .dt_sim
        .unwrap_or_else(|| schedule.dwell().min(1.0 / (20.0 * projector.chopper_rate)));
    let steps = ((duration / dt).round() as u64).max(1);
    let drive = match projector.mode {
        ProjectorMode::Chopped => {
            let period = (1.0 / (projector.chopper_rate * dt)).ceil() as u64;
            Drive::Chopped {
                runs: chopper_runs(projector, dt, steps.max(2 * period)),
            }
        }
        ProjectorMode::Scanning => {
            if (projector.width, projector.height) != (rig.projector.width, rig.projector.height) {
                return Err(Error::DimensionMismatch {
                    expected: (rig.projector.width, rig.projector.height),
                    actual: (projector.width, projector.height),
                });
            }
            let view = ProjectorView::build(scene, rig)?;
            let hits = view.hits_per_camera_pixel(dims.0 * dims.1);
            Drive::Scanning {
                schedule,
                view,
                hits,
            }
        }
    };
    Ok(Setup {
        scene,
        projector,
        sensor,
        dt,
        steps,
        ambient,
        projector_intensity,
        reflectance: scene.material_reflectances(wavelength_nm)?,
        thresholds: sensor.pixel_thresholds()?,
        drive,
    })
}

struct RowOutput {
    events: Vec<Event>,
    on: Vec<u32>,
    off: Vec<u32>,
}

impl RowOutput {
    fn new(width: usize) -> Self {
        RowOutput {
            events: Vec::new(),
            on: vec![0; width],
            off: vec![0; width],
        }
    }

    fn update(&mut self, state: &mut PixelState, v: f64, step: u64, x: usize, y: usize, s: &Setup) {
        let t = step_timestamp_us(step, s.dt);
        let (on, off, events) = (&mut self.on[x], &mut self.off[x], &mut self.events);
        pixel_update(state, v, t, s.sensor.refractory_us, |p| {
            match p {
                Polarity::On => *on += 1,
                Polarity::Off => *off += 1,
            }
            events.push(Event::new(t, x as u16, y as u16, p));
        });
    }
}

/// Advances one pixel through a constant-input segment in closed form,
/// visiting only the steps at which a threshold is crossed.
fn run_segment(
    out: &mut RowOutput,
    state: &mut PixelState,
    (first, len, lit): (u64, u64, bool),
    reflectance: f64,
    x: usize,
    y: usize,
    s: &Setup,
) {
    let intensity = s.level(lit, reflectance);
    let target = s.log_level(intensity);
    let r = s.retention_of(intensity);
    let v0 = state.v;
    if r == 1.0 || v0 == target || len == 0 {
        return;
    }
    if r == 0.0 {
        out.update(state, target, first, x, y, s);
        return;
    }
    let v_at = |j: u64| target + (v0 - target) * r.powf(j as f64);
    let rising = target > v0;
    let pending = |st: &PixelState, v: f64| if rising { st.on_pending(v) } else { st.off_pending(v) };
    let ln_r = r.ln();
    let mut j = 1u64;
    loop {
        // First j at which the next threshold is crossed.
        let level = if rising { state.on_level() } else { state.off_level() };
        let q = (target - level) / (target - v0);
        if !(q > 0.0) {
            break;
        }
        let est = (q.ln() / ln_r).ceil();
        if !(est <= len as f64 + 2.0) {
            break;
        }
        let mut k = (est.max(1.0) as u64).max(j);
        while k > j && pending(state, v_at(k - 1)) {
            k -= 1;
        }
        while k <= len && !pending(state, v_at(k)) {
            k += 1;
        }
        if k > len {
            break;
        }
        out.update(state, v_at(k), first + k - 1, x, y, s);
        j = k + 1;
        if j > len {
            break;
        }
    }
    state.v = v_at(len);
}

fn simulate_segments(s: &Setup) -> Vec<RowOutput> {
    let (w, h) = (s.sensor.width, s.sensor.height);
    (0..h)
        .into_par_iter()
        .map(|y| {
            let mut out = RowOutput::new(w);
            for x in 0..w {
                let index = y * w + x;
                let refl = s.pixel_reflectance(x, y);
                let (c_on, c_off) = s.thresholds[index];
                let mut state = PixelState::new(s.initial_v(refl), c_on, c_off);
                for seg in s.segments(index) {
                    run_segment(&mut out, &mut state, seg, refl, x, y, s);
                }
            }
            out
        })
        .collect()
}

fn simulate_stepwise(s: &Setup) -> Vec<RowOutput> {
    let (w, h) = (s.sensor.width, s.sensor.height);
    // Which camera pixel (if any) the projector lights during each step.
    const NOBODY: u32 = u32::MAX;
    let lit_at: Vec<u32> = (0..s.steps)
        .map(|k| {
            let t = k as f64 * s.dt;
            match &s.drive {
                Drive::Chopped { .. } => 0,
                Drive::Scanning { schedule, view, .. } => {
                    let (col, row, _) = schedule.scan_position_at(t).expect("t >= start");
                    view.camera_pixel(col, row).map_or(NOBODY, |(x, y)| (y * w + x) as u32)
                }
            }
        })
        .collect();
    let chopper_on: Vec<bool> = (0..s.steps)
        .map(|k| s.projector.chopper_on(k as f64 * s.dt))
        .collect();
    (0..h)
        .into_par_iter()
        .map(|y| {
            let mut out = RowOutput::new(w);
            for x in 0..w {
                let index = y * w + x;
                let refl = s.pixel_reflectance(x, y);
                let (c_on, c_off) = s.thresholds[index];
                let mut state = PixelState::new(s.initial_v(refl), c_on, c_off);
                let mut v = state.v;
                for k in 0..s.steps {
                    let lit = match s.drive {
                        Drive::Chopped { .. } => chopper_on[k as usize],
                        Drive::Scanning { .. } => lit_at[k as usize] == index as u32,
                    };
                    let intensity = s.level(lit, refl);
                    v = follow(v, s.log_level(intensity), s.retention_of(intensity));
                    out.update(&mut state, v, k, x, y, s);
                }
            }
            out
        })
        .collect()
}

/// Simulates the sensor watching `scene` under `projector` light in one band
/// for `duration` seconds.
pub fn simulate(
    scene: &SceneModel,
    rig: &RigGeometry,
    projector: &ProjectorConfig,
    sensor: &SensorConfig,
    duration: f64,
    wavelength_nm: f64,
) -> Result<SimOutput> {
    let s = setup(scene, rig, projector, sensor, duration, wavelength_nm)?;
    let rows = match sensor.engine {
        Engine::Segment => simulate_segments(&s),
        Engine::Stepwise => simulate_stepwise(&s),
    };
    let (w, h) = (sensor.width, sensor.height);
    let mut events = Vec::with_capacity(rows.iter().map(|r| r.events.len()).sum());
    let mut on = Vec::with_capacity(w * h);
    let mut off = Vec::with_capacity(w * h);
    for r in rows {
        events.extend(r.events);
        on.extend(r.on);
        off.extend(r.off);
    }
    events.par_sort_unstable_by_key(Event::key);
    Ok(SimOutput {
        events: EventStream::new(w, h, events)?,
        on_counts: Image::from_vec(w, h, on)?,
        off_counts: Image::from_vec(w, h, off)?,
        dt: s.dt,
        steps: s.steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_predicate() {
        let dt = 0.1;
        for t in [0.0, 0.05, 0.1, 0.3, 0.7000001] {
            let k = first_step_at_or_after(t, dt);
            assert!(k as f64 * dt >= t);
            assert!(k == 0 || ((k - 1) as f64 * dt) < t);
        }
    }

    #[test]
    fn chopper_runs_alternate() {
        let p = ProjectorConfig {
            mode: ProjectorMode::Chopped,
            ..Default::default()
        };
        let dt = 1.0 / 2000.0;
        let runs = chopper_runs(&p, dt, 100);
        assert!(runs.iter().all(|&(len, _)| len == 10));
        assert!(runs[0].1 && !runs[1].1);
        let mut k = 0;
        for (len, on) in runs {
            for j in k..k + len {
                assert_eq!(p.chopper_on(j as f64 * dt), on);
            }
            k += len;
        }
    }
}
