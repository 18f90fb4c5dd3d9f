//! Event-camera pixel model: log photocurrent, an intensity-dependent
//! first-order source follower, and ON/OFF contrast thresholds.

mod engine;

pub use engine::{simulate, SimOutput};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::Polarity;

/// Slack on threshold comparisons so that a change of exactly one threshold fires.
pub const THRESHOLD_TOLERANCE: f64 = 1e-9;

/// Bandwidth slope that brings a 0.99 reflector under full illumination
/// (I_a + I_p = 1.25) to 10 kHz at unit PR bias.
pub const DEFAULT_KAPPA: f64 = (1.0e4 - 50.0) / (0.99 * 1.25);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    /// Closed-form stepping over piecewise-constant input segments.
    #[default]
    Segment,
    /// One follower update per pixel per simulation step.
    Stepwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Standard deviation of the per-pixel threshold mismatch (log units).
    pub threshold_sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    pub width: usize,
    pub height: usize,
    pub c_on: f64,
    pub c_off: f64,
    pub pr_bias: f64,
    pub diff_on_bias: f64,
    pub f_dark: f64,
    pub kappa: f64,
    pub refractory_us: u64,
    pub epsilon: f64,
    pub noise: NoiseConfig,
    /// Simulation step in seconds; `None` picks min(dwell, 1/(20 chopper_rate)).
    pub dt_sim: Option<f64>,
    pub engine: Engine,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            width: 640,
            height: 480,
            c_on: 0.3,
            c_off: 0.3,
            pr_bias: 1.0,
            diff_on_bias: 0.0,
            f_dark: 50.0,
            kappa: DEFAULT_KAPPA,
            refractory_us: 0,
            epsilon: 1e-6,
            noise: NoiseConfig::default(),
            dt_sim: None,
            engine: Engine::Segment,
        }
    }
}

impl SensorConfig {
    /// A sensor whose follower tracks any chopper or scan instantly and whose
    /// dark floor is negligible.
    pub fn ideal() -> Self {
        SensorConfig {
            f_dark: 1e6,
            kappa: 0.0,
            epsilon: 1e-12,
            ..Default::default()
        }
    }

    pub fn with_resolution(mut self, width: usize, height: usize) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    pub fn c_on_eff(&self) -> f64 {
        self.c_on + self.diff_on_bias
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if self.width == 0 || self.height == 0 || self.width > u16::MAX as usize || self.height > u16::MAX as usize {
            return Err(Error::invalid("sensor", "resolution must be within 1..=65535"));
        }
        if !positive(self.c_on) || !positive(self.c_off) {
            return Err(Error::invalid("sensor", "c_on and c_off must be > 0"));
        }
        if !positive(self.c_on_eff()) {
            return Err(Error::invalid("sensor", "c_on + diff_on_bias must be > 0"));
        }
        if !(self.pr_bias >= 0.0 && self.pr_bias.is_finite()) {
            return Err(Error::invalid("sensor", "pr_bias must be >= 0"));
        }
        if !positive(self.f_dark) {
            return Err(Error::invalid("sensor", "f_dark must be > 0"));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::invalid("sensor", "kappa must be >= 0"));
        }
        if !positive(self.epsilon) {
            return Err(Error::invalid("sensor", "epsilon must be > 0"));
        }
        if !(self.noise.threshold_sigma >= 0.0 && self.noise.threshold_sigma.is_finite()) {
            return Err(Error::invalid("sensor", "noise.threshold_sigma must be >= 0"));
        }
        if let Some(dt) = self.dt_sim {
            if !positive(dt) {
                return Err(Error::invalid("sensor", "dt_sim must be > 0"));
            }
        }
        Ok(())
    }

    /// Per-pixel (C_on, C_off) after the seeded mismatch draw, row-major.
    pub fn pixel_thresholds(&self) -> Result<Vec<(f64, f64)>> {
        let n = self.width * self.height;
        let (c_on, c_off) = (self.c_on_eff(), self.c_off);
        let sigma = self.noise.threshold_sigma;
        if sigma == 0.0 {
            return Ok(vec![(c_on, c_off); n]);
        }
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid("sensor", e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.noise.seed);
        let floor_on = 0.01 * c_on;
        let floor_off = 0.01 * c_off;
        Ok((0..n)
            .map(|_| {
                let on = (c_on + normal.sample(&mut rng)).max(floor_on);
                let off = (c_off + normal.sample(&mut rng)).max(floor_off);
                (on, off)
            })
            .collect())
    }
}

/// L = ln(I + epsilon).
pub fn log_photocurrent(intensity: f64, epsilon: f64) -> Result<f64> {
    if !(intensity >= 0.0) {
        return Err(Error::invalid("intensity", format!("{intensity} must be >= 0")));
    }
    Ok((intensity + epsilon).ln())
}

/// f_c = pr_bias * (f_dark + kappa * I), in Hz.
pub fn bandwidth_of(intensity: f64, config: &SensorConfig) -> f64 {
    config.pr_bias * (config.f_dark + config.kappa * intensity)
}

/// Per-step retention factor r = exp(-2π f_c dt) of the follower.
#[inline]
pub fn retention(f_c: f64, dt: f64) -> f64 {
    (-2.0 * std::f64::consts::PI * f_c * dt).exp()
}

#[inline]
pub(crate) fn follow(v: f64, target: f64, r: f64) -> f64 {
    if r == 1.0 {
        v
    } else if r == 0.0 {
        target
    } else {
        target + (v - target) * r
    }
}

/// One exact update of the first-order low-pass toward `target` over `dt`.
pub fn follower_step(v: f64, target: f64, dt: f64, f_c: f64) -> f64 {
    follow(v, target, retention(f_c, dt))
}

/// Per-pixel simulation state. The reference level is kept as an anchor plus
/// signed threshold counts so that crossing decisions do not accumulate
/// rounding drift.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelState {
    pub v: f64,
    anchor: f64,
    n_on: i64,
    n_off: i64,
    pub t_last_event: Option<u64>,
    pub c_on: f64,
    pub c_off: f64,
}

impl PixelState {
    pub fn new(v: f64, c_on: f64, c_off: f64) -> Self {
        PixelState {
            v,
            anchor: v,
            n_on: 0,
            n_off: 0,
            t_last_event: None,
            c_on,
            c_off,
        }
    }

    pub fn v_ref(&self) -> f64 {
        self.anchor + self.n_on as f64 * self.c_on - self.n_off as f64 * self.c_off
    }

    /// Whether the follower output `v` would trigger an ON event.
    #[inline]
    pub(crate) fn on_pending(&self, v: f64) -> bool {
        v - self.v_ref() >= self.c_on - THRESHOLD_TOLERANCE
    }

    #[inline]
    pub(crate) fn off_pending(&self, v: f64) -> bool {
        self.v_ref() - v >= self.c_off - THRESHOLD_TOLERANCE
    }

    /// Level that `v` must reach (from below) to fire the next ON event.
    pub(crate) fn on_level(&self) -> f64 {
        self.v_ref() + self.c_on - THRESHOLD_TOLERANCE
    }

    pub(crate) fn off_level(&self) -> f64 {
        self.v_ref() - self.c_off + THRESHOLD_TOLERANCE
    }
}

/// Sets the follower output to `v` at time `t_us` and emits every event it
/// triggers. Reference levels always advance; emission is suppressed within
/// `refractory_us` of the last emitted event.
pub fn pixel_update(
    state: &mut PixelState,
    v: f64,
    t_us: u64,
    refractory_us: u64,
    mut emit: impl FnMut(Polarity),
) {
    state.v = v;
    let mut fire = |state: &mut PixelState, p: Polarity| {
        let blocked = refractory_us > 0
            && state
                .t_last_event
                .is_some_and(|last| t_us.saturating_sub(last) < refractory_us);
        if !blocked {
            state.t_last_event = Some(t_us);
            emit(p);
        }
    };
    while state.on_pending(v) {
        state.n_on += 1;
        fire(state, Polarity::On);
    }
    while state.off_pending(v) {
        state.n_off += 1;
        fire(state, Polarity::Off);
    }
}

/// Timestamp of simulation step `k` (its midpoint), rounded half-to-even.
pub fn step_timestamp_us(k: u64, dt: f64) -> u64 {
    ((k as f64 + 0.5) * (dt * 1e6)).round_ties_even() as u64
}
