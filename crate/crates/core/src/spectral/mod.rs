//! Reflectance recovery from bias sweeps, the event-counting baseline,
//! spectral cubes and color correction.

pub mod color;
mod cube;
mod sweep;

pub use cube::{
    band_file_name, normalize_to_reference, read_cube, spectral_signature, write_cube, SpectralCube,
    REFERENCE_PANEL_REFLECTANCE,
};
pub use sweep::{
    calibrate_sweep, event_count_reflectance, reflectance_from_sweep, run_sweep, spearman, FiredMap,
    SweepCalibration, SweepParam, SweepPlan,
};
