//! Pipeline runner for the event-spectra toolkit: config parsing, the
//! depth / rgb / spectral / segment pipelines, figures and reports.

pub mod config;
pub mod pipeline;
pub mod render;
pub mod report;

pub use config::{ConfigError, Pipeline, RunConfig, CONFIG_SCHEMA};
pub use pipeline::{run, run_with_threads, RunError, RunSummary};

/// Environment variable capping the worker-thread count.
pub const THREADS_ENV: &str = "EVENT_SPECTRA_THREADS";

/// Parses a thread cap; `None` when unset.
pub fn threads_from_env(value: Option<&str>) -> Result<Option<usize>, ConfigError> {
    match value {
        None => Ok(None),
        Some(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(ConfigError::new(THREADS_ENV, format!("expected a positive integer, got {v:?}"))),
        },
    }
}

/// Text printed by `event-spectra formats`.
pub const FORMATS: &str = "\
events.csv        `# width=W height=H`, header `t_us,x,y,p`, then one line per event:
                  t_us in integer microseconds, p in {-1,1}; sorted by (t_us, y, x, p)
*.pgm             binary P5, 8-bit gray (masks: 0 invalid, 255 valid; labels: class id)
*.ppm             binary P6, 8-bit RGB
*.pfm             Pf grayscale float32, bottom-to-top rows, scale -1 (little endian)
cloud.xyz         one `x y z` line per point, meters, camera frame, 9 significant digits
bands/            manifest.json listing wavelength and file per band, one PFM per band
model_rgbd.json   Gaussian classifier: subset, per-class means, variances, priors
metrics.csv       `scene,method,metric,value`, one row per number
report.md         markdown tables pivoted from metrics.csv
config.json       the effective configuration, including the seed used
";
