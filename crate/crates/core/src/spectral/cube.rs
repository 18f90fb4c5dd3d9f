//! Per-band reflectance images and their on-disk form: a `manifest.json`
//! listing one PFM file per band.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{region_mean, ImageFloat, Rect};
use crate::pnm::{read_pfm, write_pfm};

pub const REFERENCE_PANEL_REFLECTANCE: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCube {
    bands: Vec<(f64, ImageFloat)>,
    pub metadata: BTreeMap<String, String>,
}

impl SpectralCube {
    pub fn new(bands: Vec<(f64, ImageFloat)>) -> Result<Self> {
        if bands.is_empty() {
            return Err(Error::invalid("spectral cube", "no bands"));
        }
        for w in bands.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::invalid("spectral cube", "wavelengths must be strictly increasing"));
            }
            w[0].1.ensure_same_dims(&w[1].1)?;
        }
        for (l, img) in &bands {
            if img.data().iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::invalid("spectral cube", format!("band {l} nm has negative or non-finite values")));
            }
        }
        Ok(SpectralCube {
            bands,
            metadata: BTreeMap::new(),
        })
    }

    pub fn bands(&self) -> &[(f64, ImageFloat)] {
        &self.bands
    }

    pub fn wavelengths(&self) -> Vec<f64> {
        self.bands.iter().map(|b| b.0).collect()
    }

    pub fn band(&self, wavelength_nm: f64) -> Option<&ImageFloat> {
        self.bands.iter().find(|b| b.0 == wavelength_nm).map(|b| &b.1)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.bands[0].1.dims()
    }
}

/// Divides each band by its panel mean over `panel_reflectance`.
pub fn normalize_to_reference(cube: &SpectralCube, panel: &Rect, panel_reflectance: f64) -> Result<SpectralCube> {
    let mut bands = Vec::with_capacity(cube.bands.len());
    for (l, img) in &cube.bands {
        let mean = region_mean(img, panel)?;
        if mean == 0.0 {
            return Err(Error::Degenerate(format!("reference panel is dark at {l} nm")));
        }
        let scale = panel_reflectance / mean;
        bands.push((*l, img.map(|&v| (v as f64 * scale) as f32)));
    }
    let mut out = SpectralCube::new(bands)?;
    out.metadata = cube.metadata.clone();
    out.metadata
        .insert("normalized_to_panel".into(), panel_reflectance.to_string());
    Ok(out)
}

/// Mean value of every band over `region`.
pub fn spectral_signature(cube: &SpectralCube, region: &Rect) -> Result<Vec<(f64, f64)>> {
    cube.bands
        .iter()
        .map(|(l, img)| Ok((*l, region_mean(img, region)?)))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    schema: u32,
    bands: Vec<ManifestBand>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestBand {
    wavelength_nm: f64,
    file: String,
}

pub fn band_file_name(wavelength_nm: f64) -> String {
    format!("band_{}nm.pfm", crate::cloud::format_sig9(wavelength_nm))
}

/// Writes `manifest.json` and one PFM per band into `dir`.
pub fn write_cube(cube: &SpectralCube, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut bands = Vec::new();
    for (l, img) in &cube.bands {
        let file = band_file_name(*l);
        write_pfm(img, dir.join(&file))?;
        bands.push(ManifestBand {
            wavelength_nm: *l,
            file,
        });
    }
    let manifest = Manifest {
        schema: 1,
        bands,
        metadata: cube.metadata.clone(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn read_cube(dir: impl AsRef<Path>) -> Result<SpectralCube> {
    let dir = dir.as_ref();
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    if manifest.schema != 1 {
        return Err(Error::invalid("cube manifest", format!("unsupported schema {}", manifest.schema)));
    }
    let bands = manifest
        .bands
        .iter()
        .map(|b| Ok((b.wavelength_nm, read_pfm(dir.join(&b.file))?)))
        .collect::<Result<Vec<_>>>()?;
    let mut cube = SpectralCube::new(bands)?;
    cube.metadata = manifest.metadata;
    Ok(cube)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(values: &[f32]) -> SpectralCube {
        SpectralCube::new(
            values
                .iter()
                .enumerate()
                .map(|(i, &v)| (650.0 + 40.0 * i as f64, ImageFloat::filled(4, 2, v).unwrap()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn panel_at_reference_is_unchanged() {
        let c = cube(&[0.99, 0.99]);
        let n = normalize_to_reference(&c, &Rect::new(0, 0, 2, 2), 0.99).unwrap();
        assert_eq!(n.bands(), c.bands());
    }

    #[test]
    fn signature_of_constant_bands() {
        let c = cube(&[0.25, 0.5, 0.75]);
        let s = spectral_signature(&c, &Rect::new(1, 0, 2, 2)).unwrap();
        assert_eq!(s, vec![(650.0, 0.25), (690.0, 0.5), (730.0, 0.75)]);
        assert!(spectral_signature(&c, &Rect::new(0, 0, 0, 1)).is_err());
    }

    #[test]
    fn dark_panel_rejected() {
        let c = cube(&[0.0]);
        assert!(normalize_to_reference(&c, &Rect::new(0, 0, 1, 1), 0.99).is_err());
    }

    #[test]
    fn disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = cube(&[0.1, 0.2, 0.3]);
        c.metadata.insert("source".into(), "test".into());
        write_cube(&c, dir.path()).unwrap();
        assert_eq!(read_cube(dir.path()).unwrap(), c);
    }
}
