//! Synthetic ground truth: a camera-aligned heightfield with per-pixel
//! materials, each carrying a sampled spectral reflectance curve, plus the
//! pinhole models of the camera and projector.

mod builders;
mod file;

pub use builders::{
    make_chart_scene, make_forest_scene, make_materials_scene, make_plane_scene, make_step_scene,
    make_wedge_scene, ChartLayout, ChartPatch, ChartScene, ForestParams, MaterialsScene,
    WedgeScene, CHART_BLOCKS_SRGB, CHART_GRAYS_SRGB,
};
pub use file::{load_scene, save_scene, SceneFile};

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::image::{DepthMap, Image, ImageFloat, ImageRgb, LabelMap};
use crate::spectral::color::linear_to_srgb;

/// How far outside the sampled range a curve may be queried, in nm.
pub const EXTRAPOLATION_MARGIN_NM: f64 = 50.0;

/// A non-negative curve sampled at strictly increasing wavelengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct Spectrum {
    samples: Vec<(f64, f64)>,
}

impl Spectrum {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::invalid("spectrum", "at least two samples required"));
        }
        for w in samples.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::invalid(
                    "spectrum",
                    format!("wavelengths not strictly increasing at {} nm", w[1].0),
                ));
            }
        }
        if samples
            .iter()
            .any(|&(l, v)| !l.is_finite() || !v.is_finite() || v < 0.0)
        {
            return Err(Error::invalid("spectrum", "samples must be finite and non-negative"));
        }
        Ok(Spectrum { samples })
    }

    /// Constant value over a broad band.
    pub fn flat(value: f64) -> Result<Self> {
        Self::new(vec![(300.0, value), (1100.0, value)])
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    /// Linear interpolation between knots, constant beyond the ends, and an
    /// error more than [`EXTRAPOLATION_MARGIN_NM`] outside the sampled range.
    pub fn sample(&self, wavelength_nm: f64) -> Result<f64> {
        let first = self.samples[0];
        let last = *self.samples.last().expect("non-empty");
        if !(wavelength_nm >= first.0 - EXTRAPOLATION_MARGIN_NM
            && wavelength_nm <= last.0 + EXTRAPOLATION_MARGIN_NM)
        {
            return Err(Error::invalid(
                "wavelength",
                format!(
                    "{wavelength_nm} nm outside [{}, {}] nm ± {EXTRAPOLATION_MARGIN_NM}",
                    first.0, last.0
                ),
            ));
        }
        if wavelength_nm <= first.0 {
            return Ok(first.1);
        }
        if wavelength_nm >= last.0 {
            return Ok(last.1);
        }
        let i = self.samples.partition_point(|&(l, _)| l <= wavelength_nm);
        let (l0, v0) = self.samples[i - 1];
        let (l1, v1) = self.samples[i];
        if wavelength_nm == l0 {
            return Ok(v0);
        }
        let t = (wavelength_nm - l0) / (l1 - l0);
        Ok(v0 + t * (v1 - v0))
    }

    fn scaled(&self, s: f64) -> Spectrum {
        Spectrum {
            samples: self.samples.iter().map(|&(l, v)| (l, v * s)).collect(),
        }
    }
}

impl TryFrom<Vec<(f64, f64)>> for Spectrum {
    type Error = Error;
    fn try_from(v: Vec<(f64, f64)>) -> Result<Self> {
        Spectrum::new(v)
    }
}

impl From<Spectrum> for Vec<(f64, f64)> {
    fn from(s: Spectrum) -> Self {
        s.samples
    }
}

/// A spectrum bounded to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Spectrum", into = "Spectrum")]
pub struct SpectralReflectance(Spectrum);

impl SpectralReflectance {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self> {
        Spectrum::new(samples)?.try_into()
    }

    pub fn flat(value: f64) -> Result<Self> {
        Spectrum::flat(value)?.try_into()
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        self.0.samples()
    }

    pub fn sample(&self, wavelength_nm: f64) -> Result<f64> {
        self.0.sample(wavelength_nm)
    }

    /// Multiplies every sample by `s`, which must keep values in `[0, 1]`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        self.0.scaled(s).try_into()
    }
}

impl TryFrom<Spectrum> for SpectralReflectance {
    type Error = Error;
    fn try_from(s: Spectrum) -> Result<Self> {
        if s.samples.iter().any(|&(_, v)| v > 1.0) {
            return Err(Error::invalid("reflectance", "values must lie in [0, 1]"));
        }
        Ok(SpectralReflectance(s))
    }
}

impl From<SpectralReflectance> for Spectrum {
    fn from(r: SpectralReflectance) -> Self {
        r.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub name: String,
    pub reflectance: SpectralReflectance,
}

impl Material {
    pub fn new(name: impl Into<String>, reflectance: SpectralReflectance) -> Self {
        Material {
            name: name.into(),
            reflectance,
        }
    }

    pub fn flat(name: impl Into<String>, value: f64) -> Result<Self> {
        Ok(Self::new(name, SpectralReflectance::flat(value)?))
    }
}

pub fn sample_reflectance(material: &Material, wavelength_nm: f64) -> Result<f64> {
    material.reflectance.sample(wavelength_nm)
}

/// Ground-truth world seen from the camera.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneModel {
    depth: DepthMap,
    material_map: Image<u16>,
    materials: Vec<Material>,
    ambient: Spectrum,
    labels: Option<LabelMap>,
}

impl SceneModel {
    pub fn new(
        depth: DepthMap,
        material_map: Image<u16>,
        materials: Vec<Material>,
        ambient: Spectrum,
    ) -> Result<Self> {
        if depth.dims() != material_map.dims() {
            return Err(Error::DimensionMismatch {
                expected: depth.dims(),
                actual: material_map.dims(),
            });
        }
        if let Some(&bad) = material_map
            .data()
            .iter()
            .find(|&&m| m as usize >= materials.len())
        {
            return Err(Error::invalid(
                "scene",
                format!("material index {bad} but only {} materials", materials.len()),
            ));
        }
        for (i, m) in materials.iter().enumerate() {
            if materials[..i].iter().any(|o| o.name == m.name) {
                return Err(Error::invalid(
                    "scene",
                    format!("duplicate material name '{}'", m.name),
                ));
            }
        }
        Ok(SceneModel {
            depth,
            material_map,
            materials,
            ambient,
            labels: None,
        })
    }

    pub fn with_labels(mut self, labels: LabelMap) -> Result<Self> {
        if labels.dims() != self.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: labels.dims(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.depth.width()
    }

    pub fn height(&self) -> usize {
        self.depth.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.depth.dims()
    }

    pub fn depth(&self) -> &DepthMap {
        &self.depth
    }

    pub fn material_map(&self) -> &Image<u16> {
        &self.material_map
    }

    pub fn materials(&self) -> &[Material] {
        &self.materials
    }

    pub fn material_index(&self, name: &str) -> Option<usize> {
        self.materials.iter().position(|m| m.name == name)
    }

    pub fn ambient(&self) -> &Spectrum {
        &self.ambient
    }

    pub fn ambient_at(&self, wavelength_nm: f64) -> Result<f64> {
        self.ambient.sample(wavelength_nm)
    }

    pub fn labels(&self) -> Option<&LabelMap> {
        self.labels.as_ref()
    }

    /// Same scene with every reflectance multiplied by `s`.
    pub fn with_scaled_reflectance(&self, s: f64) -> Result<Self> {
        let materials = self
            .materials
            .iter()
            .map(|m| Ok(Material::new(m.name.clone(), m.reflectance.scaled(s)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(SceneModel {
            materials,
            ..self.clone()
        })
    }

    pub fn with_ambient(mut self, ambient: Spectrum) -> Self {
        self.ambient = ambient;
        self
    }

    /// Reflectance of each material at `wavelength_nm`, indexed like `materials()`.
    pub fn material_reflectances(&self, wavelength_nm: f64) -> Result<Vec<f64>> {
        self.materials
            .iter()
            .map(|m| m.reflectance.sample(wavelength_nm))
            .collect()
    }
}

/// Ground-truth reflectance T(λ) per pixel.
pub fn reflectance_image(scene: &SceneModel, wavelength_nm: f64) -> Result<ImageFloat> {
    let table = scene.material_reflectances(wavelength_nm)?;
    Ok(scene.material_map.map(|&m| table[m as usize] as f32))
}

/// Ground-truth 8-bit sRGB appearance: reflectance at the red, green and
/// blue projector bands, sRGB-encoded.
pub fn srgb_image(scene: &SceneModel) -> Result<ImageRgb> {
    let bands = crate::projector::RGB_WAVELENGTHS_NM
        .iter()
        .map(|&l| reflectance_image(scene, l))
        .collect::<Result<Vec<_>>>()?;
    let encode = |v: f32| (linear_to_srgb((v as f64).clamp(0.0, 1.0)) * 255.0).round() as u8;
    let (w, h) = scene.dims();
    Image::from_fn(w, h, |x, y| std::array::from_fn(|c| encode(*bands[c].get(x, y))))
}

/// Pinhole intrinsics with square pixels and pixel centers at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinholeModel {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl PinholeModel {
    pub fn new(focal: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let p = PinholeModel {
            focal,
            cx,
            cy,
            width,
            height,
        };
        p.validate()?;
        Ok(p)
    }

    /// Principal point at `(width/2, height/2)`.
    pub fn centered(focal: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(focal, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0 && self.focal.is_finite()) {
            return Err(Error::invalid("pinhole", format!("focal {} must be > 0", self.focal)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("pinhole", "resolution must be positive"));
        }
        if !(self.cx >= 0.0
            && self.cx <= self.width as f64
            && self.cy >= 0.0
            && self.cy <= self.height as f64)
        {
            return Err(Error::invalid(
                "pinhole",
                format!("principal point ({}, {}) outside image", self.cx, self.cy),
            ));
        }
        Ok(())
    }

    pub fn project(&self, p: &Point3<f64>) -> (f64, f64) {
        (
            self.cx + self.focal * p.x / p.z,
            self.cy + self.focal * p.y / p.z,
        )
    }

    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Point3<f64> {
        Point3::new((u - self.cx) * z / self.focal, (v - self.cy) * z / self.focal, z)
    }
}

/// Camera + projector pair. In a rectified rig the projector sits `baseline`
/// meters along the camera's +x axis with identical orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigGeometry {
    pub camera: PinholeModel,
    pub projector: PinholeModel,
    pub baseline: f64,
    pub rectified: bool,
}

impl RigGeometry {
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        self.projector.validate()?;
        if !(self.baseline > 0.0 && self.baseline.is_finite()) {
            return Err(Error::invalid(
                "rig",
                format!("baseline {} must be > 0", self.baseline),
            ));
        }
        Ok(())
    }

    /// Projector focal length divided by camera focal length.
    pub fn focal_ratio(&self) -> f64 {
        self.projector.focal / self.camera.focal
    }
}

impl Default for RigGeometry {
    fn default() -> Self {
        RigGeometry {
            camera: PinholeModel::centered(500.0, 640, 480).expect("valid default camera"),
            projector: PinholeModel::centered(1000.0, 1920, 720).expect("valid default projector"),
            baseline: 0.1,
            rectified: true,
        }
    }
}

/// Back-projects every valid depth pixel.
pub fn depth_to_pointcloud(depth: &DepthMap, camera: &PinholeModel) -> PointCloud {
    let mut points = Vec::with_capacity(depth.valid_count());
    for y in 0..depth.height() {
        for x in 0..depth.width() {
            if let Some(z) = depth.at(x, y) {
                points.push(camera.unproject(x as f64, y as f64, z as f64));
            }
        }
    }
    PointCloud::new(points).expect("valid depth is finite")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_knot() -> Material {
        Material::new(
            "m",
            SpectralReflectance::new(vec![(650.0, 0.2), (750.0, 0.4)]).unwrap(),
        )
    }

    #[test]
    fn interpolation_rules() {
        let m = two_knot();
        assert!((sample_reflectance(&m, 700.0).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(sample_reflectance(&m, 650.0).unwrap(), 0.2);
        assert_eq!(sample_reflectance(&m, 640.0).unwrap(), 0.2);
        assert_eq!(sample_reflectance(&m, 800.0).unwrap(), 0.4);
        assert!(sample_reflectance(&m, 599.0).is_err());
        assert!(sample_reflectance(&m, 801.0).is_err());
    }

    #[test]
    fn curve_validation() {
        assert!(SpectralReflectance::new(vec![(650.0, 0.2)]).is_err());
        assert!(SpectralReflectance::new(vec![(650.0, 0.2), (650.0, 0.3)]).is_err());
        assert!(SpectralReflectance::new(vec![(650.0, 0.2), (700.0, 1.3)]).is_err());
        assert!(SpectralReflectance::new(vec![(650.0, -0.1), (700.0, 0.3)]).is_err());
        assert!(Spectrum::new(vec![(650.0, 2.0), (700.0, 3.0)]).is_ok());
    }

    #[test]
    fn pinhole_closed_form() {
        let cam = PinholeModel::new(500.0, 320.0, 240.0, 640, 480).unwrap();
        let p = cam.unproject(320.0, 240.0, 2.0);
        assert_eq!((p.x, p.y, p.z), (0.0, 0.0, 2.0));
        let p = cam.unproject(370.0, 240.0, 1.0);
        assert!((p.x - 0.1).abs() < 1e-12);
        assert!(PinholeModel::new(0.0, 1.0, 1.0, 4, 4).is_err());
        assert!(PinholeModel::new(1.0, 5.0, 1.0, 4, 4).is_err());
    }

    #[test]
    fn rig_validation() {
        let mut rig = RigGeometry::default();
        assert!(rig.validate().is_ok());
        assert_eq!(rig.focal_ratio(), 2.0);
        rig.baseline = -0.1;
        assert!(rig.validate().is_err());
    }

    #[test]
    fn single_material_constant_image() {
        let depth = DepthMap::from_values(Image::filled(4, 3, 1.0).unwrap());
        let scene = SceneModel::new(
            depth,
            Image::filled(4, 3, 0).unwrap(),
            vec![Material::flat("grey", 0.5).unwrap()],
            Spectrum::flat(0.1).unwrap(),
        )
        .unwrap();
        let img = reflectance_image(&scene, 700.0).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn split_scene_halves() {
        let depth = DepthMap::from_values(Image::filled(4, 2, 1.0).unwrap());
        let mats = Image::from_fn(4, 2, |x, _| u16::from(x >= 2)).unwrap();
        let scene = SceneModel::new(
            depth,
            mats,
            vec![
                Material::flat("a", 0.2).unwrap(),
                Material::flat("b", 0.7).unwrap(),
            ],
            Spectrum::flat(0.1).unwrap(),
        )
        .unwrap();
        let img = reflectance_image(&scene, 500.0).unwrap();
        for y in 0..2 {
            for x in 0..4 {
                let want = if x < 2 { 0.2f32 } else { 0.7 };
                assert_eq!(*img.get(x, y), want);
            }
        }
    }

    #[test]
    fn scene_rejects_bad_indices_and_names() {
        let depth = DepthMap::from_values(Image::filled(2, 1, 1.0).unwrap());
        let bad = SceneModel::new(
            depth.clone(),
            Image::from_vec(2, 1, vec![0, 1]).unwrap(),
            vec![Material::flat("a", 0.2).unwrap()],
            Spectrum::flat(0.1).unwrap(),
        );
        assert!(bad.is_err());
        let dup = SceneModel::new(
            depth,
            Image::filled(2, 1, 0).unwrap(),
            vec![Material::flat("a", 0.2).unwrap(), Material::flat("a", 0.3).unwrap()],
            Spectrum::flat(0.1).unwrap(),
        );
        assert!(dup.is_err());
    }
}
