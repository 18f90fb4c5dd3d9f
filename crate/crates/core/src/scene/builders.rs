use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Material, SceneModel, SpectralReflectance, Spectrum};
use crate::error::{Error, Result};
use crate::image::{DepthMap, Image, LabelMap, Rect, CLASS_BACKGROUND, CLASS_BRANCHES, CLASS_LEAVES};
use crate::spectral::color::srgb_to_linear;

/// Projector band centers for red, green and blue.
const RGB_BANDS_NM: [f64; 3] = [638.0, 520.0, 450.0];

pub(crate) const DEFAULT_AMBIENT: f64 = 0.25;

fn default_ambient() -> Spectrum {
    Spectrum::flat(DEFAULT_AMBIENT).expect("valid ambient")
}

/// A material whose reflectance at the red/green/blue band centers equals
/// the given linear values.
fn rgb_material(name: impl Into<String>, rgb: [f64; 3]) -> Result<Material> {
    let [r, g, b] = rgb;
    let curve = SpectralReflectance::new(vec![
        (400.0, b),
        (RGB_BANDS_NM[2], b),
        (RGB_BANDS_NM[1], g),
        (RGB_BANDS_NM[0], r),
        (900.0, r),
    ])?;
    Ok(Material::new(name, curve))
}

fn srgb_material(name: impl Into<String>, srgb: [u8; 3]) -> Result<Material> {
    rgb_material(name, srgb.map(|c| srgb_to_linear(c as f64 / 255.0)))
}

fn plane_depth(width: usize, height: usize, depth: f64) -> Result<DepthMap> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(Error::invalid("scene", format!("plane depth {depth} must be > 0")));
    }
    DepthMap::new(
        Image::filled(width, height, depth as f32)?,
        Image::filled(width, height, true)?,
    )
}

/// Fronto-parallel plane of uniform 0.8 reflectance.
pub fn make_plane_scene(width: usize, height: usize, depth: f64) -> Result<SceneModel> {
    SceneModel::new(
        plane_depth(width, height, depth)?,
        Image::filled(width, height, 0)?,
        vec![Material::flat("matte_white", 0.8)?],
        default_ambient(),
    )
}

/// Two fronto-parallel planes: `near` for columns `< edge_col`, `far` elsewhere.
pub fn make_step_scene(
    width: usize,
    height: usize,
    near: f64,
    far: f64,
    edge_col: usize,
) -> Result<SceneModel> {
    if !(near > 0.0 && far > 0.0) || edge_col == 0 || edge_col >= width {
        return Err(Error::invalid("scene", "step scene needs positive depths and an interior edge"));
    }
    let depth = Image::from_fn(width, height, |x, _| if x < edge_col { near as f32 } else { far as f32 })?;
    SceneModel::new(
        DepthMap::from_values(depth),
        Image::from_fn(width, height, |x, _| u16::from(x >= edge_col))?,
        vec![
            Material::flat("near_plane", 0.8)?,
            Material::flat("far_plane", 0.8)?,
        ],
        default_ambient(),
    )
}

/// A gray wedge: vertical stripes of flat reflectance, one per entry.
#[derive(Debug, Clone)]
pub struct WedgeScene {
    pub scene: SceneModel,
    /// Stripe interior (1 px inset) and its true reflectance.
    pub steps: Vec<(Rect, f64)>,
}

pub fn make_wedge_scene(width: usize, height: usize, reflectances: &[f64]) -> Result<WedgeScene> {
    let n = reflectances.len();
    if n == 0 || width < n {
        return Err(Error::invalid("scene", "wedge needs 1..=width steps"));
    }
    let materials = reflectances
        .iter()
        .enumerate()
        .map(|(i, &r)| Material::flat(format!("gray_{i:02}"), r))
        .collect::<Result<Vec<_>>>()?;
    let step_of = |x: usize| (x * n / width) as u16;
    let material_map = Image::from_fn(width, height, |x, _| step_of(x))?;
    let mut steps = Vec::with_capacity(n);
    for (i, &r) in reflectances.iter().enumerate() {
        let x0 = (0..width).find(|&x| step_of(x) as usize == i).expect("non-empty stripe");
        let x1 = (0..width).rfind(|&x| step_of(x) as usize == i).expect("non-empty stripe");
        let stripe = Rect::new(x0, 0, x1 - x0 + 1, height);
        let inner = if stripe.w > 2 && height > 2 { stripe.inset(1) } else { stripe };
        steps.push((inner, r));
    }
    let scene = SceneModel::new(
        plane_depth(width, height, 1.0)?,
        material_map,
        materials,
        default_ambient(),
    )?;
    Ok(WedgeScene { scene, steps })
}

/// 8-bit sRGB targets of the sixteen chromatic chart blocks.
pub const CHART_BLOCKS_SRGB: [[u8; 3]; 16] = [
    [115, 82, 68],
    [194, 150, 130],
    [98, 122, 157],
    [87, 108, 67],
    [133, 128, 177],
    [103, 189, 170],
    [214, 126, 44],
    [80, 91, 166],
    [193, 90, 99],
    [94, 60, 108],
    [157, 188, 64],
    [224, 163, 46],
    [56, 61, 150],
    [70, 148, 73],
    [175, 54, 60],
    [231, 199, 31],
];

/// Neutral strip, white to black.
pub const CHART_GRAYS_SRGB: [u8; 6] = [243, 200, 160, 122, 85, 52];

const CHART_SURROUND_SRGB: [u8; 3] = [40, 40, 40];

#[derive(Debug, Clone, PartialEq)]
pub struct ChartPatch {
    pub rect: Rect,
    pub srgb: [u8; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartLayout {
    /// The sixteen chromatic blocks in row-major order.
    pub blocks: Vec<ChartPatch>,
    /// Neutral patches, brightest first.
    pub grays: Vec<ChartPatch>,
}

impl ChartLayout {
    /// The brightest neutral patch, used as the normalization reference.
    pub fn white(&self) -> &ChartPatch {
        &self.grays[0]
    }
}

#[derive(Debug, Clone)]
pub struct ChartScene {
    pub scene: SceneModel,
    pub layout: ChartLayout,
}

/// A color chart on a plane 0.6 m away: a 4x4 grid of chromatic blocks above
/// a strip of six neutral patches, on a dark surround.
pub fn make_chart_scene(width: usize, height: usize) -> Result<ChartScene> {
    if width < 48 || height < 40 {
        return Err(Error::invalid("scene", "chart needs at least 48x40 pixels"));
    }
    let mut materials = vec![srgb_material("surround", CHART_SURROUND_SRGB)?];
    let mut material_map = Image::filled(width, height, 0u16)?;
    let row_h = height / 5;
    let cell = |x0: usize, x1: usize, y0: usize, y1: usize| {
        let mx = (x1 - x0) / 8;
        let my = (y1 - y0) / 8;
        Rect::new(x0 + mx, y0 + my, x1 - x0 - 2 * mx, y1 - y0 - 2 * my)
    };
    let mut paint = |rect: Rect, id: u16| {
        for (x, y) in rect.pixels() {
            material_map.set(x, y, id);
        }
    };

    let mut blocks = Vec::with_capacity(16);
    for (i, &srgb) in CHART_BLOCKS_SRGB.iter().enumerate() {
        let (r, c) = (i / 4, i % 4);
        let rect = cell(c * width / 4, (c + 1) * width / 4, r * row_h, (r + 1) * row_h);
        materials.push(srgb_material(format!("block_{i:02}"), srgb)?);
        paint(rect, materials.len() as u16 - 1);
        blocks.push(ChartPatch { rect, srgb });
    }
    let mut grays = Vec::with_capacity(CHART_GRAYS_SRGB.len());
    let n = CHART_GRAYS_SRGB.len();
    for (i, &g) in CHART_GRAYS_SRGB.iter().enumerate() {
        let rect = cell(i * width / n, (i + 1) * width / n, 4 * row_h, height);
        materials.push(srgb_material(format!("gray_{i}"), [g, g, g])?);
        paint(rect, materials.len() as u16 - 1);
        grays.push(ChartPatch {
            rect,
            srgb: [g, g, g],
        });
    }
    let scene = SceneModel::new(
        plane_depth(width, height, 0.6)?,
        material_map,
        materials,
        default_ambient(),
    )?;
    Ok(ChartScene {
        scene,
        layout: ChartLayout { blocks, grays },
    })
}

/// Reflectance samples (nm, value) for the sample materials.
fn material_curves() -> Vec<(&'static str, Vec<(f64, f64)>)> {
    vec![
        (
            "leaf",
            vec![
                (600.0, 0.09),
                (650.0, 0.06),
                (680.0, 0.05),
                (700.0, 0.12),
                (720.0, 0.30),
                (750.0, 0.46),
                (800.0, 0.50),
                (900.0, 0.51),
            ],
        ),
        (
            "branch",
            vec![(600.0, 0.14), (700.0, 0.21), (760.0, 0.27), (850.0, 0.33), (900.0, 0.35)],
        ),
        ("foam", vec![(600.0, 0.82), (750.0, 0.86), (900.0, 0.84)]),
        ("plaster", vec![(600.0, 0.90), (900.0, 0.93)]),
        ("wood", vec![(600.0, 0.34), (700.0, 0.43), (800.0, 0.52), (900.0, 0.55)]),
        ("cork", vec![(600.0, 0.22), (700.0, 0.31), (850.0, 0.42), (900.0, 0.44)]),
        (
            "plastic",
            vec![(600.0, 0.12), (680.0, 0.08), (740.0, 0.25), (800.0, 0.60), (900.0, 0.62)],
        ),
    ]
}

#[derive(Debug, Clone)]
pub struct MaterialsScene {
    pub scene: SceneModel,
    /// Interior of the 99 % reference panel.
    pub panel: Rect,
    /// Interior of each sample patch with its material name.
    pub samples: Vec<(String, Rect)>,
}

/// Reference panel plus seven material samples on a black backdrop, 0.5 m away.
pub fn make_materials_scene(width: usize, height: usize) -> Result<MaterialsScene> {
    if width < 32 || height < 16 {
        return Err(Error::invalid("scene", "materials scene needs at least 32x16 pixels"));
    }
    let mut materials = vec![
        Material::flat("backdrop", 0.03)?,
        Material::flat("reference_panel", 0.99)?,
    ];
    let mut material_map = Image::filled(width, height, 0u16)?;
    let (cols, rows) = (4, 2);
    let cell = |i: usize| {
        let (c, r) = (i % cols, i / cols);
        let (x0, x1) = (c * width / cols, (c + 1) * width / cols);
        let (y0, y1) = (r * height / rows, (r + 1) * height / rows);
        let m = ((x1 - x0).min(y1 - y0) / 6).max(1);
        Rect::new(x0 + m, y0 + m, x1 - x0 - 2 * m, y1 - y0 - 2 * m)
    };
    let mut paint = |rect: Rect, id: u16| {
        for (x, y) in rect.pixels() {
            material_map.set(x, y, id);
        }
    };
    let panel_rect = cell(0);
    paint(panel_rect, 1);
    let mut samples = Vec::new();
    for (i, (name, curve)) in material_curves().into_iter().enumerate() {
        materials.push(Material::new(name, SpectralReflectance::new(curve)?));
        let rect = cell(i + 1);
        paint(rect, materials.len() as u16 - 1);
        samples.push((name.to_string(), rect.inset(1)));
    }
    let scene = SceneModel::new(
        plane_depth(width, height, 0.5)?,
        material_map,
        materials,
        default_ambient(),
    )?;
    Ok(MaterialsScene {
        scene,
        panel: panel_rect.inset(1),
        samples,
    })
}

/// Knobs for the synthetic forest generator. Sizes scale with image width.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub width: usize,
    pub height: usize,
    pub leaves: usize,
    pub branches: usize,
    /// Fraction of leaves that share the bark color.
    pub brown_leaf_fraction: f64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            width: 160,
            height: 120,
            leaves: 28,
            branches: 6,
            brown_leaf_fraction: 0.5,
        }
    }
}

const LEAF_GREENS_SRGB: [[u8; 3]; 3] = [[74, 120, 52], [96, 140, 60], [58, 100, 48]];
const BARK_SRGB: [[u8; 3]; 2] = [[112, 84, 60], [98, 74, 54]];
const FOREST_BACKGROUND_SRGB: [u8; 3] = [120, 130, 140];

/// Leaf blobs and branch bars over a distant background, with ground-truth labels.
///
/// Leaves are mostly green ellipses with gently curved depth between 1.2 and
/// 2.2 m; a fraction use the bark color. Branches are thin bars between 0.9
/// and 1.7 m. The background sits at 3 m.
pub fn make_forest_scene(seed: u64, params: &ForestParams) -> Result<SceneModel> {
    let (w, h) = (params.width, params.height);
    if w < 16 || h < 16 {
        return Err(Error::invalid("scene", "forest needs at least 16x16 pixels"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut materials = vec![srgb_material("background", FOREST_BACKGROUND_SRGB)?];
    for (i, &c) in LEAF_GREENS_SRGB.iter().enumerate() {
        materials.push(srgb_material(format!("leaf_green_{i}"), c)?);
    }
    for (i, &c) in BARK_SRGB.iter().enumerate() {
        materials.push(srgb_material(format!("bark_{i}"), c)?);
    }
    let green_ids = 1..=LEAF_GREENS_SRGB.len() as u16;
    let bark_ids = (LEAF_GREENS_SRGB.len() as u16 + 1)..=(LEAF_GREENS_SRGB.len() + BARK_SRGB.len()) as u16;

    let mut depth = Image::from_fn(w, h, |_, y| (3.0 - 0.2 * y as f64 / h as f64) as f32)?;
    let mut mats = Image::filled(w, h, 0u16)?;
    let mut labels = Image::filled(w, h, CLASS_BACKGROUND)?;
    let scale = w as f64 / 160.0;

    for _ in 0..params.leaves {
        let cx = rng.random_range(0.0..w as f64);
        let cy = rng.random_range(0.0..h as f64);
        let brown = rng.random_bool(params.brown_leaf_fraction.clamp(0.0, 1.0));
        let a = rng.random_range(7.0..16.0) * scale;
        let b = rng.random_range(4.0..9.0) * scale;
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let d0 = rng.random_range(1.2..2.2);
        let mat = if brown {
            rng.random_range(bark_ids.clone())
        } else {
            rng.random_range(green_ids.clone())
        };
        let (s, c) = theta.sin_cos();
        let x0 = (cx - a).floor().max(0.0) as usize;
        let x1 = ((cx + a).ceil() as usize).min(w - 1);
        let y0 = (cy - a).floor().max(0.0) as usize;
        let y1 = ((cy + a).ceil() as usize).min(h - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let u = (c * dx + s * dy) / a;
                let v = (-s * dx + c * dy) / b;
                let r2 = u * u + v * v;
                if r2 <= 1.0 {
                    let z = (d0 - 0.04 * (1.0 - r2)) as f32;
                    if z < *depth.get(x, y) {
                        depth.set(x, y, z);
                        mats.set(x, y, mat);
                        labels.set(x, y, CLASS_LEAVES);
                    }
                }
            }
        }
    }

    for _ in 0..params.branches {
        let x0 = rng.random_range(0.0..w as f64);
        let y0 = rng.random_range(0.0..h as f64);
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let len = rng.random_range(0.5..1.0) * w as f64;
        let half_t = rng.random_range(1.5..3.0) * scale;
        let d0 = rng.random_range(0.9..1.7);
        let slope = rng.random_range(-0.1..0.1);
        let mat = rng.random_range(bark_ids.clone());
        let (dir_x, dir_y) = (angle.cos(), angle.sin());
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 - x0, y as f64 - y0);
                let along = dx * dir_x + dy * dir_y;
                let across = -dx * dir_y + dy * dir_x;
                if along.abs() <= len / 2.0 && across.abs() <= half_t {
                    let z = (d0 + slope * along / len) as f32;
                    if z < *depth.get(x, y) {
                        depth.set(x, y, z);
                        mats.set(x, y, mat);
                        labels.set(x, y, CLASS_BRANCHES);
                    }
                }
            }
        }
    }

    SceneModel::new(DepthMap::from_values(depth), mats, materials, default_ambient())?
        .with_labels(LabelMap::new(labels)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::reflectance_image;
    use crate::spectral::color::linear_to_srgb;

    #[test]
    fn plane_depth_constant() {
        let s = make_plane_scene(32, 24, 1.0).unwrap();
        assert!(s.depth().valid_values().iter().all(|&d| d == 1.0));
        assert_eq!(s.depth().valid_count(), 32 * 24);
    }

    #[test]
    fn chart_blocks_reproduce_targets() {
        let chart = make_chart_scene(160, 120).unwrap();
        assert_eq!(chart.layout.blocks.len(), 16);
        assert!(chart.layout.grays.len() >= 4);
        let bands: Vec<_> = RGB_BANDS_NM
            .iter()
            .map(|&l| reflectance_image(&chart.scene, l).unwrap())
            .collect();
        for patch in chart.layout.blocks.iter().chain(&chart.layout.grays) {
            for (c, band) in bands.iter().enumerate() {
                let mean = crate::image::region_mean(band, &patch.rect).unwrap();
                let srgb = (linear_to_srgb(mean) * 255.0).round() as u8;
                assert_eq!(srgb, patch.srgb[c], "patch {:?} channel {c}", patch.rect);
            }
        }
    }

    #[test]
    fn wedge_steps_cover_width() {
        let w = make_wedge_scene(40, 8, &[0.1, 0.2, 0.4, 0.8]).unwrap();
        assert_eq!(w.steps.len(), 4);
        let img = reflectance_image(&w.scene, 700.0).unwrap();
        for (rect, r) in &w.steps {
            for (x, y) in rect.pixels() {
                assert_eq!(*img.get(x, y), *r as f32);
            }
        }
    }

    #[test]
    fn forest_is_deterministic_and_labelled() {
        let p = ForestParams::default();
        let a = make_forest_scene(7, &p).unwrap();
        let b = make_forest_scene(7, &p).unwrap();
        assert_eq!(a, b);
        let c = make_forest_scene(8, &p).unwrap();
        assert_ne!(a, c);
        let labels = a.labels().unwrap();
        let count = |k| labels.image().data().iter().filter(|&&v| v == k).count();
        assert!(count(CLASS_LEAVES) > 0 && count(CLASS_BRANCHES) > 0 && count(CLASS_BACKGROUND) > 0);
    }

    #[test]
    fn materials_scene_has_panel() {
        let m = make_materials_scene(96, 48).unwrap();
        let img = reflectance_image(&m.scene, 700.0).unwrap();
        for (x, y) in m.panel.pixels() {
            assert_eq!(*img.get(x, y), 0.99);
        }
        assert_eq!(m.samples.len(), 7);
    }
}
