//! JSON scene description. Raster data lives next to the JSON file:
//!
//! ```json
//! {
//!   "schema": 1,
//!   "depth": "depth.pfm",
//!   "depth_mask": "depth_mask.pgm",
//!   "material_map": "materials.pgm",
//!   "labels": "labels.pgm",
//!   "ambient": [[300, 0.25], [1100, 0.25]],
//!   "materials": [{"name": "white", "reflectance": [[400, 0.8], [900, 0.8]]}]
//! }
//! ```
//!
//! Paths are relative to the JSON file. `depth_mask` and `labels` are optional;
//! without a mask every positive finite depth is valid. The material map is an
//! 8-bit PGM whose values index `materials`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Material, SceneModel, Spectrum};
use crate::error::{Error, Result};
use crate::image::{DepthMap, Image};
use crate::pnm::{mask_to_gray, read_labels, read_pfm, read_pgm, write_labels, write_pfm, write_pgm};

pub const SCENE_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub schema: u32,
    pub depth: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_mask: Option<String>,
    pub material_map: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
    pub ambient: Spectrum,
    pub materials: Vec<Material>,
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<SceneModel> {
    let path = path.as_ref();
    let doc: SceneFile = serde_json::from_slice(&fs::read(path)?)?;
    if doc.schema != SCENE_SCHEMA {
        return Err(Error::invalid(
            "scene file",
            format!("unsupported schema {} (expected {SCENE_SCHEMA})", doc.schema),
        ));
    }
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let values = read_pfm(dir.join(&doc.depth))?;
    let depth = match &doc.depth_mask {
        Some(m) => {
            let mask = read_pgm(dir.join(m))?.map(|&v| v != 0);
            let values = Image::from_vec(
                values.width(),
                values.height(),
                values
                    .data()
                    .iter()
                    .zip(mask.data())
                    .map(|(&d, &v)| if v { d } else { 0.0 })
                    .collect(),
            )?;
            DepthMap::new(values, mask)?
        }
        None => DepthMap::from_values(values),
    };
    let material_map = read_pgm(dir.join(&doc.material_map))?.map(|&v| v as u16);
    let scene = SceneModel::new(depth, material_map, doc.materials, doc.ambient)?;
    match &doc.labels {
        Some(l) => scene.with_labels(read_labels(dir.join(l))?),
        None => Ok(scene),
    }
}

/// Writes `<stem>.json` plus its rasters into `dir`.
pub fn save_scene(scene: &SceneModel, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
    let dir = dir.as_ref();
    if scene.materials().len() > 256 {
        return Err(Error::invalid("scene file", "at most 256 materials fit an 8-bit map"));
    }
    let depth_name = format!("{stem}_depth.pfm");
    let mask_name = format!("{stem}_depth_mask.pgm");
    let map_name = format!("{stem}_materials.pgm");
    write_pfm(scene.depth().depth(), dir.join(&depth_name))?;
    write_pgm(&mask_to_gray(scene.depth().valid()), dir.join(&mask_name))?;
    write_pgm(&scene.material_map().map(|&m| m as u8), dir.join(&map_name))?;
    let labels = match scene.labels() {
        Some(l) => {
            let name = format!("{stem}_labels.pgm");
            write_labels(l, dir.join(&name))?;
            Some(name)
        }
        None => None,
    };
    let doc = SceneFile {
        schema: SCENE_SCHEMA,
        depth: depth_name,
        depth_mask: Some(mask_name),
        material_map: map_name,
        labels,
        ambient: scene.ambient().clone(),
        materials: scene.materials().to_vec(),
    };
    fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{make_forest_scene, ForestParams};

    #[test]
    fn round_trip_forest() {
        let dir = tempfile::tempdir().unwrap();
        let scene = make_forest_scene(3, &ForestParams::default()).unwrap();
        save_scene(&scene, dir.path(), "forest").unwrap();
        let back = load_scene(dir.path().join("forest.json")).unwrap();
        assert_eq!(back, scene);
    }

    #[test]
    fn rejects_unknown_schema() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        fs::write(
            &p,
            r#"{"schema":2,"depth":"d.pfm","material_map":"m.pgm","ambient":[[300,0.1],[900,0.1]],"materials":[]}"#,
        )
        .unwrap();
        assert!(matches!(load_scene(&p), Err(Error::Invalid { .. })));
    }
}
