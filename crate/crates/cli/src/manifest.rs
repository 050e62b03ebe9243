//! Dataset manifests: image, mask, group label and optional named parts per
//! record, with paths relative to `root`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use warpmatch::descriptors::KeypointSet;
use warpmatch::raster::{self, Mask, RgbImageF};
use warpmatch::tps::Point2;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartRecord {
    pub name: String,
    pub x: f64,
    pub y: f64,
    #[serde(default = "yes")]
    pub visible: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image_id: String,
    pub image_path: String,
    pub mask_path: String,
    #[serde(default)]
    pub group_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parts: Option<Vec<PartRecord>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Resolved against the manifest's directory when relative.
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    /// Parses and checks unique ids and that every referenced file exists.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::data("manifest", format!("cannot read {}: {e}", path.display()))
        })?;
        let mut m: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| CliError::data("manifest", format!("{}: {e}", path.display())))?;
        if m.root.is_relative() {
            m.root = path.parent().unwrap_or(Path::new(".")).join(&m.root);
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if !seen.insert(r.image_id.as_str()) {
                return Err(CliError::data(
                    "manifest",
                    format!("duplicate image_id {}", r.image_id),
                ));
            }
            for (what, p) in [("image", &r.image_path), ("mask", &r.mask_path)] {
                let full = self.root.join(p);
                if !full.is_file() {
                    return Err(CliError::data(
                        "manifest",
                        format!(
                            "record {}: {what} file {} not found",
                            r.image_id,
                            full.display()
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, image_id: &str) -> Option<&ManifestRecord> {
        self.records.iter().find(|r| r.image_id == image_id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.image_id.clone()).collect()
    }

    pub fn load_mask(&self, r: &ManifestRecord) -> Result<Mask, CliError> {
        Mask::load_png(&self.root.join(&r.mask_path))
            .map_err(|e| CliError::data("load", format!("record {}: {e}", r.image_id)))
    }

    pub fn load_image(&self, r: &ManifestRecord) -> Result<(RgbImageF, Mask), CliError> {
        let img = raster::load_rgb(&self.root.join(&r.image_path))
            .map_err(|e| CliError::data("load", format!("record {}: {e}", r.image_id)))?;
        let mask = self.load_mask(r)?;
        if (img.width(), img.height()) != (mask.width(), mask.height()) {
            return Err(CliError::data(
                "load",
                format!("record {}: image and mask sizes differ", r.image_id),
            ));
        }
        Ok((img, mask))
    }
}

impl ManifestRecord {
    /// Named part keypoints, if annotated.
    pub fn part_keypoints(&self) -> Option<KeypointSet> {
        let parts = self.parts.as_ref()?;
        KeypointSet::with_visibility(
            self.image_id.clone(),
            parts.iter().map(|p| Point2::new(p.x, p.y)).collect(),
            parts.iter().map(|p| p.visible).collect(),
            Some(parts.iter().map(|p| p.name.clone()).collect()),
        )
        .ok()
    }
}
