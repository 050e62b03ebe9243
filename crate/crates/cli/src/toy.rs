//! Small rigid-scene dataset: orthographic views of textured points with
//! exact part annotations and the target view's 3D ground truth.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use warpmatch::raster::save_rgb_png;
use warpmatch::synthetic::{view_rotation, RigidScene, SceneView};
use warpmatch::tps::ImageFrame;

use crate::error::{CliError, Staged};
use crate::manifest::{DatasetManifest, ManifestRecord, PartRecord};
use crate::output::{write_atomic, write_json};

pub const GROUP: &str = "toy";
/// Track cost limit written to the toy configuration; the scene's sprites
/// are similar enough that costlier paths are often wrong.
pub const TOY_PATH_COST_MAX: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyOptions {
    pub seed: u64,
    pub views: usize,
    pub points: usize,
    /// Minimum frontal spacing of scene points, scene units.
    pub spacing: f64,
    /// Pixels per scene unit.
    pub scale: f64,
    pub width: u32,
    pub height: u32,
    pub max_azimuth_deg: f64,
    pub max_elevation_deg: f64,
}

impl Default for ToyOptions {
    fn default() -> Self {
        Self {
            seed: 7,
            views: 12,
            points: 80,
            spacing: 0.13,
            scale: 160.0,
            width: 416,
            height: 352,
            max_azimuth_deg: 30.0,
            max_elevation_deg: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyView {
    pub image_id: String,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyGroundTruth {
    pub target: String,
    /// Target-view `[x, y, depth]` per part, pixels.
    pub points: Vec<[f64; 3]>,
    pub views: Vec<ToyView>,
    pub options: ToyOptions,
}

pub fn view_id(i: usize) -> String {
    format!("v{i:02}")
}

pub fn part_name(i: usize) -> String {
    format!("p{i:02}")
}

/// A point is visible when it lies in the frame and no nearer point's sprite
/// covers its center.
fn occlusion_visibility(view: &SceneView, cover_radius: f64, frame: ImageFrame) -> Vec<bool> {
    (0..view.points.len())
        .map(|i| {
            let p = view.points[i];
            let inside =
                p.x >= 0.0 && p.y >= 0.0 && p.x < frame.width as f64 && p.y < frame.height as f64;
            inside
                && (0..view.points.len()).all(|j| {
                    j == i
                        || view.depths[j] <= view.depths[i]
                        || view.points[j].distance(&p) > cover_radius
                })
        })
        .collect()
}

/// Renders the scene from `views` directions (the first is frontal and is
/// the target) and writes images, masks, `manifest.json`, `config.toml` and
/// `ground_truth.json` under `dir`.
pub fn write_toy(dir: &Path, opts: &ToyOptions) -> Result<ToyGroundTruth, CliError> {
    if opts.views < 2 || opts.points < 4 {
        return Err(CliError::Usage(
            "toy scenes need at least 2 views and 4 points".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let scene = RigidScene::random_with_spacing(opts.points, opts.spacing, &mut rng);
    let frame = ImageFrame::new(opts.width, opts.height);
    let cover = scene.sprite_radius as f64;
    let mut records = Vec::new();
    let mut views = Vec::new();
    let mut gt_points = Vec::new();
    for v in 0..opts.views {
        let (az, el) = if v == 0 {
            (0.0, 0.0)
        } else {
            (
                rng.random_range(-opts.max_azimuth_deg..=opts.max_azimuth_deg),
                rng.random_range(-opts.max_elevation_deg..=opts.max_elevation_deg),
            )
        };
        let view = scene.render(
            view_rotation(az.to_radians(), el.to_radians()),
            opts.scale,
            frame,
            &mut rng,
        );
        let visible = occlusion_visibility(&view, cover, frame);
        let id = view_id(v);
        let image_path = format!("images/{id}.png");
        let mask_path = format!("masks/{id}.png");
        std::fs::create_dir_all(dir.join("images")).stage("toy")?;
        std::fs::create_dir_all(dir.join("masks")).stage("toy")?;
        save_rgb_png(&view.image, &dir.join(&image_path)).stage("toy")?;
        view.mask.save_png(&dir.join(&mask_path)).stage("toy")?;
        if v == 0 {
            gt_points = view
                .points
                .iter()
                .zip(&view.depths)
                .map(|(p, d)| [p.x, p.y, *d])
                .collect();
        }
        records.push(ManifestRecord {
            image_id: id.clone(),
            image_path,
            mask_path,
            group_label: GROUP.into(),
            parts: Some(
                view.points
                    .iter()
                    .zip(&visible)
                    .enumerate()
                    .map(|(i, (p, vis))| PartRecord {
                        name: part_name(i),
                        x: p.x,
                        y: p.y,
                        visible: *vis,
                    })
                    .collect(),
            ),
        });
        views.push(ToyView {
            image_id: id,
            azimuth_deg: az,
            elevation_deg: el,
        });
    }
    let manifest = DatasetManifest {
        root: ".".into(),
        records,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    write_atomic(
        &dir.join("config.toml"),
        format!(
            "seed = {}\nkeypoints = \"parts\"\npath_cost_max = {}\n",
            opts.seed, TOY_PATH_COST_MAX
        )
        .as_bytes(),
    )?;
    let gt = ToyGroundTruth {
        target: view_id(0),
        points: gt_points,
        views,
        options: *opts,
    };
    write_json(&dir.join("ground_truth.json"), &gt)?;
    Ok(gt)
}
