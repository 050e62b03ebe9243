use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use warpmatch::descriptors::{DescriptorSet, KeypointSet};
use warpmatch::eval::label_matches;
use warpmatch::exemplar::{generate_pair, ExemplarWarp, ExemplarWarpBank};
use warpmatch::matcher::{threshold_at_precision, LabeledRatio, MatchSet};
use warpmatch::propagate::{select_subset, SubsetHeuristic};
use warpmatch::raster::Mask;
use warpmatch::reconstruct::{
    build_measurement_matrix, factorize_rigid, write_ply, xy_snap, Reconstruction,
};
use warpmatch::synthetic::random_smooth_warp;
use warpmatch::tps::{ImageFrame, Point2, TpsWarp};

use crate::commands::generate::pose_graph_from_masks;
use crate::commands::matching::MatchIndexEntry;
use crate::commands::propagate::propagate_and_prune;
use crate::config::{KeypointSource, PipelineConfig};
use crate::error::{CliError, Staged};
use crate::manifest::{DatasetManifest, ManifestRecord};
use crate::output::{derive_seed, item_path, prepare_out_dir, write_atomic, write_json};
use crate::pipeline::{describe, grid_keypoints, seeded_match, synthetic_gt};

/// Deformation amplitude of the synthetic pairs used to calibrate the ratio cutoff.
pub const CALIBRATION_AMPLITUDE: f64 = 0.06;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub precision: f64,
    /// `None` when the target precision was never reached; all matches are kept.
    pub cutoff: Option<f64>,
    /// Whether the cutoff came from the configuration.
    pub configured: bool,
    pub pairs: Vec<String>,
    pub labeled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconstructReport {
    pub target: String,
    pub subset: Vec<String>,
    pub matched_pairs: usize,
    pub tracks: usize,
    pub kept_images: Vec<String>,
    pub frames: usize,
    pub points: usize,
    pub residual: f64,
    pub converged: bool,
    pub degenerate_rank: bool,
}

pub fn keypoints_for(
    record: &ManifestRecord,
    mask: &Mask,
    cfg: &PipelineConfig,
) -> Result<KeypointSet, CliError> {
    match cfg.keypoints {
        KeypointSource::Grid => Ok(grid_keypoints(&record.image_id, mask, cfg.stride)),
        KeypointSource::Parts => record.part_keypoints().ok_or_else(|| {
            CliError::data(
                "descriptors",
                format!("record {} has no usable parts", record.image_id),
            )
        }),
    }
}

/// Keypoints moved through `warp`; those leaving the warped foreground are
/// marked invisible.
fn warped_keypoints(
    kp: &KeypointSet,
    warp: &TpsWarp,
    frame: ImageFrame,
    warped_mask: &Mask,
) -> KeypointSet {
    let points: Vec<Point2> = kp
        .points
        .iter()
        .map(|p| frame.to_pixel(warp.apply(frame.to_normalized(*p))))
        .collect();
    let visibility = points
        .iter()
        .zip(&kp.visibility)
        .map(|(p, v)| *v && frame.contains(*p) && warped_mask.contains_point(*p))
        .collect();
    KeypointSet::with_visibility(
        format!("{}~", kp.image_id),
        points,
        visibility,
        kp.names.clone(),
    )
    .expect("lengths match")
}

/// Ratio cutoff reaching `cfg.precision` on synthetic deformations of the
/// first `calibration_pairs` subset images, pooled into one ranking. The
/// configured keypoint source is used on both sides.
pub fn calibrate_cutoff(
    manifest: &DatasetManifest,
    subset: &[String],
    cfg: &PipelineConfig,
) -> Result<Calibration, CliError> {
    if let Some(c) = cfg.ratio_cutoff {
        return Ok(Calibration {
            precision: cfg.precision,
            cutoff: Some(c),
            configured: true,
            pairs: Vec::new(),
            labeled: 0,
        });
    }
    let ids: Vec<&String> = subset.iter().take(cfg.calibration_pairs).collect();
    let labels: Vec<Vec<LabeledRatio>> = ids
        .par_iter()
        .map(|id| {
            let r = manifest.get(id).expect("subset ids come from the manifest");
            let (img, mask) = manifest.load_image(r)?;
            let seed = derive_seed(cfg.seed, "calibrate", id);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let warp = ExemplarWarp::from_forward(random_smooth_warp(
                cfg.k_grid,
                CALIBRATION_AMPLITUDE,
                &mut rng,
            ))
            .stage("calibrate")?;
            let bank = ExemplarWarpBank::from_warps(vec![warp]);
            let pair =
                generate_pair(id, &img, &mask, &bank, 1, cfg.chromatic, seed).stage("calibrate")?;
            let frame = mask.frame();
            let kp_a = keypoints_for(r, &mask, cfg)?;
            let kp_b = match cfg.keypoints {
                KeypointSource::Grid => {
                    grid_keypoints(&format!("{id}~"), &pair.warped_mask, cfg.stride)
                }
                KeypointSource::Parts => {
                    warped_keypoints(&kp_a, &pair.applied_warp, frame, &pair.warped_mask)
                }
            };
            let desc_a = describe(&img, &kp_a, cfg)?;
            let desc_b = describe(&pair.warped_image, &kp_b, cfg)?;
            let set = seeded_match(&desc_a, &desc_b, frame, frame, cfg)?;
            let gt = synthetic_gt(&kp_a, &pair.applied_warp, frame, &pair.warped_mask);
            Ok(label_matches(&set.matches, &gt, cfg.alpha, frame, frame))
        })
        .collect::<Result<_, CliError>>()?;
    let mut pooled: Vec<LabeledRatio> = labels.into_iter().flatten().collect();
    pooled.sort_by(|a, b| a.ratio.total_cmp(&b.ratio));
    let cutoff = match threshold_at_precision(&pooled, cfg.precision) {
        Ok(c) => Some(c),
        Err(e) => {
            log::warn!("calibration: {e}; keeping all matches");
            None
        }
    };
    Ok(Calibration {
        precision: cfg.precision,
        cutoff,
        configured: false,
        pairs: ids.into_iter().cloned().collect(),
        labeled: pooled.len(),
    })
}

/// Chooses the images for `target`: explicit list, keyword group, or the
/// target's group plus adjacent groups.
pub fn choose_subset(
    manifest: &DatasetManifest,
    target: &str,
    heuristic: Option<SubsetHeuristic>,
) -> Result<Vec<String>, CliError> {
    let record = manifest
        .get(target)
        .ok_or_else(|| CliError::data("subset", format!("target {target} not in manifest")))?;
    let heuristic = heuristic.unwrap_or_else(|| {
        SubsetHeuristic::NeighborGroups(BTreeMap::from([(record.group_label.clone(), Vec::new())]))
    });
    let records: Vec<(String, String)> = manifest
        .records
        .iter()
        .map(|r| (r.image_id.clone(), r.group_label.clone()))
        .collect();
    let mut subset = select_subset(&records, target, &heuristic).stage("subset")?;
    for id in &subset {
        if manifest.get(id).is_none() {
            return Err(CliError::data(
                "subset",
                format!("record {id} not in manifest"),
            ));
        }
    }
    if !subset.iter().any(|s| s == target) {
        subset.insert(0, target.to_string());
    }
    Ok(subset)
}

/// Subset selection, pose graph, pairwise seeded matching, propagation,
/// pruning and rigid factorization. Writes every intermediate plus
/// `target.ply`.
pub fn cmd_reconstruct(
    manifest: &DatasetManifest,
    target: &str,
    heuristic: Option<SubsetHeuristic>,
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<(Reconstruction, ReconstructReport), CliError> {
    prepare_out_dir(out_dir, cfg)?;
    let subset = choose_subset(manifest, target, heuristic)?;
    write_json(&out_dir.join("subset.json"), &subset)?;
    if subset.len() < 2 {
        return Err(CliError::data(
            "subset",
            format!(
                "insufficient views: subset for {target} has {} image(s)",
                subset.len()
            ),
        ));
    }

    let loaded: Vec<_> = subset
        .par_iter()
        .map(|id| {
            let r = manifest.get(id).expect("checked above");
            let (img, mask) = manifest.load_image(r)?;
            let kp = keypoints_for(r, &mask, cfg)?;
            let desc = describe(&img, &kp, cfg)?;
            Ok((mask, desc))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let masks: Vec<_> = loaded.iter().map(|(m, _)| m.clone()).collect();
    let descs: BTreeMap<&str, &DescriptorSet> = subset
        .iter()
        .map(String::as_str)
        .zip(loaded.iter().map(|(_, d)| d))
        .collect();

    let graph = pose_graph_from_masks(&subset, &masks, cfg.pose_k.min(subset.len() - 1))?;
    write_atomic(
        &out_dir.join("posegraph.json"),
        graph.to_json().stage("posegraph")?.as_bytes(),
    )?;
    let pairs: Vec<(String, String)> = graph
        .pairs_within_hops(cfg.hop_limit_reconstruction - 1)
        .into_iter()
        .collect();

    let calibration = calibrate_cutoff(manifest, &subset, cfg)?;
    write_json(&out_dir.join("calibration.json"), &calibration)?;

    let frame_of =
        |id: &str| masks[subset.iter().position(|s| s == id).expect("subset id")].frame();
    let sets: Vec<MatchSet> = pairs
        .par_iter()
        .map(|(a, b)| {
            let set = seeded_match(
                descs[a.as_str()],
                descs[b.as_str()],
                frame_of(a),
                frame_of(b),
                cfg,
            )
            .map_err(|e| e.context(format!("pair {a}/{b}")))?;
            Ok(match calibration.cutoff {
                Some(c) => set.truncated(c),
                None => set,
            })
        })
        .collect::<Result<_, CliError>>()?;
    let matches_dir = out_dir.join("matches");
    let mut index = Vec::new();
    for s in &sets {
        let path = item_path(
            &matches_dir,
            &format!("{}__{}", s.image_a, s.image_b),
            "csv",
        );
        write_atomic(&path, s.to_csv_string().as_bytes())?;
        index.push(MatchIndexEntry {
            image_a: s.image_a.clone(),
            image_b: s.image_b.clone(),
            csv: path
                .file_name()
                .expect("file path")
                .to_string_lossy()
                .to_string(),
            lambda: cfg.lambda,
        });
    }
    write_json(&matches_dir.join("index.json"), &index)?;

    let (tracks, pruned, prop) = propagate_and_prune(&sets, target, cfg)?;
    write_atomic(&out_dir.join("tracks.json"), tracks.to_json().as_bytes())?;
    write_atomic(
        &out_dir.join("tracks_pruned.json"),
        pruned.to_json().as_bytes(),
    )?;
    if !pruned.image_counts().keys().any(|k| k != target) {
        return Err(CliError::data(
            "propagate",
            format!(
                "insufficient views: no image other than {target} kept {} track points",
                cfg.min_image_matches
            ),
        ));
    }

    let m = build_measurement_matrix(&pruned, cfg.visibility_frac).stage("reconstruct")?;
    let recon = factorize_rigid(&m, &cfg.factorize()).stage("reconstruct")?;
    write_json(&out_dir.join("reconstruction.json"), &recon)?;
    let points = xy_snap(&recon, &m);
    let mut ply = Vec::new();
    write_ply(&mut ply, &points, &m.track_ids).stage("reconstruct")?;
    write_atomic(&out_dir.join("target.ply"), &ply)?;

    let report = ReconstructReport {
        target: target.to_string(),
        subset,
        matched_pairs: sets.len(),
        tracks: prop.tracks,
        kept_images: prop.kept_images,
        frames: m.frames(),
        points: m.points(),
        residual: recon.residual,
        converged: recon.converged,
        degenerate_rank: recon.degenerate_rank,
    };
    write_json(&out_dir.join("reconstruct_summary.json"), &report)?;
    Ok((recon, report))
}
