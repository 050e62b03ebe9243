use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use warpmatch::exemplar::{
    generate_pair, mine_exemplar_bank, ExemplarWarpBank, Silhouette, SyntheticPairRecord,
};
use warpmatch::posegraph::{build_pose_graph, mask_global_descriptor, PoseGraph};
use warpmatch::raster::{save_rgb_png, Mask};

use crate::config::PipelineConfig;
use crate::error::{CliError, Staged};
use crate::manifest::DatasetManifest;
use crate::output::{derive_seed, prepare_out_dir, write_atomic, write_json};

pub const PAIRS_FILE: &str = "pairs.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerateReport {
    pub pairs: usize,
    pub mining_pairs: usize,
    pub bank_size: usize,
}

pub fn pose_graph_from_masks(
    ids: &[String],
    masks: &[Mask],
    k: usize,
) -> Result<PoseGraph, CliError> {
    let desc: BTreeMap<String, Vec<f64>> = ids
        .iter()
        .zip(masks)
        .map(|(id, m)| (id.clone(), mask_global_descriptor(m)))
        .collect();
    build_pose_graph(&desc, k).stage("posegraph")
}

/// Mines silhouette warps between pose-graph neighbours within `hop_limit_eval`.
pub fn mine_bank(
    ids: &[String],
    masks: &[Mask],
    cfg: &PipelineConfig,
) -> Result<(ExemplarWarpBank, usize), CliError> {
    let graph = pose_graph_from_masks(ids, masks, cfg.pose_k)?;
    let index: BTreeMap<&str, usize> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let silhouettes: Vec<Silhouette> = masks
        .iter()
        .zip(ids)
        .map(|(m, id)| {
            Silhouette::from_mask(m.clone())
                .map_err(|e| CliError::data("exemplar", format!("record {id}: {e}")))
        })
        .collect::<Result<_, _>>()?;
    let pairs: Vec<(Silhouette, Silhouette)> = graph
        .pairs_within_hops(cfg.hop_limit_eval)
        .iter()
        .map(|(a, b)| {
            (
                silhouettes[index[a.as_str()]].clone(),
                silhouettes[index[b.as_str()]].clone(),
            )
        })
        .collect();
    let [lo, hi] = cfg.percentiles;
    let bank = mine_exemplar_bank(&pairs, lo, hi).stage("exemplar")?;
    Ok((bank, pairs.len()))
}

/// Mines an exemplar bank from the manifest silhouettes and writes
/// `m_copies` warped versions of every image with their correspondences.
pub fn cmd_generate(
    manifest: &DatasetManifest,
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<GenerateReport, CliError> {
    prepare_out_dir(out_dir, cfg)?;
    let ids = manifest.ids();
    let masks: Vec<Mask> = manifest
        .records
        .par_iter()
        .map(|r| manifest.load_mask(r))
        .collect::<Result<_, _>>()?;
    let (bank, mining_pairs) = mine_bank(&ids, &masks, cfg)?;
    write_json(&out_dir.join("exemplar_bank.json"), &bank)?;

    let records: Vec<Vec<SyntheticPairRecord>> = manifest
        .records
        .par_iter()
        .map(|r| -> Result<Vec<SyntheticPairRecord>, CliError> {
            let (img, mask) = manifest.load_image(r)?;
            let src_ext = |p: &str| {
                Path::new(p)
                    .extension()
                    .map_or("png".to_string(), |e| e.to_string_lossy().to_string())
            };
            let image_path = format!("originals/{}.{}", r.image_id, src_ext(&r.image_path));
            let mask_path = format!("originals/{}_mask.png", r.image_id);
            std::fs::create_dir_all(out_dir.join("originals")).stage("generate")?;
            let bytes = std::fs::read(manifest.root.join(&r.image_path)).stage("generate")?;
            write_atomic(&out_dir.join(&image_path), &bytes)?;
            let bytes = std::fs::read(manifest.root.join(&r.mask_path)).stage("generate")?;
            write_atomic(&out_dir.join(&mask_path), &bytes)?;

            (0..cfg.m_copies)
                .map(|c| {
                    let pair_id = format!("{}_{c}", r.image_id);
                    let seed = derive_seed(cfg.seed, "generate", &pair_id);
                    let pair = generate_pair(
                        &r.image_id,
                        &img,
                        &mask,
                        &bank,
                        cfg.n_points,
                        cfg.chromatic,
                        seed,
                    )
                    .map_err(|e| {
                        CliError::data("generate", format!("record {}: {e}", r.image_id))
                    })?;
                    let warped_image_path = format!("pairs/{pair_id}.png");
                    let warped_mask_path = format!("pairs/{pair_id}_mask.png");
                    write_png(&out_dir.join(&warped_image_path), |p| {
                        save_rgb_png(&pair.warped_image, p)
                    })?;
                    write_png(&out_dir.join(&warped_mask_path), |p| {
                        pair.warped_mask.save_png(p)
                    })?;
                    Ok(SyntheticPairRecord {
                        pair_id,
                        original_id: r.image_id.clone(),
                        image_path: image_path.clone(),
                        mask_path: mask_path.clone(),
                        warped_image_path,
                        warped_mask_path,
                        width: img.width(),
                        height: img.height(),
                        seed,
                        warp_index: pair.warp_index,
                        correspondences: pair
                            .correspondences
                            .iter()
                            .map(|(p, q)| [p.x, p.y, q.x, q.y])
                            .collect(),
                        applied_warp: pair.applied_warp,
                        inverse_warp: pair.inverse_warp,
                        chromatic: pair.chromatic,
                    })
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;

    let mut lines = String::new();
    for rec in records.iter().flatten() {
        lines.push_str(&serde_json::to_string(rec).stage("generate")?);
        lines.push('\n');
    }
    write_atomic(&out_dir.join(PAIRS_FILE), lines.as_bytes())?;
    let report = GenerateReport {
        pairs: records.iter().map(Vec::len).sum(),
        mining_pairs,
        bank_size: bank.len(),
    };
    write_json(&out_dir.join("generate_summary.json"), &report)?;
    Ok(report)
}

/// PNG written to a temp name then renamed.
pub fn write_png<E: std::fmt::Display>(
    path: &Path,
    save: impl FnOnce(&Path) -> Result<(), E>,
) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).stage("write")?;
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".tmp{}.{name}", std::process::id()));
    save(&tmp).map_err(|e| CliError::data("write", e))?;
    std::fs::rename(&tmp, path).stage("write")
}

pub fn read_pairs(path: &Path) -> Result<Vec<SyntheticPairRecord>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data("pairs", format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::data("pairs", format!("line {}: {e}", i + 1)))
        })
        .collect()
}
