use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use warpmatch::eval::summarize;
use warpmatch::exemplar::SyntheticPairRecord;
use warpmatch::matcher::{match_images, MatchSet, WarpPrior};
use warpmatch::raster::{load_rgb, Mask};
use warpmatch::tps::{solve_warp, ControlGrid};

use crate::config::PipelineConfig;
use crate::error::{CliError, Staged};
use crate::output::{item_path, prepare_out_dir, write_atomic, write_json};
use crate::pipeline::{
    describe, exact_prior, grid_keypoints, seeded_match, synthetic_gt, GtFile, WarpSource,
};

/// One row of `matches/index.json`, consumed by `propagate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchIndexEntry {
    pub image_a: String,
    pub image_b: String,
    /// Relative to the index file.
    pub csv: String,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub pair_id: String,
    pub n_matches: usize,
    pub n_gt: usize,
    pub ap: f64,
    #[serde(rename = "pck@0.05")]
    pub pck_005: f64,
    #[serde(rename = "pck@0.10")]
    pub pck_010: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFailure {
    pub pair_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSummary {
    pub source: WarpSource,
    pub pairs: Vec<PairResult>,
    pub failures: Vec<PairFailure>,
    pub mean_ap: f64,
    #[serde(rename = "mean_pck@0.05")]
    pub mean_pck_005: f64,
    #[serde(rename = "mean_pck@0.10")]
    pub mean_pck_010: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Matches every synthetic pair (original → warped) with the chosen warp
/// source. Writes one CSV and one ground-truth file per pair plus a summary;
/// failing pairs are logged and skipped.
pub fn cmd_match(
    pairs: &[SyntheticPairRecord],
    pairs_dir: &Path,
    source: &WarpSource,
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<MatchSummary, CliError> {
    prepare_out_dir(out_dir, cfg)?;
    let matches_dir = out_dir.join("matches");
    std::fs::create_dir_all(&matches_dir).stage("match")?;
    let outcomes: Vec<Result<(PairResult, MatchIndexEntry), PairFailure>> = pairs
        .par_iter()
        .map(|p| {
            match_one(p, pairs_dir, source, cfg, &matches_dir).map_err(|e| {
                log::error!("pair {}: {e}", p.pair_id);
                PairFailure {
                    pair_id: p.pair_id.clone(),
                    error: e.to_string(),
                }
            })
        })
        .collect();
    let mut results = Vec::new();
    let mut index = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok((r, i)) => {
                results.push(r);
                index.push(i);
            }
            Err(f) => failures.push(f),
        }
    }
    write_json(&matches_dir.join("index.json"), &index)?;
    let summary = MatchSummary {
        source: source.clone(),
        mean_ap: mean(results.iter().map(|r| r.ap)),
        mean_pck_005: mean(results.iter().map(|r| r.pck_005)),
        mean_pck_010: mean(results.iter().map(|r| r.pck_010)),
        pairs: results,
        failures,
    };
    write_json(&out_dir.join("match_summary.json"), &summary)?;
    Ok(summary)
}

fn match_one(
    p: &SyntheticPairRecord,
    dir: &Path,
    source: &WarpSource,
    cfg: &PipelineConfig,
    out: &Path,
) -> Result<(PairResult, MatchIndexEntry), CliError> {
    let load_img = |rel: &str| load_rgb(&dir.join(rel)).stage("load");
    let load_mask = |rel: &str| Mask::load_png(&dir.join(rel)).stage("load");
    let (img_a, mask_a) = (load_img(&p.image_path)?, load_mask(&p.mask_path)?);
    let (img_b, mask_b) = (
        load_img(&p.warped_image_path)?,
        load_mask(&p.warped_mask_path)?,
    );
    let frame = p.frame();
    let kp_a = grid_keypoints(&p.original_id, &mask_a, cfg.stride);
    let kp_b = grid_keypoints(&p.pair_id, &mask_b, cfg.stride);
    let (desc_a, desc_b) = (describe(&img_a, &kp_a, cfg)?, describe(&img_b, &kp_b, cfg)?);
    let params = cfg.match_params();
    let with =
        |prior: &WarpPrior| match_images(&desc_a, &desc_b, Some(prior), &params).stage("match");
    let set: MatchSet = match source {
        WarpSource::Appearance => match_images(&desc_a, &desc_b, None, &params).stage("match")?,
        WarpSource::TrueWarp => with(&WarpPrior {
            a_to_b: p.applied_warp.clone(),
            b_to_a: p.inverse_warp.clone(),
            frame_a: frame,
            frame_b: frame,
        })?,
        WarpSource::Seeded => seeded_match(&desc_a, &desc_b, frame, frame, cfg)?,
        WarpSource::Annotation => with(&exact_prior(&p.sources(), &p.targets(), frame, frame)?)?,
        WarpSource::Grids(grid_dir) => {
            let path = item_path(grid_dir, &p.pair_id, "json");
            let text = std::fs::read_to_string(&path)
                .map_err(|e| CliError::data("match", format!("{}: {e}", path.display())))?;
            let grid: ControlGrid = serde_json::from_str(&text).stage("match")?;
            with(&WarpPrior {
                a_to_b: grid.warp().stage("match")?,
                b_to_a: solve_warp(&grid.target, &grid.source).stage("match")?,
                frame_a: frame,
                frame_b: frame,
            })?
        }
    };
    let gt = synthetic_gt(&kp_a, &p.applied_warp, frame, &mask_b);
    let csv_path = item_path(out, &p.pair_id, "csv");
    write_atomic(&csv_path, set.to_csv_string().as_bytes())?;
    write_json(
        &item_path(out, &format!("{}.gt", p.pair_id), "json"),
        &GtFile {
            frame_a: frame,
            frame_b: frame,
            gt: gt.clone(),
        },
    )?;
    let s = summarize(&set.matches, &gt, cfg.alpha, frame, frame);
    Ok((
        PairResult {
            pair_id: p.pair_id.clone(),
            n_matches: s.n_matches,
            n_gt: s.n_gt,
            ap: s.ap,
            pck_005: s.pck_005,
            pck_010: s.pck_010,
        },
        MatchIndexEntry {
            image_a: p.original_id.clone(),
            image_b: p.pair_id.clone(),
            csv: csv_path
                .file_name()
                .expect("file path")
                .to_string_lossy()
                .to_string(),
            lambda: if matches!(source, WarpSource::Appearance) {
                0.0
            } else {
                cfg.lambda
            },
        },
    ))
}
