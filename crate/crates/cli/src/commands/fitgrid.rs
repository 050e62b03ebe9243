use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use warpmatch::exemplar::SyntheticPairRecord;
use warpmatch::tps::fit_grid_to_correspondences;

use crate::config::PipelineConfig;
use crate::error::{CliError, Staged};
use crate::output::{item_path, prepare_out_dir, write_json};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitRecord {
    pub pair_id: String,
    pub initial_mse: f64,
    pub final_mse: f64,
    /// Mean correspondence error of the fitted warp, pixels.
    pub mean_error_px: f64,
}

/// Fits a `k_grid` control grid to every pair's correspondences and writes
/// one `ControlGrid` JSON per pair under `grids/`.
pub fn cmd_fitgrid(
    pairs: &[SyntheticPairRecord],
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<Vec<FitRecord>, CliError> {
    prepare_out_dir(out_dir, cfg)?;
    let grids_dir = out_dir.join("grids");
    let records: Vec<FitRecord> = pairs
        .par_iter()
        .map(|p| {
            let frame = p.frame();
            let src: Vec<_> = p
                .sources()
                .into_iter()
                .map(|q| frame.to_normalized(q))
                .collect();
            let dst: Vec<_> = p
                .targets()
                .into_iter()
                .map(|q| frame.to_normalized(q))
                .collect();
            let fit = fit_grid_to_correspondences(&src, &dst, &cfg.grid_fit())
                .stage("fitgrid")
                .map_err(|e| e.context(format!("pair {}", p.pair_id)))?;
            let warp = fit
                .grid
                .warp()
                .stage("fitgrid")
                .map_err(|e| e.context(format!("pair {}", p.pair_id)))?;
            let err: f64 = p
                .sources()
                .iter()
                .zip(p.targets())
                .map(|(s, t)| {
                    frame
                        .to_pixel(warp.apply(frame.to_normalized(*s)))
                        .distance(&t)
                })
                .sum::<f64>()
                / src.len().max(1) as f64;
            write_json(&item_path(&grids_dir, &p.pair_id, "json"), &fit.grid)?;
            Ok(FitRecord {
                pair_id: p.pair_id.clone(),
                initial_mse: fit.history[0],
                final_mse: fit.final_mse(),
                mean_error_px: err,
            })
        })
        .collect::<Result<_, CliError>>()?;
    write_json(&out_dir.join("fitgrid_summary.json"), &records)?;
    Ok(records)
}
