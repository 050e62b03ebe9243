use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use warpmatch::posegraph::{build_pose_graph, mask_global_descriptor, PoseGraph};

use crate::config::PipelineConfig;
use crate::error::{CliError, Staged};
use crate::manifest::DatasetManifest;
use crate::output::{prepare_out_dir, write_atomic};

/// Reads `{image_id: [f64, …]}` global descriptors.
pub fn read_global_descriptors(path: &Path) -> Result<BTreeMap<String, Vec<f64>>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data("posegraph", format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::data("posegraph", format!("{}: {e}", path.display())))
}

/// kNN pose graph over the manifest images, from mask descriptors or an
/// imported descriptor file. Writes `posegraph.json`.
pub fn cmd_posegraph(
    manifest: &DatasetManifest,
    descriptors: Option<&Path>,
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<PoseGraph, CliError> {
    prepare_out_dir(out_dir, cfg)?;
    let desc = match descriptors {
        Some(p) => {
            let d = read_global_descriptors(p)?;
            for id in manifest.ids() {
                if !d.contains_key(&id) {
                    return Err(CliError::data(
                        "posegraph",
                        format!("no global descriptor for record {id}"),
                    ));
                }
            }
            d.into_iter()
                .filter(|(k, _)| manifest.get(k).is_some())
                .collect()
        }
        None => manifest
            .records
            .par_iter()
            .map(|r| {
                Ok((
                    r.image_id.clone(),
                    mask_global_descriptor(&manifest.load_mask(r)?),
                ))
            })
            .collect::<Result<BTreeMap<_, _>, CliError>>()?,
    };
    let graph = build_pose_graph(&desc, cfg.pose_k).stage("posegraph")?;
    write_atomic(
        &out_dir.join("posegraph.json"),
        graph.to_json().stage("posegraph")?.as_bytes(),
    )?;
    Ok(graph)
}
