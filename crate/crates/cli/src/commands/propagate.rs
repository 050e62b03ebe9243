use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use warpmatch::matcher::{read_match_csv, MatchParams, MatchSet};
use warpmatch::propagate::{build_keypoint_graph, propagate_tracks, prune_images, TrackSet};

use crate::commands::matching::MatchIndexEntry;
use crate::config::PipelineConfig;
use crate::error::{CliError, Staged};
use crate::output::{prepare_out_dir, write_atomic, write_json};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropagateReport {
    pub target: String,
    pub graph_nodes: usize,
    pub graph_edges: usize,
    pub tracks: usize,
    /// Track points per image before pruning.
    pub image_counts: BTreeMap<String, usize>,
    pub kept_images: Vec<String>,
}

/// Loads the match sets listed in a `matches/index.json`.
pub fn read_match_index(path: &Path) -> Result<Vec<MatchSet>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data("propagate", format!("{}: {e}", path.display())))?;
    let entries: Vec<MatchIndexEntry> = serde_json::from_str(&text)
        .map_err(|e| CliError::data("propagate", format!("{}: {e}", path.display())))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    entries
        .iter()
        .map(|e| {
            let csv = dir.join(&e.csv);
            let file = std::fs::File::open(&csv)
                .map_err(|err| CliError::data("propagate", format!("{}: {err}", csv.display())))?;
            let (matches, _) = read_match_csv(file)
                .stage("propagate")
                .map_err(|err| err.context(csv.display()))?;
            Ok(MatchSet {
                image_a: e.image_a.clone(),
                image_b: e.image_b.clone(),
                matches,
                params: MatchParams {
                    lambda: e.lambda,
                    ..MatchParams::default()
                },
                prior: None,
            })
        })
        .collect()
}

/// Builds the keypoint graph, propagates tracks from `target` and prunes
/// sparsely matched images.
pub fn propagate_and_prune(
    sets: &[MatchSet],
    target: &str,
    cfg: &PipelineConfig,
) -> Result<(TrackSet, TrackSet, PropagateReport), CliError> {
    let graph = build_keypoint_graph(sets, cfg.min_pair_matches);
    let tracks = propagate_tracks(&graph, target, cfg.path_cost_max).stage("propagate")?;
    let pruned = prune_images(&tracks, cfg.min_image_matches);
    let image_counts = tracks.image_counts();
    let report = PropagateReport {
        target: target.to_string(),
        graph_nodes: graph.nodes().len(),
        graph_edges: graph.num_edges(),
        tracks: tracks.tracks.len(),
        kept_images: pruned.image_counts().into_keys().collect(),
        image_counts,
    };
    Ok((tracks, pruned, report))
}

pub fn cmd_propagate(
    sets: &[MatchSet],
    target: &str,
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<PropagateReport, CliError> {
    prepare_out_dir(out_dir, cfg)?;
    let (tracks, pruned, report) = propagate_and_prune(sets, target, cfg)?;
    write_atomic(&out_dir.join("tracks.json"), tracks.to_json().as_bytes())?;
    write_atomic(
        &out_dir.join("tracks_pruned.json"),
        pruned.to_json().as_bytes(),
    )?;
    write_json(&out_dir.join("propagate_summary.json"), &report)?;
    Ok(report)
}
