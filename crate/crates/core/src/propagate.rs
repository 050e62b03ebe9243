//! Keypoint graph over pairwise matches and shortest-path track propagation.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use rayon::prelude::*;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::matcher::MatchSet;
use crate::tps::Point2;

pub const DEFAULT_MIN_PAIR_MATCHES: usize = 50;
pub const DEFAULT_MAX_PATH_COST: f64 = 0.4;
pub const DEFAULT_MIN_IMAGE_MATCHES: usize = 30;

#[derive(Debug, Error)]
pub enum PropagateError {
    #[error("target image {0} has no keypoints in the graph")]
    UnknownTarget(String),
    #[error("subset selection: {0}")]
    UnknownHeuristicInput(String),
    #[error("track file: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Node = `(image id, keypoint index)`; nodes are kept sorted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KeypointGraph {
    nodes: Vec<(String, usize)>,
    positions: Vec<Point2>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

/// `1 − score/(1 + λ)`, clamped to `[0, 1]`.
pub fn edge_cost(score: f64, lambda: f64) -> f64 {
    (1.0 - score / (1.0 + lambda)).clamp(0.0, 1.0)
}

/// Image pairs with fewer than `min_matches` matches are ignored; the rest
/// contribute one edge per match. Duplicate edges keep the cheaper cost.
pub fn build_keypoint_graph(pairwise: &[MatchSet], min_matches: usize) -> KeypointGraph {
    let mut positions: BTreeMap<(String, usize), Point2> = BTreeMap::new();
    let mut edges: HashMap<((String, usize), (String, usize)), f64> = HashMap::new();
    for set in pairwise.iter().filter(|s| s.len() >= min_matches) {
        for m in &set.matches {
            let a = (set.image_a.clone(), m.a_idx);
            let b = (set.image_b.clone(), m.b_idx);
            if a == b {
                continue;
            }
            positions.entry(a.clone()).or_insert(m.a);
            positions.entry(b.clone()).or_insert(m.b);
            let cost = edge_cost(m.score, set.params.lambda);
            let key = if a < b { (a, b) } else { (b, a) };
            edges
                .entry(key)
                .and_modify(|c| *c = c.min(cost))
                .or_insert(cost);
        }
    }
    let nodes: Vec<(String, usize)> = positions.keys().cloned().collect();
    let index: HashMap<&(String, usize), usize> =
        nodes.iter().enumerate().map(|(i, n)| (n, i)).collect();
    let mut adjacency = vec![Vec::new(); nodes.len()];
    for ((a, b), c) in &edges {
        let (i, j) = (index[a], index[b]);
        adjacency[i].push((j, *c));
        adjacency[j].push((i, *c));
    }
    adjacency.iter_mut().for_each(|v| v.sort_by_key(|p| p.0));
    KeypointGraph {
        positions: positions.into_values().collect(),
        nodes,
        adjacency,
    }
}

impl KeypointGraph {
    pub fn nodes(&self) -> &[(String, usize)] {
        &self.nodes
    }

    pub fn position(&self, node: usize) -> Point2 {
        self.positions[node]
    }

    pub fn neighbors(&self, node: usize) -> &[(usize, f64)] {
        &self.adjacency[node]
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_index(&self, image: &str, keypoint: usize) -> Option<usize> {
        self.nodes
            .binary_search_by(|(i, k)| i.as_str().cmp(image).then(k.cmp(&keypoint)))
            .ok()
    }

    /// Single-source shortest path costs (`∞` when unreachable).
    pub fn shortest_paths(&self, source: usize) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.nodes.len()];
        dist[source] = 0.0;
        let mut heap = BinaryHeap::from([HeapItem {
            cost: 0.0,
            node: source,
        }]);
        while let Some(HeapItem { cost, node }) = heap.pop() {
            if cost > dist[node] {
                continue;
            }
            for &(next, w) in &self.adjacency[node] {
                let c = cost + w;
                if c < dist[next] {
                    dist[next] = c;
                    heap.push(HeapItem {
                        cost: c,
                        node: next,
                    });
                }
            }
        }
        dist
    }
}

#[derive(PartialEq)]
struct HeapItem {
    cost: f64,
    node: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub keypoint: usize,
    pub point: Point2,
    pub cost: f64,
}

/// Tracks keyed by target keypoint index, then image id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackSet {
    pub target_image: String,
    pub tracks: BTreeMap<usize, BTreeMap<String, TrackPoint>>,
}

impl TrackSet {
    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    /// Track points per image.
    pub fn image_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for t in self.tracks.values() {
            for img in t.keys() {
                *counts.entry(img.clone()).or_insert(0) += 1;
            }
        }
        counts
    }

    /// `{track_id: {image_id: [x, y, cost]}}`.
    pub fn to_json(&self) -> String {
        let mut root = Map::new();
        for (t, imgs) in &self.tracks {
            let inner: Map<String, Value> = imgs
                .iter()
                .map(|(img, p)| (img.clone(), json!([p.point.x, p.point.y, p.cost])))
                .collect();
            root.insert(t.to_string(), Value::Object(inner));
        }
        serde_json::to_string_pretty(&Value::Object(root)).expect("json values serialize")
    }

    /// Inverse of [`TrackSet::to_json`]; keypoint indices are not stored and
    /// read back as the track id for the target and 0 elsewhere.
    pub fn from_json(target_image: &str, s: &str) -> Result<Self, PropagateError> {
        let root: BTreeMap<String, BTreeMap<String, [f64; 3]>> = serde_json::from_str(s)?;
        let mut tracks = BTreeMap::new();
        for (t, imgs) in root {
            let id: usize = t
                .parse()
                .map_err(|_| PropagateError::Format(format!("track id {t}")))?;
            let pts = imgs
                .into_iter()
                .map(|(img, [x, y, cost])| {
                    let keypoint = if img == target_image { id } else { 0 };
                    (
                        img,
                        TrackPoint {
                            keypoint,
                            point: Point2::new(x, y),
                            cost,
                        },
                    )
                })
                .collect();
            tracks.insert(id, pts);
        }
        Ok(Self {
            target_image: target_image.to_string(),
            tracks,
        })
    }
}

/// Shortest paths from every target keypoint. Each other image contributes
/// its cheapest reachable keypoint (ties by keypoint index) when the path
/// cost is at most `max_path_cost`.
pub fn propagate_tracks(
    g: &KeypointGraph,
    target: &str,
    max_path_cost: f64,
) -> Result<TrackSet, PropagateError> {
    let sources: Vec<usize> = (0..g.nodes.len())
        .filter(|&i| g.nodes[i].0 == target)
        .collect();
    if sources.is_empty() {
        return Err(PropagateError::UnknownTarget(target.to_string()));
    }
    let tracks: Vec<(usize, BTreeMap<String, TrackPoint>)> = sources
        .par_iter()
        .map(|&s| {
            let dist = g.shortest_paths(s);
            let mut track: BTreeMap<String, TrackPoint> = BTreeMap::new();
            track.insert(
                target.to_string(),
                TrackPoint {
                    keypoint: g.nodes[s].1,
                    point: g.positions[s],
                    cost: 0.0,
                },
            );
            // nodes are sorted by (image, keypoint), so the first minimum wins ties
            for (n, d) in dist.iter().enumerate() {
                let (img, kp) = &g.nodes[n];
                if img == target || *d > max_path_cost {
                    continue;
                }
                let better = track.get(img).is_none_or(|cur| *d < cur.cost);
                if better {
                    track.insert(
                        img.clone(),
                        TrackPoint {
                            keypoint: *kp,
                            point: g.positions[n],
                            cost: *d,
                        },
                    );
                }
            }
            (g.nodes[s].1, track)
        })
        .collect();
    Ok(TrackSet {
        target_image: target.to_string(),
        tracks: tracks.into_iter().collect(),
    })
}

/// Drops non-target images holding fewer than `min_matches_per_image` track
/// points. Tracks left with only the target are kept.
pub fn prune_images(tracks: &TrackSet, min_matches_per_image: usize) -> TrackSet {
    let counts = tracks.image_counts();
    let keep = |img: &str| {
        img == tracks.target_image || counts.get(img).is_some_and(|c| *c >= min_matches_per_image)
    };
    TrackSet {
        target_image: tracks.target_image.clone(),
        tracks: tracks
            .tracks
            .iter()
            .map(|(t, imgs)| {
                (
                    *t,
                    imgs.iter()
                        .filter(|(i, _)| keep(i))
                        .map(|(i, p)| (i.clone(), *p))
                        .collect(),
                )
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SubsetHeuristic {
    /// Images whose group label contains the keyword.
    KeywordGroup(String),
    /// The target's group plus groups adjacent to it in the adjacency list.
    NeighborGroups(BTreeMap<String, Vec<String>>),
    ExplicitList(Vec<String>),
}

/// `records` are `(image_id, group_label)` pairs in manifest order; the
/// result keeps that order.
pub fn select_subset(
    records: &[(String, String)],
    target: &str,
    heuristic: &SubsetHeuristic,
) -> Result<Vec<String>, PropagateError> {
    let out: Vec<String> = match heuristic {
        SubsetHeuristic::ExplicitList(list) => return Ok(list.clone()),
        SubsetHeuristic::KeywordGroup(kw) => records
            .iter()
            .filter(|(_, g)| g.contains(kw.as_str()))
            .map(|(i, _)| i.clone())
            .collect(),
        SubsetHeuristic::NeighborGroups(adj) => {
            let group = records
                .iter()
                .find(|(i, _)| i == target)
                .map(|(_, g)| g.clone())
                .ok_or_else(|| {
                    PropagateError::UnknownHeuristicInput(format!(
                        "target {target} not in manifest"
                    ))
                })?;
            let nbrs = adj.get(&group).ok_or_else(|| {
                PropagateError::UnknownHeuristicInput(format!(
                    "group {group} not in adjacency file"
                ))
            })?;
            records
                .iter()
                .filter(|(_, g)| *g == group || nbrs.contains(g))
                .map(|(i, _)| i.clone())
                .collect()
        }
    };
    if out.is_empty() {
        log::warn!("subset selection for {target} matched no images");
    }
    Ok(out)
}
