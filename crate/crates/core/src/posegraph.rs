//! k-nearest-neighbour graph over images by global-descriptor cosine distance.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::Mask;

pub const DEFAULT_K: usize = 5;
pub const GLOBAL_DESCRIPTOR_SIDE: u32 = 32;

#[derive(Debug, Error)]
pub enum PoseGraphError {
    #[error("a pose graph needs at least 2 images, got {0}")]
    TooFewNodes(usize),
    #[error("descriptor of {id} has dimension {actual}, expected {expected}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        actual: usize,
    },
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseGraph {
    nodes: Vec<String>,
    adjacency: Vec<BTreeMap<usize, f64>>,
    k: usize,
}

#[derive(Serialize, Deserialize)]
struct PoseGraphJson {
    nodes: Vec<String>,
    edges: Vec<(String, String, f64)>,
    k: usize,
}

/// `1 − cos(a, b)` clamped to `[0, 2]`; a zero vector is orthogonal to everything.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
}

/// Each node links to its `k` nearest others (ties by node order); the edge set
/// is the union of these directed choices.
pub fn build_pose_graph(
    descriptors: &BTreeMap<String, Vec<f64>>,
    k: usize,
) -> Result<PoseGraph, PoseGraphError> {
    if descriptors.len() < 2 {
        return Err(PoseGraphError::TooFewNodes(descriptors.len()));
    }
    if k == 0 {
        return Err(PoseGraphError::InvalidK);
    }
    let nodes: Vec<String> = descriptors.keys().cloned().collect();
    let vectors: Vec<&Vec<f64>> = descriptors.values().collect();
    let dim = vectors[0].len();
    for (id, v) in nodes.iter().zip(&vectors) {
        if v.len() != dim {
            return Err(PoseGraphError::DimensionMismatch {
                id: id.clone(),
                expected: dim,
                actual: v.len(),
            });
        }
    }
    let n = nodes.len();
    let mut adjacency = vec![BTreeMap::new(); n];
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (cosine_distance(vectors[i], vectors[j]), j))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(d, j) in others.iter().take(k) {
            adjacency[i].insert(j, d);
            adjacency[j].insert(i, d);
        }
    }
    Ok(PoseGraph {
        nodes,
        adjacency,
        k,
    })
}

impl PoseGraph {
    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn k(&self) -> usize {
        self.k
    }

    fn index(&self, id: &str) -> Result<usize, PoseGraphError> {
        self.nodes
            .binary_search_by(|n| n.as_str().cmp(id))
            .map_err(|_| PoseGraphError::UnknownNode(id.to_string()))
    }

    /// `(a, b, weight)` with `a < b`, lexicographic.
    pub fn edges(&self) -> Vec<(String, String, f64)> {
        let mut out = Vec::new();
        for (i, nbrs) in self.adjacency.iter().enumerate() {
            for (&j, &w) in nbrs {
                if i < j {
                    out.push((self.nodes[i].clone(), self.nodes[j].clone(), w));
                }
            }
        }
        out
    }

    pub fn neighbors(&self, id: &str) -> Result<Vec<(String, f64)>, PoseGraphError> {
        let i = self.index(id)?;
        Ok(self.adjacency[i]
            .iter()
            .map(|(&j, &w)| (self.nodes[j].clone(), w))
            .collect())
    }

    fn bfs(&self, start: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.nodes.len()];
        dist[start] = Some(0);
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].expect("queued nodes have a distance");
            for &v in self.adjacency[u].keys() {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Unweighted shortest-path length; `None` when unreachable.
    pub fn hop_distance(&self, a: &str, b: &str) -> Result<Option<usize>, PoseGraphError> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        Ok(self.bfs(ia)[ib])
    }

    /// Unordered pairs within `max_hops`, each as `(smaller, larger)`, sorted.
    pub fn pairs_within_hops(&self, max_hops: usize) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for i in 0..self.nodes.len() {
            for (j, d) in self.bfs(i).into_iter().enumerate() {
                if j > i && d.is_some_and(|d| d <= max_hops) {
                    out.push((self.nodes[i].clone(), self.nodes[j].clone()));
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String, PoseGraphError> {
        Ok(serde_json::to_string_pretty(&PoseGraphJson {
            nodes: self.nodes.clone(),
            edges: self.edges(),
            k: self.k,
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self, PoseGraphError> {
        let raw: PoseGraphJson = serde_json::from_str(s)?;
        let mut nodes = raw.nodes;
        nodes.sort();
        nodes.dedup();
        let mut graph = PoseGraph {
            adjacency: vec![BTreeMap::new(); nodes.len()],
            nodes,
            k: raw.k,
        };
        for (a, b, w) in raw.edges {
            let (i, j) = (graph.index(&a)?, graph.index(&b)?);
            if i != j {
                graph.adjacency[i].insert(j, w);
                graph.adjacency[j].insert(i, w);
            }
        }
        Ok(graph)
    }
}

/// Foreground occupancy on a `32 × 32` grid, blurred with a `[1 2 1]/4`
/// kernel in each direction, flattened and unit-normalized.
pub fn mask_global_descriptor(mask: &Mask) -> Vec<f64> {
    let s = GLOBAL_DESCRIPTOR_SIDE as usize;
    let mut sums = vec![0.0; s * s];
    let mut counts = vec![0.0; s * s];
    for y in 0..mask.height() {
        let cy = (y as usize * s) / mask.height() as usize;
        for x in 0..mask.width() {
            let cx = (x as usize * s) / mask.width() as usize;
            counts[cy * s + cx] += 1.0;
            if mask.get(x, y) {
                sums[cy * s + cx] += 1.0;
            }
        }
    }
    let grid: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(a, c)| if *c > 0.0 { a / c } else { 0.0 })
        .collect();
    let blur = |g: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; s * s];
        for y in 0..s {
            for x in 0..s {
                let at = |d: isize| {
                    let (xx, yy) = if horizontal {
                        ((x as isize + d).clamp(0, s as isize - 1) as usize, y)
                    } else {
                        (x, (y as isize + d).clamp(0, s as isize - 1) as usize)
                    };
                    g[yy * s + xx]
                };
                out[y * s + x] = 0.25 * at(-1) + 0.5 * at(0) + 0.25 * at(1);
            }
        }
        out
    };
    let mut v = blur(&blur(&grid, true), false);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn descs(vs: &[(&str, Vec<f64>)]) -> BTreeMap<String, Vec<f64>> {
        vs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    fn path_graph(ids: &[&str]) -> PoseGraph {
        let n = ids.len();
        let mut adjacency = vec![BTreeMap::new(); n];
        for i in 1..n {
            adjacency[i - 1].insert(i, 0.1);
            adjacency[i].insert(i - 1, 0.1);
        }
        PoseGraph {
            nodes: ids.iter().map(|s| s.to_string()).collect(),
            adjacency,
            k: 1,
        }
    }

    #[test]
    fn identical_vectors_form_a_zero_weight_triangle() {
        let g = build_pose_graph(
            &descs(&[
                ("a", vec![1.0, 0.0]),
                ("b", vec![1.0, 0.0]),
                ("c", vec![1.0, 0.0]),
            ]),
            1,
        )
        .unwrap();
        // a→b, b→a, c→a by tie order: edges ab, ac
        assert!(g.edges().iter().all(|e| e.2 == 0.0));
        let g2 = build_pose_graph(
            &descs(&[
                ("a", vec![1.0, 0.0]),
                ("b", vec![1.0, 0.0]),
                ("c", vec![1.0, 0.0]),
            ]),
            2,
        )
        .unwrap();
        assert_eq!(g2.edges().len(), 3);
    }

    #[test]
    fn nearest_neighbours_follow_cosine_order() {
        let rad = |deg: f64| deg.to_radians();
        let g = build_pose_graph(
            &descs(&[
                ("r", vec![1.0, 0.0]),
                ("s", vec![rad(60.0).cos(), rad(60.0).sin()]),
                ("t", vec![-1.0, 0.0]),
                ("u", vec![rad(10.0).cos(), rad(10.0).sin()]),
            ]),
            1,
        )
        .unwrap();
        let r: Vec<_> = g.neighbors("r").unwrap();
        assert_eq!(r[0].0, "u");
        assert!(
            (cosine_distance(&[1.0, 0.0], &[rad(60.0).cos(), rad(60.0).sin()]) - 0.5).abs() < 1e-12
        );
        assert_eq!(cosine_distance(&[1.0, 0.0], &[-1.0, 0.0]), 2.0);
        // t's nearest is s, 120° away
        assert!(g
            .neighbors("t")
            .unwrap()
            .iter()
            .any(|(id, w)| id == "s" && (w - 1.5).abs() < 1e-12));
    }

    #[test]
    fn large_k_gives_complete_graph() {
        let g = build_pose_graph(
            &descs(&[
                ("a", vec![1.0, 0.2]),
                ("b", vec![0.3, 1.0]),
                ("c", vec![-1.0, 0.4]),
                ("d", vec![0.0, -1.0]),
            ]),
            10,
        )
        .unwrap();
        assert_eq!(g.edges().len(), 6);
        assert_eq!(g.pairs_within_hops(1).len(), 6);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            build_pose_graph(&descs(&[("a", vec![1.0])]), 1),
            Err(PoseGraphError::TooFewNodes(1))
        ));
        assert!(matches!(
            build_pose_graph(&descs(&[("a", vec![1.0]), ("b", vec![1.0, 0.0])]), 1),
            Err(PoseGraphError::DimensionMismatch { .. })
        ));
        let g = path_graph(&["a", "b"]);
        assert!(matches!(
            g.hop_distance("a", "z"),
            Err(PoseGraphError::UnknownNode(_))
        ));
    }

    #[test]
    fn hop_distances_on_a_path() {
        let g = path_graph(&["A", "B", "C", "D"]);
        assert_eq!(g.hop_distance("A", "A").unwrap(), Some(0));
        assert_eq!(g.hop_distance("A", "B").unwrap(), Some(1));
        assert_eq!(g.hop_distance("A", "D").unwrap(), Some(3));
        let g3 = path_graph(&["A", "B", "C"]);
        assert_eq!(
            g3.pairs_within_hops(1),
            vec![("A".into(), "B".into()), ("B".into(), "C".into())]
        );
        assert_eq!(g3.pairs_within_hops(2).len(), 3);
    }

    #[test]
    fn json_round_trip() {
        let g = build_pose_graph(
            &descs(&[
                ("a", vec![1.0, 0.2]),
                ("b", vec![0.3, 1.0]),
                ("c", vec![-1.0, 0.4]),
            ]),
            1,
        )
        .unwrap();
        assert_eq!(PoseGraph::from_json(&g.to_json().unwrap()).unwrap(), g);
    }

    #[test]
    fn mask_descriptor_is_unit_norm_and_shape_sensitive() {
        let a = mask_global_descriptor(&Mask::from_fn(64, 48, |x, _| x < 20));
        let b = mask_global_descriptor(&Mask::from_fn(64, 48, |_, y| y < 20));
        assert_eq!(a.len(), 1024);
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(cosine_distance(&a, &b) > 0.2);
    }

    proptest! {
        #[test]
        fn hop_distance_is_a_metric_and_pairs_are_nested(
            vecs in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 3), 3..9),
            k in 1usize..3,
        ) {
            let d: BTreeMap<String, Vec<f64>> = vecs.into_iter().enumerate().map(|(i, v)| (format!("n{i}"), v)).collect();
            let g = build_pose_graph(&d, k).unwrap();
            let ids = g.nodes().to_vec();
            for a in &ids {
                for b in &ids {
                    let ab = g.hop_distance(a, b).unwrap();
                    prop_assert_eq!(ab, g.hop_distance(b, a).unwrap());
                    for c in &ids {
                        if let (Some(ab), Some(bc), Some(ac)) = (ab, g.hop_distance(b, c).unwrap(), g.hop_distance(a, c).unwrap()) {
                            prop_assert!(ac <= ab + bc);
                        }
                    }
                }
            }
            for e in g.edges() {
                prop_assert!((0.0..=2.0).contains(&e.2));
                prop_assert!(e.0 != e.1);
            }
            for h in 1..4 {
                let small = g.pairs_within_hops(h);
                let big = g.pairs_within_hops(h + 1);
                prop_assert!(small.iter().all(|p| big.contains(p)));
            }
        }
    }
}
