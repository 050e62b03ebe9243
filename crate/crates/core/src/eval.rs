//! PCK, precision-recall and pseudo ground truth from part annotations.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use spade::{DelaunayTriangulation, Triangulation};
use thiserror::Error;

use crate::descriptors::KeypointSet;
use crate::matcher::{LabeledRatio, Match};
use crate::tps::{self, ImageFrame, Point2};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("pseudo ground truth needs at least 3 shared visible parts, got {0}")]
    TooFewParts(usize),
    #[error("part annotations of {0} carry no names")]
    UnnamedParts(String),
    #[error("degenerate triangulation of the parts of {0}")]
    DegenerateTriangulation(String),
    #[error("alpha must be positive")]
    InvalidAlpha,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Annotated,
    Pseudo,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthMatches {
    pub pairs: Vec<(Point2, Point2)>,
    pub provenance: Provenance,
}

/// Source-point lookup tolerance, pixels.
pub const SOURCE_TOLERANCE: f64 = 1e-6;

/// `α · L` with `L` the mean of both image diagonals.
pub fn pck_radius(alpha: f64, frame_a: ImageFrame, frame_b: ImageFrame) -> f64 {
    alpha * 0.5 * (frame_a.diagonal() + frame_b.diagonal())
}

fn gt_index_of(gt: &GroundTruthMatches, a: Point2) -> Option<usize> {
    gt.pairs
        .iter()
        .position(|(s, _)| s.distance(&a) <= SOURCE_TOLERANCE)
}

/// Fraction of ground-truth sources having a prediction within `α·L`
/// (inclusive) of the true target. Sources without prediction count as misses.
pub fn pck(
    matches: &[Match],
    gt: &GroundTruthMatches,
    alpha: f64,
    frame_a: ImageFrame,
    frame_b: ImageFrame,
) -> f64 {
    if gt.pairs.is_empty() {
        return 0.0;
    }
    let radius = pck_radius(alpha, frame_a, frame_b);
    let mut hit = vec![false; gt.pairs.len()];
    for m in matches {
        if let Some(g) = gt_index_of(gt, m.a) {
            if m.b.distance(&gt.pairs[g].1) <= radius {
                hit[g] = true;
            }
        }
    }
    hit.iter().filter(|h| **h).count() as f64 / gt.pairs.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// `(recall, precision)` after each ranked match that has a ground-truth source.
    pub points: Vec<(f64, f64)>,
    pub ap: f64,
    pub alpha: f64,
    pub n_gt: usize,
    pub n_matches: usize,
}

impl PrCurve {
    pub fn final_recall(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.0)
    }
}

/// Walks the ranking; a match whose source is a ground-truth source is a true
/// positive when within `α·L`. Recall counts distinct recalled sources over
/// all ground-truth sources, so the final recall equals PCK at the same `α`.
/// AP is the trapezoidal area starting at `(0, first precision)`.
pub fn pr_curve(
    ranked: &[Match],
    gt: &GroundTruthMatches,
    alpha: f64,
    frame_a: ImageFrame,
    frame_b: ImageFrame,
) -> PrCurve {
    let radius = pck_radius(alpha, frame_a, frame_b);
    let n_gt = gt.pairs.len();
    let mut recalled = vec![false; n_gt];
    let (mut n_recalled, mut tp, mut seen) = (0usize, 0usize, 0usize);
    let mut points = Vec::new();
    for m in ranked {
        let Some(g) = gt_index_of(gt, m.a) else {
            continue;
        };
        seen += 1;
        if m.b.distance(&gt.pairs[g].1) <= radius {
            tp += 1;
            if !recalled[g] {
                recalled[g] = true;
                n_recalled += 1;
            }
        }
        points.push((n_recalled as f64 / n_gt as f64, tp as f64 / seen as f64));
    }
    PrCurve {
        ap: average_precision(&points),
        points,
        alpha,
        n_gt,
        n_matches: ranked.len(),
    }
}

/// Trapezoidal area under `(recall, precision)` points, prefixed by
/// `(0, p₀)`.
pub fn average_precision(points: &[(f64, f64)]) -> f64 {
    let Some(first) = points.first() else {
        return 0.0;
    };
    let mut prev = (0.0, first.1);
    let mut area = 0.0;
    for &p in points {
        area += (p.0 - prev.0) * (p.1 + prev.1) * 0.5;
        prev = p;
    }
    area.clamp(0.0, 1.0)
}

/// Ranked correctness labels for matches with a ground-truth source.
pub fn label_matches(
    ranked: &[Match],
    gt: &GroundTruthMatches,
    alpha: f64,
    frame_a: ImageFrame,
    frame_b: ImageFrame,
) -> Vec<LabeledRatio> {
    let radius = pck_radius(alpha, frame_a, frame_b);
    ranked
        .iter()
        .filter_map(|m| {
            gt_index_of(gt, m.a).map(|g| LabeledRatio {
                ratio: m.ratio,
                correct: m.b.distance(&gt.pairs[g].1) <= radius,
            })
        })
        .collect()
}

/// PCK of the matches that survive a ratio cutoff.
pub fn pck_at_cutoff(
    ranked: &[Match],
    cutoff: f64,
    gt: &GroundTruthMatches,
    alpha: f64,
    frame_a: ImageFrame,
    frame_b: ImageFrame,
) -> f64 {
    let kept: Vec<Match> = ranked
        .iter()
        .filter(|m| m.ratio <= cutoff)
        .copied()
        .collect();
    pck(&kept, gt, alpha, frame_a, frame_b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub ap: f64,
    #[serde(rename = "pck@0.05")]
    pub pck_005: f64,
    #[serde(rename = "pck@0.10")]
    pub pck_010: f64,
    pub n_gt: usize,
    pub n_matches: usize,
}

pub fn summarize(
    ranked: &[Match],
    gt: &GroundTruthMatches,
    alpha: f64,
    frame_a: ImageFrame,
    frame_b: ImageFrame,
) -> EvalSummary {
    let curve = pr_curve(ranked, gt, alpha, frame_a, frame_b);
    EvalSummary {
        ap: curve.ap,
        pck_005: pck(ranked, gt, 0.05, frame_a, frame_b),
        pck_010: pck(ranked, gt, 0.10, frame_a, frame_b),
        n_gt: gt.pairs.len(),
        n_matches: ranked.len(),
    }
}

/// `α` values `0.01, 0.02, …, 0.10`.
pub fn alpha_sweep() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 100.0).collect()
}

/// Delaunay triangulation over shared part labels. Triangles hold indices
/// into `labels`, each triple ascending, and the list is sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct PartTriangulation {
    pub labels: Vec<String>,
    pub vertices: Vec<Point2>,
    pub triangles: Vec<[usize; 3]>,
}

/// Labels visible in both sets, sorted.
pub fn shared_visible_parts(a: &KeypointSet, b: &KeypointSet) -> Result<Vec<String>, EvalError> {
    let na = a
        .names
        .as_ref()
        .ok_or_else(|| EvalError::UnnamedParts(a.image_id.clone()))?;
    if b.names.is_none() {
        return Err(EvalError::UnnamedParts(b.image_id.clone()));
    }
    let mut shared: Vec<String> = na
        .iter()
        .zip(&a.visibility)
        .filter(|(n, v)| **v && b.find(n).is_some())
        .map(|(n, _)| n.clone())
        .collect();
    shared.sort();
    shared.dedup();
    Ok(shared)
}

pub fn triangulate_parts(
    parts: &KeypointSet,
    labels: &[String],
) -> Result<PartTriangulation, EvalError> {
    let degenerate = || EvalError::DegenerateTriangulation(parts.image_id.clone());
    let vertices: Vec<Point2> = labels
        .iter()
        .map(|l| {
            parts
                .find(l)
                .map(|i| parts.points[i])
                .ok_or_else(degenerate)
        })
        .collect::<Result<_, _>>()?;
    let mut dt: DelaunayTriangulation<spade::Point2<f64>> = DelaunayTriangulation::new();
    for p in &vertices {
        dt.insert(spade::Point2::new(p.x, p.y))
            .map_err(|_| degenerate())?;
    }
    if dt.num_vertices() != vertices.len() || dt.num_inner_faces() == 0 {
        return Err(degenerate());
    }
    let mut triangles: Vec<[usize; 3]> = dt
        .inner_faces()
        .map(|f| {
            let mut t = f.vertices().map(|v| v.fix().index());
            t.sort_unstable();
            t
        })
        .collect();
    triangles.sort_unstable();
    Ok(PartTriangulation {
        labels: labels.to_vec(),
        vertices,
        triangles,
    })
}

/// Barycentric coordinates of `p` with respect to `(a, b, c)`.
pub fn barycentric(p: Point2, a: Point2, b: Point2, c: Point2) -> [f64; 3] {
    let det = (b.y - c.y) * (a.x - c.x) + (c.x - b.x) * (a.y - c.y);
    let l1 = ((b.y - c.y) * (p.x - c.x) + (c.x - b.x) * (p.y - c.y)) / det;
    let l2 = ((c.y - a.y) * (p.x - c.x) + (a.x - c.x) * (p.y - c.y)) / det;
    [l1, l2, 1.0 - l1 - l2]
}

const INSIDE_TOLERANCE: f64 = 1e-12;

impl PartTriangulation {
    /// First triangle (in sorted order) containing `p`, with `p`'s barycentric
    /// coordinates in that triangle's vertex order.
    pub fn locate(&self, p: Point2) -> Option<(usize, [f64; 3])> {
        self.triangles.iter().enumerate().find_map(|(t, tri)| {
            let [a, b, c] = tri.map(|i| self.vertices[i]);
            let bc = barycentric(p, a, b, c);
            bc.iter()
                .all(|l| *l >= -INSIDE_TOLERANCE)
                .then_some((t, bc))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoMatch {
    pub a_idx: usize,
    pub b_idx: usize,
    pub distance: f64,
}

pub const DEFAULT_MAX_BARY_DIST: f64 = 0.1;

/// Dense correspondences induced by the shared visible parts: every visible
/// dense A point inside a part triangle is paired with the visible dense B
/// point in the triangle with the same labels whose barycentric coordinates
/// are nearest (L2), if nearer than `max_bary_dist`. Ties go to the lower B
/// index.
pub fn expand_pseudo_gt_detailed(
    parts_a: &KeypointSet,
    parts_b: &KeypointSet,
    dense_a: &KeypointSet,
    dense_b: &KeypointSet,
    max_bary_dist: f64,
) -> Result<Vec<PseudoMatch>, EvalError> {
    let labels = shared_visible_parts(parts_a, parts_b)?;
    if labels.len() < 3 {
        return Err(EvalError::TooFewParts(labels.len()));
    }
    let ta = triangulate_parts(parts_a, &labels)?;
    let tb = triangulate_parts(parts_b, &labels)?;

    let mut buckets: HashMap<[usize; 3], Vec<(usize, [f64; 3])>> = HashMap::new();
    for (j, (p, v)) in dense_b.points.iter().zip(&dense_b.visibility).enumerate() {
        if !*v {
            continue;
        }
        if let Some((t, bc)) = tb.locate(*p) {
            buckets.entry(tb.triangles[t]).or_default().push((j, bc));
        }
    }

    let mut out = Vec::new();
    for (i, (p, v)) in dense_a.points.iter().zip(&dense_a.visibility).enumerate() {
        if !*v {
            continue;
        }
        let Some((t, bc)) = ta.locate(*p) else {
            continue;
        };
        let Some(cands) = buckets.get(&ta.triangles[t]) else {
            continue;
        };
        let mut best: Option<(usize, f64)> = None;
        for (j, bj) in cands {
            let d = bary_distance(&bc, bj);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((*j, d));
            }
        }
        if let Some((j, d)) = best.filter(|(_, d)| *d < max_bary_dist) {
            out.push(PseudoMatch {
                a_idx: i,
                b_idx: j,
                distance: d,
            });
        }
    }
    Ok(out)
}

pub fn bary_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

pub fn expand_pseudo_gt(
    parts_a: &KeypointSet,
    parts_b: &KeypointSet,
    dense_a: &KeypointSet,
    dense_b: &KeypointSet,
    max_bary_dist: f64,
) -> Result<GroundTruthMatches, EvalError> {
    let m = expand_pseudo_gt_detailed(parts_a, parts_b, dense_a, dense_b, max_bary_dist)?;
    Ok(GroundTruthMatches {
        pairs: m
            .iter()
            .map(|m| (dense_a.points[m.a_idx], dense_b.points[m.b_idx]))
            .collect(),
        provenance: Provenance::Pseudo,
    })
}

pub const MIN_SHARED_PARTS: usize = 7;
pub const DEFAULT_ENERGY_PERCENTILE: f64 = 90.0;

/// Part annotations of one test pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedPair {
    pub parts_a: KeypointSet,
    pub parts_b: KeypointSet,
    pub frame_a: ImageFrame,
    pub frame_b: ImageFrame,
}

/// Bending energy of the TPS through the shared visible parts, normalized
/// coordinates.
pub fn annotation_bending_energy(pair: &AnnotatedPair) -> Option<f64> {
    let labels = shared_visible_parts(&pair.parts_a, &pair.parts_b).ok()?;
    let pick = |set: &KeypointSet, frame: ImageFrame| -> Vec<Point2> {
        labels
            .iter()
            .map(|l| frame.to_normalized(set.points[set.find(l).expect("shared label")]))
            .collect()
    };
    let src = pick(&pair.parts_a, pair.frame_a);
    let dst = pick(&pair.parts_b, pair.frame_b);
    let system = tps::build_system(&src).ok()?;
    let warp = tps::solve_coefficients(&system, &dst).ok()?;
    tps::warp_energy(&warp, &system).ok().map(|e| e.bending)
}

/// Indices of pairs with at least [`MIN_SHARED_PARTS`] shared visible parts
/// whose annotation bending energy does not exceed the nearest-rank
/// `percentile` of those energies. Pairs whose TPS cannot be solved are dropped.
pub fn filter_test_pairs(pairs: &[AnnotatedPair], percentile: f64) -> Vec<usize> {
    let candidates: Vec<(usize, f64)> = pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            shared_visible_parts(&p.parts_a, &p.parts_b).is_ok_and(|s| s.len() >= MIN_SHARED_PARTS)
        })
        .filter_map(|(i, p)| match annotation_bending_energy(p) {
            Some(e) => Some((i, e)),
            None => {
                log::warn!("dropping test pair {i}: annotation warp could not be solved");
                None
            }
        })
        .collect();
    if candidates.is_empty() {
        return Vec::new();
    }
    let mut energies: Vec<f64> = candidates.iter().map(|c| c.1).collect();
    energies.sort_by(f64::total_cmp);
    let rank = ((percentile / 100.0) * energies.len() as f64)
        .ceil()
        .max(1.0) as usize;
    let threshold = energies[rank.min(energies.len()) - 1];
    candidates
        .into_iter()
        .filter(|(_, e)| *e <= threshold)
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame() -> ImageFrame {
        ImageFrame::new(100, 100)
    }

    fn m(a: (f64, f64), b: (f64, f64), ratio: f64) -> Match {
        Match {
            a_idx: 0,
            b_idx: 0,
            a: Point2::new(a.0, a.1),
            b: Point2::new(b.0, b.1),
            score: 1.0,
            ratio,
            flags: 0,
        }
    }

    fn gt(n: usize) -> GroundTruthMatches {
        GroundTruthMatches {
            pairs: (0..n)
                .map(|i| (Point2::new(i as f64, 0.0), Point2::new(i as f64, 50.0)))
                .collect(),
            provenance: Provenance::Synthetic,
        }
    }

    #[test]
    fn pck_examples() {
        let g = gt(10);
        let exact: Vec<Match> = g
            .pairs
            .iter()
            .map(|(a, b)| m((a.x, a.y), (b.x, b.y), 0.5))
            .collect();
        assert_eq!(pck(&exact, &g, 0.05, frame(), frame()), 1.0);
        let r = pck_radius(0.05, frame(), frame());
        let off: Vec<Match> = g
            .pairs
            .iter()
            .map(|(a, b)| m((a.x, a.y), (b.x + r + 1e-9, b.y), 0.5))
            .collect();
        assert_eq!(pck(&off, &g, 0.05, frame(), frame()), 0.0);
        let on: Vec<Match> = g
            .pairs
            .iter()
            .map(|(a, b)| m((a.x, a.y), (b.x, b.y + r), 0.5))
            .collect();
        assert_eq!(pck(&on, &g, 0.05, frame(), frame()), 1.0);
        assert_eq!(pck(&exact[..5], &g, 0.05, frame(), frame()), 0.5);
    }

    #[test]
    fn perfect_and_empty_rankings() {
        let g = gt(8);
        let exact: Vec<Match> = g
            .pairs
            .iter()
            .map(|(a, b)| m((a.x, a.y), (b.x, b.y), 0.5))
            .collect();
        let c = pr_curve(&exact, &g, 0.05, frame(), frame());
        assert_eq!(c.ap, 1.0);
        assert!(c.points.iter().all(|p| p.1 == 1.0));
        assert_eq!(pr_curve(&[], &g, 0.05, frame(), frame()).ap, 0.0);
    }

    #[test]
    fn alternating_ranking_has_closed_form_ap() {
        let n = 50;
        let g = gt(n);
        let mut ranked = Vec::new();
        for (a, b) in &g.pairs {
            ranked.push(m((a.x, a.y), (b.x, b.y), 0.1));
            ranked.push(m((a.x, a.y), (b.x + 40.0, b.y), 0.1));
        }
        let c = pr_curve(&ranked, &g, 0.05, frame(), frame());
        let nf = n as f64;
        let expected = 1.0 / nf
            + (2..=n)
                .map(|k| (0.5 + k as f64 / (2 * k - 1) as f64) / (2.0 * nf))
                .sum::<f64>();
        assert!((c.ap - expected).abs() < 1e-12);
        assert!((c.ap - 0.5).abs() < 0.05);
        assert_eq!(c.final_recall(), pck(&ranked, &g, 0.05, frame(), frame()));
    }

    fn parts(id: &str, pts: &[(f64, f64)], labels: &[&str]) -> KeypointSet {
        KeypointSet::with_visibility(
            id,
            pts.iter().map(|&(x, y)| Point2::new(x, y)).collect(),
            vec![true; pts.len()],
            Some(labels.iter().map(|s| s.to_string()).collect()),
        )
        .unwrap()
    }

    fn dense_grid(id: &str, f: impl Fn(f64, f64) -> (f64, f64)) -> KeypointSet {
        let mut pts = Vec::new();
        for j in 0..12 {
            for i in 0..12 {
                let (x, y) = f(5.0 + 8.0 * i as f64, 5.0 + 8.0 * j as f64);
                pts.push(Point2::new(x, y));
            }
        }
        KeypointSet::new(id, pts)
    }

    #[test]
    fn identical_and_affine_layouts_match_to_copies() {
        let labels = ["beak", "tail", "wing", "eye", "foot"];
        let pa = [
            (10.0, 10.0),
            (90.0, 15.0),
            (50.0, 90.0),
            (20.0, 60.0),
            (70.0, 55.0),
        ];
        let a = parts("a", &pa, &labels);
        let da = dense_grid("a", |x, y| (x, y));
        let same = expand_pseudo_gt_detailed(&a, &a, &da, &da, 0.1).unwrap();
        assert!(!same.is_empty());
        assert!(same
            .iter()
            .all(|p| p.a_idx == p.b_idx && p.distance < 1e-12));

        let aff = |x: f64, y: f64| (0.8 * x + 0.2 * y + 7.0, -0.1 * x + 0.9 * y + 3.0);
        let pb: Vec<(f64, f64)> = pa.iter().map(|&(x, y)| aff(x, y)).collect();
        let b = parts("b", &pb, &labels);
        let db = dense_grid("b", aff);
        let matched = expand_pseudo_gt_detailed(&a, &b, &da, &db, 0.1).unwrap();
        assert_eq!(matched.len(), same.len());
        assert!(matched
            .iter()
            .all(|p| p.a_idx == p.b_idx && p.distance < 1e-9));
    }

    #[test]
    fn no_candidate_close_enough_gives_no_match() {
        let labels = ["p", "q", "r"];
        let a = parts("a", &[(0.0, 0.0), (100.0, 0.0), (0.0, 100.0)], &labels);
        let da = KeypointSet::new("a", vec![Point2::new(10.0, 10.0)]);
        let db = KeypointSet::new("b", vec![Point2::new(60.0, 30.0)]);
        assert!(expand_pseudo_gt_detailed(&a, &a, &da, &db, 0.1)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn collinear_or_missing_parts_are_errors() {
        let labels = ["p", "q", "r"];
        let line = parts("l", &[(0.0, 0.0), (10.0, 10.0), (20.0, 20.0)], &labels);
        let d = KeypointSet::new("d", vec![Point2::new(1.0, 1.0)]);
        assert!(matches!(
            expand_pseudo_gt(&line, &line, &d, &d, 0.1),
            Err(EvalError::DegenerateTriangulation(_))
        ));
        let two = parts("t", &[(0.0, 0.0), (10.0, 0.0)], &["p", "q"]);
        assert!(matches!(
            expand_pseudo_gt(&two, &two, &d, &d, 0.1),
            Err(EvalError::TooFewParts(2))
        ));
    }

    #[test]
    fn edge_points_go_to_the_lowest_triangle() {
        let t = triangulate_parts(
            &parts(
                "s",
                &[(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)],
                &["a", "b", "c", "d"],
            ),
            &["a", "b", "c", "d"].map(String::from),
        )
        .unwrap();
        assert_eq!(t.triangles.len(), 2);
        assert_eq!(t.locate(Point2::new(5.0, 5.0)).unwrap().0, 0);
        assert!(t.locate(Point2::new(11.0, 5.0)).is_none());
    }

    fn ring(n: usize, warp: impl Fn(f64, f64) -> (f64, f64)) -> KeypointSet {
        let labels: Vec<String> = (0..n).map(|i| format!("p{i:02}")).collect();
        let pts: Vec<Point2> = (0..n)
            .map(|i| {
                let t = i as f64 / n as f64 * std::f64::consts::TAU;
                let (x, y) = warp(50.0 + 40.0 * t.cos(), 50.0 + 30.0 * t.sin());
                Point2::new(x, y)
            })
            .collect();
        KeypointSet::with_visibility("r", pts, vec![true; n], Some(labels)).unwrap()
    }

    #[test]
    fn filter_drops_occluded_and_high_energy_pairs() {
        let base = ring(8, |x, y| (x, y));
        let mut occluded = base.clone();
        occluded.visibility[0] = false;
        occluded.visibility[1] = false;
        let mut pairs: Vec<AnnotatedPair> = (0..9)
            .map(|i| AnnotatedPair {
                parts_a: base.clone(),
                parts_b: ring(8, |x, y| (x + 0.2 * i as f64 * (y / 10.0).sin(), y)),
                frame_a: frame(),
                frame_b: frame(),
            })
            .collect();
        pairs.push(AnnotatedPair {
            parts_a: base.clone(),
            parts_b: ring(8, |x, y| {
                (x + 25.0 * (y / 6.0).sin(), y + 20.0 * (x / 5.0).cos())
            }),
            frame_a: frame(),
            frame_b: frame(),
        });
        pairs.push(AnnotatedPair {
            parts_a: base.clone(),
            parts_b: occluded,
            frame_a: frame(),
            frame_b: frame(),
        });
        let kept = filter_test_pairs(&pairs, DEFAULT_ENERGY_PERCENTILE);
        assert_eq!(kept, (0..9).collect::<Vec<_>>());
        assert!(annotation_bending_energy(&pairs[0]).unwrap() < 1e-9);
    }
}
