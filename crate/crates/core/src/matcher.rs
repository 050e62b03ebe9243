//! Appearance plus warp-prior match scoring, ratio ranking and precision
//! cutoffs.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptors::{appearance_distance, DescriptorSet};
use crate::tps::{ImageFrame, Point2, TpsWarp};

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("descriptor dimension mismatch: {a} vs {b}")]
    DimensionMismatch { a: usize, b: usize },
    #[error("no keypoints in image {0}")]
    EmptyKeypoints(String),
    #[error("invalid match parameters: {0}")]
    InvalidParams(String),
    #[error("precision {target} is never reached (best {best})")]
    UnattainablePrecision { target: f64, best: f64 },
    #[error("match csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchParams {
    pub sigma_f: f64,
    pub sigma_w: f64,
    pub lambda: f64,
    pub min_second_nn_px: f64,
    pub precision_threshold: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            sigma_f: 1.75,
            sigma_w: 18.0,
            lambda: 0.3,
            min_second_nn_px: 10.0,
            precision_threshold: 0.85,
        }
    }
}

impl MatchParams {
    pub fn validate(&self) -> Result<(), MatchError> {
        if !(self.sigma_f > 0.0 && self.sigma_w > 0.0) {
            return Err(MatchError::InvalidParams(
                "sigma_f and sigma_w must be positive".into(),
            ));
        }
        if !(self.lambda >= 0.0) {
            return Err(MatchError::InvalidParams(
                "lambda must be nonnegative".into(),
            ));
        }
        if !(self.min_second_nn_px >= 0.0) {
            return Err(MatchError::InvalidParams(
                "min_second_nn_px must be nonnegative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.precision_threshold) {
            return Err(MatchError::InvalidParams(
                "precision_threshold must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Largest attainable score, `1 + λ`.
    pub fn max_score(&self) -> f64 {
        1.0 + self.lambda
    }
}

/// Warps between two images in normalized coordinates, one per direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpPrior {
    /// Sends normalized A coordinates to B.
    pub a_to_b: TpsWarp,
    /// Sends normalized B coordinates to A.
    pub b_to_a: TpsWarp,
    pub frame_a: ImageFrame,
    pub frame_b: ImageFrame,
}

impl WarpPrior {
    pub fn b_to_a_px(&self, v: Point2) -> Point2 {
        self.frame_a
            .to_pixel(self.b_to_a.apply(self.frame_b.to_normalized(v)))
    }

    pub fn a_to_b_px(&self, u: Point2) -> Point2 {
        self.frame_b
            .to_pixel(self.a_to_b.apply(self.frame_a.to_normalized(u)))
    }
}

/// `½(‖u − T_{b→a}(v)‖ + ‖v − T_{a→b}(u)‖)` in pixels.
pub fn warp_distance(u: Point2, v: Point2, prior: &WarpPrior) -> f64 {
    0.5 * (u.distance(&prior.b_to_a_px(v)) + v.distance(&prior.a_to_b_px(u)))
}

/// `exp(−d_f/σ_f) + λ·exp(−d_w/σ_w)`.
pub fn match_score(d_f: f64, d_w: f64, params: &MatchParams) -> f64 {
    (-d_f / params.sigma_f).exp() + params.lambda * (-d_w / params.sigma_w).exp()
}

/// Set when no competitor lies at least `min_second_nn_px` from the best
/// candidate; such matches get ratio 0.
pub const NO_SECOND_NN: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub a_idx: usize,
    pub b_idx: usize,
    pub a: Point2,
    pub b: Point2,
    pub score: f64,
    pub ratio: f64,
    pub flags: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchSet {
    pub image_a: String,
    pub image_b: String,
    /// Ascending ratio.
    pub matches: Vec<Match>,
    pub params: MatchParams,
    pub prior: Option<WarpPrior>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    /// Keeps matches with `ratio ≤ cutoff`.
    pub fn truncated(&self, cutoff: f64) -> MatchSet {
        MatchSet {
            matches: self
                .matches
                .iter()
                .filter(|m| m.ratio <= cutoff)
                .copied()
                .collect(),
            ..self.clone()
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), MatchError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "a_idx", "b_idx", "a_x", "a_y", "b_x", "b_y", "score", "ratio", "flags",
        ])?;
        for m in &self.matches {
            out.write_record([
                m.a_idx.to_string(),
                m.b_idx.to_string(),
                m.a.x.to_string(),
                m.a.y.to_string(),
                m.b.x.to_string(),
                m.b.y.to_string(),
                m.score.to_string(),
                m.ratio.to_string(),
                m.flags.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

/// Which column an external match file was ranked by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankedBy {
    Ratio,
    Cost,
}

/// Reads a match CSV with at least `a_x, a_y, b_x, b_y` and one of `ratio`
/// or `cost` (ratio preferred). Rows are stably sorted ascending by that
/// column; missing index columns default to the row number.
pub fn read_match_csv<R: Read>(r: R) -> Result<(Vec<Match>, RankedBy), MatchError> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let need = |name: &str| {
        col(name).ok_or_else(|| MatchError::InvalidParams(format!("match csv lacks column {name}")))
    };
    let (ax, ay, bx, by) = (need("a_x")?, need("a_y")?, need("b_x")?, need("b_y")?);
    let (rank_col, ranked_by) = match (col("ratio"), col("cost")) {
        (Some(c), _) => (c, RankedBy::Ratio),
        (None, Some(c)) => (c, RankedBy::Cost),
        _ => {
            return Err(MatchError::InvalidParams(
                "match csv needs a ratio or cost column".into(),
            ))
        }
    };
    let (ai, bi, sc, fl) = (col("a_idx"), col("b_idx"), col("score"), col("flags"));
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| -> Result<f64, MatchError> {
            rec.get(c)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| {
                    MatchError::InvalidParams(format!("row {row}: bad value in column {c}"))
                })
        };
        out.push(Match {
            a_idx: ai.map(num).transpose()?.map_or(row, |v| v as usize),
            b_idx: bi.map(num).transpose()?.map_or(row, |v| v as usize),
            a: Point2::new(num(ax)?, num(ay)?),
            b: Point2::new(num(bx)?, num(by)?),
            score: sc.map(num).transpose()?.unwrap_or(f64::NAN),
            ratio: num(rank_col)?,
            flags: fl.map(num).transpose()?.map_or(0, |v| v as u32),
        });
    }
    out.sort_by(|p, q| p.ratio.total_cmp(&q.ratio));
    Ok((out, ranked_by))
}

/// Best-scoring B keypoint for every visible A keypoint, ranked by the ratio of
/// the best competitor at least `min_second_nn_px` from the best match to the
/// best score. Without a prior (or with `λ = 0`) only appearance is scored.
pub fn match_images(
    desc_a: &DescriptorSet,
    desc_b: &DescriptorSet,
    prior: Option<&WarpPrior>,
    params: &MatchParams,
) -> Result<MatchSet, MatchError> {
    params.validate()?;
    if desc_a.dim() != desc_b.dim() {
        return Err(MatchError::DimensionMismatch {
            a: desc_a.dim(),
            b: desc_b.dim(),
        });
    }
    if desc_a.is_empty() {
        return Err(MatchError::EmptyKeypoints(
            desc_a.keypoints.image_id.clone(),
        ));
    }
    if desc_b.is_empty() {
        return Err(MatchError::EmptyKeypoints(
            desc_b.keypoints.image_id.clone(),
        ));
    }
    let spatial = prior.filter(|_| params.lambda != 0.0);
    let kb = &desc_b.keypoints;
    let candidates: Vec<usize> = (0..kb.len()).filter(|&j| kb.visibility[j]).collect();
    let ka = &desc_a.keypoints;
    let sources: Vec<usize> = (0..ka.len()).filter(|&i| ka.visibility[i]).collect();

    let per_source: Vec<Option<Match>> = sources
        .par_iter()
        .map(|&i| {
            let u = ka.points[i];
            let scores: Vec<f64> = candidates
                .iter()
                .map(|&j| {
                    let d_f = appearance_distance(desc_a.row(i), desc_b.row(j))
                        .expect("dimensions checked");
                    match spatial {
                        Some(p) => match_score(d_f, warp_distance(u, kb.points[j], p), params),
                        None => (-d_f / params.sigma_f).exp(),
                    }
                })
                .collect();
            let mut best: Option<usize> = None;
            for (c, s) in scores.iter().enumerate() {
                if best.is_none_or(|b| *s > scores[b]) {
                    best = Some(c);
                }
            }
            let best = best?;
            let best_pt = kb.points[candidates[best]];
            let mut second: Option<f64> = None;
            for (c, s) in scores.iter().enumerate() {
                if c != best
                    && kb.points[candidates[c]].distance(&best_pt) >= params.min_second_nn_px
                {
                    second = Some(second.map_or(*s, |t: f64| t.max(*s)));
                }
            }
            let (ratio, flags) = match second {
                Some(s) => (s / scores[best], 0),
                None => (0.0, NO_SECOND_NN),
            };
            Some(Match {
                a_idx: i,
                b_idx: candidates[best],
                a: u,
                b: best_pt,
                score: scores[best],
                ratio,
                flags,
            })
        })
        .collect();

    let mut matches: Vec<Match> = per_source.into_iter().flatten().collect();
    matches.sort_by(|p, q| p.ratio.total_cmp(&q.ratio));
    Ok(MatchSet {
        image_a: ka.image_id.clone(),
        image_b: kb.image_id.clone(),
        matches,
        params: *params,
        prior: prior.cloned(),
    })
}

/// One ranked prediction with its correctness label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledRatio {
    pub ratio: f64,
    pub correct: bool,
}

/// Ratio cutoff keeping the longest ranking prefix whose precision is at least
/// `target`. When a longer prefix falls below the target the cutoff is
/// interpolated linearly in precision between the last passing ratio and the
/// next one. A ranking that never fails returns its largest ratio.
pub fn threshold_at_precision(ranked: &[LabeledRatio], target: f64) -> Result<f64, MatchError> {
    let mut tp = 0usize;
    let precisions: Vec<f64> = ranked
        .iter()
        .enumerate()
        .map(|(i, m)| {
            tp += m.correct as usize;
            tp as f64 / (i + 1) as f64
        })
        .collect();
    let last_ok = precisions.iter().rposition(|p| *p >= target);
    let Some(i) = last_ok else {
        return Err(MatchError::UnattainablePrecision {
            target,
            best: precisions.iter().copied().fold(0.0, f64::max),
        });
    };
    if i + 1 == ranked.len() {
        return Ok(ranked[i].ratio);
    }
    let (p0, p1) = (precisions[i], precisions[i + 1]);
    let (r0, r1) = (ranked[i].ratio, ranked[i + 1].ratio);
    let t = if p0 > p1 {
        (p0 - target) / (p0 - p1)
    } else {
        0.0
    };
    let cutoff = r0 + t.clamp(0.0, 1.0) * (r1 - r0);
    // The next match must stay excluded.
    Ok(if cutoff >= r1 && r1 > r0 { r0 } else { cutoff })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::KeypointSet;
    use crate::tps::regular_grid;

    fn set(id: &str, pts: &[(f64, f64)], rows: &[[f32; 2]]) -> DescriptorSet {
        let kp = KeypointSet::new(id, pts.iter().map(|&(x, y)| Point2::new(x, y)).collect());
        DescriptorSet::from_rows(kp, "t", 2, rows.iter().flatten().copied().collect()).unwrap()
    }

    fn identity_prior(w: u32, h: u32) -> WarpPrior {
        let g = regular_grid(3);
        WarpPrior {
            a_to_b: TpsWarp::identity(&g),
            b_to_a: TpsWarp::identity(&g),
            frame_a: ImageFrame::new(w, h),
            frame_b: ImageFrame::new(w, h),
        }
    }

    #[test]
    fn warp_distance_examples() {
        let p = identity_prior(100, 80);
        let u = Point2::new(20.0, 30.0);
        assert!(warp_distance(u, u, &p) < 1e-12);
        assert!((warp_distance(u, Point2::new(23.0, 34.0), &p) - 5.0).abs() < 1e-12);
        let g = regular_grid(3);
        let frame = ImageFrame::new(100, 80);
        // a 10 px shift right in both frames is 0.2 normalized units
        let shift = 2.0 * 10.0 / 100.0;
        let t = WarpPrior {
            a_to_b: TpsWarp::affine(&g, [[1.0, 0.0], [0.0, 1.0]], [shift, 0.0]),
            b_to_a: TpsWarp::affine(&g, [[1.0, 0.0], [0.0, 1.0]], [-shift, 0.0]),
            frame_a: frame,
            frame_b: frame,
        };
        assert!(warp_distance(u, Point2::new(30.0, 30.0), &t) < 1e-9);
    }

    #[test]
    fn score_examples() {
        let p = MatchParams::default();
        assert!((match_score(0.0, 0.0, &p) - 1.3).abs() < 1e-15);
        assert_eq!(match_score(f64::INFINITY, f64::INFINITY, &p), 0.0);
        let expected = (-1.0f64).exp() * 1.3;
        assert!((match_score(1.75, 18.0, &p) - expected).abs() < 1e-15);
        assert!((expected - 0.478_25).abs() < 1e-5);
    }

    #[test]
    fn equal_candidates_far_apart_are_ambiguous() {
        let a = set("a", &[(5.0, 5.0)], &[[1.0, 0.0]]);
        let b = set("b", &[(5.0, 5.0), (25.0, 5.0)], &[[1.0, 0.0], [1.0, 0.0]]);
        let m = match_images(&a, &b, None, &MatchParams::default()).unwrap();
        assert_eq!(m.matches[0].b_idx, 0);
        assert_eq!(m.matches[0].ratio, 1.0);
        assert_eq!(m.matches[0].flags, 0);
    }

    #[test]
    fn close_competitors_only_give_flagged_zero_ratio() {
        let a = set("a", &[(5.0, 5.0)], &[[1.0, 0.0]]);
        let b = set("b", &[(5.0, 5.0), (10.0, 5.0)], &[[1.0, 0.0], [1.0, 0.0]]);
        let m = match_images(&a, &b, None, &MatchParams::default()).unwrap();
        assert_eq!(m.matches[0].ratio, 0.0);
        assert_eq!(m.matches[0].flags, NO_SECOND_NN);
    }

    #[test]
    fn exact_copies_rank_first() {
        let rows_a = [[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]];
        let pts_a = [(10.0, 10.0), (40.0, 10.0), (25.0, 40.0)];
        let mut pts_b = pts_a.to_vec();
        let mut rows_b = rows_a.to_vec();
        pts_b.extend([(60.0, 60.0), (5.0, 70.0)]);
        rows_b.extend([[-0.6, 0.8], [-1.0, 0.0]]);
        let a = set("a", &pts_a, &rows_a);
        let b = set("b", &pts_b, &rows_b);
        let m = match_images(
            &a,
            &b,
            Some(&identity_prior(80, 80)),
            &MatchParams::default(),
        )
        .unwrap();
        assert_eq!(m.len(), 3);
        for x in &m.matches {
            assert_eq!(x.a_idx, x.b_idx);
            assert!(x.ratio < 1.0);
        }
        assert!(m.matches.windows(2).all(|w| w[0].ratio <= w[1].ratio));
    }

    #[test]
    fn lambda_zero_ignores_prior() {
        let a = set("a", &[(1.0, 1.0), (30.0, 2.0)], &[[1.0, 0.0], [0.0, 1.0]]);
        let b = set(
            "b",
            &[(50.0, 50.0), (3.0, 40.0), (20.0, 20.0)],
            &[[0.8, 0.6], [0.0, 1.0], [1.0, 0.0]],
        );
        let p = MatchParams {
            lambda: 0.0,
            ..MatchParams::default()
        };
        let with = match_images(&a, &b, Some(&identity_prior(64, 64)), &p).unwrap();
        let without = match_images(&a, &b, None, &p).unwrap();
        assert_eq!(with.to_csv_string(), without.to_csv_string());
    }

    #[test]
    fn dimension_mismatch() {
        let a = set("a", &[(1.0, 1.0)], &[[1.0, 0.0]]);
        let kp = KeypointSet::new("b", vec![Point2::new(1.0, 1.0)]);
        let b = DescriptorSet::from_rows(kp, "t", 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            match_images(&a, &b, None, &MatchParams::default()),
            Err(MatchError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn csv_round_trip_keeps_ranking() {
        let a = set("a", &[(1.0, 1.0), (30.5, 2.25)], &[[1.0, 0.0], [0.0, 1.0]]);
        let b = set(
            "b",
            &[(50.0, 50.0), (3.0, 40.0), (20.0, 20.0)],
            &[[0.8, 0.6], [0.0, 1.0], [1.0, 0.0]],
        );
        let m = match_images(&a, &b, None, &MatchParams::default()).unwrap();
        let (back, by) = read_match_csv(m.to_csv_string().as_bytes()).unwrap();
        assert_eq!(by, RankedBy::Ratio);
        assert_eq!(back, m.matches);
        let (cost, by) =
            read_match_csv("a_x,a_y,b_x,b_y,cost\n0,0,1,1,5\n2,2,3,3,1\n".as_bytes()).unwrap();
        assert_eq!(by, RankedBy::Cost);
        assert_eq!(cost[0].a, Point2::new(2.0, 2.0));
    }

    fn labeled(v: &[(f64, bool)]) -> Vec<LabeledRatio> {
        v.iter()
            .map(|&(ratio, correct)| LabeledRatio { ratio, correct })
            .collect()
    }

    #[test]
    fn threshold_examples() {
        let all = labeled(&[(0.1, true), (0.3, true), (0.9, true)]);
        assert_eq!(threshold_at_precision(&all, 0.85).unwrap(), 0.9);
        let mut v: Vec<(f64, bool)> = (1..=17).map(|i| (i as f64 * 0.6 / 17.0, true)).collect();
        v.extend([(0.6, false), (0.6, false), (0.6, false)]);
        let r = labeled(&v);
        // precision reaches 17/20 = 0.85 at the last entry, ratio 0.6
        assert!((threshold_at_precision(&r, 0.85).unwrap() - 0.6).abs() < 1e-12);
        let bad = labeled(&[(0.1, false), (0.2, true), (0.3, false)]);
        assert!(matches!(
            threshold_at_precision(&bad, 0.85),
            Err(MatchError::UnattainablePrecision { .. })
        ));
    }

    #[test]
    fn threshold_interpolates_between_ranks() {
        // precisions: 1, 1, 2/3 → 0.85 lies (1 − .85)/(1 − 2/3) = 0.45 of the way
        let r = labeled(&[(0.2, true), (0.4, true), (0.6, false)]);
        let c = threshold_at_precision(&r, 0.85).unwrap();
        assert!((c - (0.4 + 0.45 * 0.2)).abs() < 1e-12);
        assert!(c < 0.6);
    }
}
