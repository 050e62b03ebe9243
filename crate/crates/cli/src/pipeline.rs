//! Building blocks shared by the subcommands: keypoints, descriptors, warp
//! priors and synthetic ground truth.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use warpmatch::descriptors::{extract, sample_foreground_grid, DescriptorSet, KeypointSet};
use warpmatch::eval::{GroundTruthMatches, Provenance};
use warpmatch::matcher::{match_images, Match, MatchSet, WarpPrior};
use warpmatch::raster::{to_gray, Mask, RgbImageF};
use warpmatch::tps::{fit_grid_to_correspondences, solve_warp, ImageFrame, Point2, TpsWarp};

use crate::config::PipelineConfig;
use crate::error::{CliError, Staged};

/// Where the spatial prior for a pair comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WarpSource {
    /// No prior (`λ` treated as 0).
    Appearance,
    /// The warp that generated a synthetic pair.
    TrueWarp,
    /// Grids fit to the best-ranked appearance-only matches.
    Seeded,
    /// Exact TPS through known correspondences or shared annotated parts.
    Annotation,
    /// Imported `ControlGrid` JSON files, one per pair, mapping A to B.
    Grids(PathBuf),
}

/// Ground truth plus both image frames, as stored next to match files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtFile {
    pub frame_a: ImageFrame,
    pub frame_b: ImageFrame,
    pub gt: GroundTruthMatches,
}

pub fn grid_keypoints(image_id: &str, mask: &Mask, stride: u32) -> KeypointSet {
    let mut kp = sample_foreground_grid(mask, stride);
    kp.image_id = image_id.to_string();
    kp
}

pub fn describe(
    image: &RgbImageF,
    keypoints: &KeypointSet,
    cfg: &PipelineConfig,
) -> Result<DescriptorSet, CliError> {
    extract(&to_gray(image), keypoints, &cfg.extractor()).stage("descriptors")
}

/// Best-ranked `fraction` of an ascending-ratio match list (at least one).
pub fn seed_matches(ranked: &[Match], fraction: f64) -> &[Match] {
    let n =
        ((fraction * ranked.len() as f64).ceil() as usize).clamp(1.min(ranked.len()), ranked.len());
    &ranked[..n]
}

fn normalized(points: impl Iterator<Item = Point2>, frame: ImageFrame) -> Vec<Point2> {
    points.map(|p| frame.to_normalized(p)).collect()
}

/// Fits a grid in each direction to the seed matches. Returns `None` when
/// fewer than three seeds are available.
pub fn fitted_prior(
    seeds: &[Match],
    frame_a: ImageFrame,
    frame_b: ImageFrame,
    cfg: &PipelineConfig,
) -> Result<Option<WarpPrior>, CliError> {
    if seeds.len() < 3 {
        return Ok(None);
    }
    let a = normalized(seeds.iter().map(|m| m.a), frame_a);
    let b = normalized(seeds.iter().map(|m| m.b), frame_b);
    let opts = cfg.grid_fit();
    let a_to_b = fit_grid_to_correspondences(&a, &b, &opts)
        .stage("fitgrid")?
        .grid
        .warp()
        .stage("fitgrid")?;
    let b_to_a = fit_grid_to_correspondences(&b, &a, &opts)
        .stage("fitgrid")?
        .grid
        .warp()
        .stage("fitgrid")?;
    Ok(Some(WarpPrior {
        a_to_b,
        b_to_a,
        frame_a,
        frame_b,
    }))
}

/// Exact TPS through pixel correspondences, in both directions.
pub fn exact_prior(
    a: &[Point2],
    b: &[Point2],
    frame_a: ImageFrame,
    frame_b: ImageFrame,
) -> Result<WarpPrior, CliError> {
    let na = normalized(a.iter().copied(), frame_a);
    let nb = normalized(b.iter().copied(), frame_b);
    Ok(WarpPrior {
        a_to_b: solve_warp(&na, &nb).stage("prior")?,
        b_to_a: solve_warp(&nb, &na).stage("prior")?,
        frame_a,
        frame_b,
    })
}

/// Appearance-only ranking, then a rematch with grids fit to its best seeds.
pub fn seeded_match(
    desc_a: &DescriptorSet,
    desc_b: &DescriptorSet,
    frame_a: ImageFrame,
    frame_b: ImageFrame,
    cfg: &PipelineConfig,
) -> Result<MatchSet, CliError> {
    let params = cfg.match_params();
    let appearance = match_images(desc_a, desc_b, None, &params).stage("match")?;
    match fitted_prior(
        seed_matches(&appearance.matches, cfg.seed_fraction),
        frame_a,
        frame_b,
        cfg,
    )? {
        Some(prior) => match_images(desc_a, desc_b, Some(&prior), &params).stage("match"),
        None => {
            log::warn!(
                "{}/{}: too few seed matches, keeping appearance-only ranking",
                desc_a.keypoints.image_id,
                desc_b.keypoints.image_id
            );
            Ok(appearance)
        }
    }
}

/// Ground truth for a synthetic pair: every visible A keypoint whose warped
/// position lands on the warped foreground.
pub fn synthetic_gt(
    dense_a: &KeypointSet,
    applied: &TpsWarp,
    frame: ImageFrame,
    warped_mask: &Mask,
) -> GroundTruthMatches {
    let pairs = dense_a
        .points
        .iter()
        .zip(&dense_a.visibility)
        .filter(|(_, v)| **v)
        .filter_map(|(p, _)| {
            let q = frame.to_pixel(applied.apply(frame.to_normalized(*p)));
            warped_mask.contains_point(q).then_some((*p, q))
        })
        .collect();
    GroundTruthMatches {
        pairs,
        provenance: Provenance::Synthetic,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use warpmatch::tps::regular_grid;

    fn m(r: f64) -> Match {
        Match {
            a_idx: 0,
            b_idx: 0,
            a: Point2::new(0.0, 0.0),
            b: Point2::new(0.0, 0.0),
            score: 1.0,
            ratio: r,
            flags: 0,
        }
    }

    #[test]
    fn seed_fraction_rounds_up() {
        let ranked: Vec<Match> = (0..10).map(|i| m(i as f64 / 10.0)).collect();
        assert_eq!(seed_matches(&ranked, 0.3).len(), 3);
        assert_eq!(seed_matches(&ranked, 0.01).len(), 1);
        assert_eq!(seed_matches(&ranked, 1.0).len(), 10);
        assert!(seed_matches(&[], 0.5).is_empty());
    }

    #[test]
    fn exact_prior_inverts_a_translation() {
        let frame = ImageFrame::new(64, 64);
        let a: Vec<Point2> = regular_grid(4).iter().map(|p| frame.to_pixel(*p)).collect();
        let b: Vec<Point2> = a
            .iter()
            .map(|p| Point2::new(p.x + 3.0, p.y - 2.0))
            .collect();
        let prior = exact_prior(&a, &b, frame, frame).unwrap();
        let u = Point2::new(20.0, 30.0);
        assert!(prior.a_to_b_px(u).distance(&Point2::new(23.0, 28.0)) < 1e-9);
        assert!(prior.b_to_a_px(Point2::new(23.0, 28.0)).distance(&u) < 1e-9);
    }

    #[test]
    fn synthetic_gt_keeps_points_landing_on_the_mask() {
        let frame = ImageFrame::new(32, 32);
        let mask = Mask::from_fn(32, 32, |x, _| x < 16);
        let kp = grid_keypoints("a", &Mask::from_fn(32, 32, |_, _| true), 8);
        let gt = synthetic_gt(&kp, &TpsWarp::identity(&regular_grid(3)), frame, &mask);
        assert_eq!(gt.pairs.len(), 8);
        assert!(gt.pairs.iter().all(|(p, q)| p == q && p.x < 16.0));
    }
}
