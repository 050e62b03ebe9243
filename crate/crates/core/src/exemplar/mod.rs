//! Exemplar warp mining and synthetic pair generation.
//!
//! Silhouette pairs are registered with shape contexts, each registration is
//! turned into a TPS warp, and the warps are ranked by the mean of their
//! bending and affine energy. Only a percentile band of that ranking is kept:
//! the low end is nearly rigid and the high end is implausible. Synthetic
//! training/evaluation pairs are then made by pushing an image through a warp
//! sampled from the bank, which yields exact dense correspondences.

pub mod contour;
pub mod hungarian;
pub mod shape_context;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{sample_bilinear, Mask, RgbImageF};
use crate::tps::{self, ImageFrame, Point2, TpsError, TpsWarp, WarpEnergy};

/// Contour samples used for shape-context registration.
pub const DEFAULT_CONTOUR_SAMPLES: usize = 100;
/// Smoothing applied when solving mined warps, relative to the squared mean
/// spacing of the contour samples.
pub const MINING_REGULARIZATION: f64 = 3.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExemplarError {
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("contour has {len} points, fewer than the {samples} requested samples")]
    DegenerateContour { len: usize, samples: usize },
    #[error("need at least {required} silhouette pairs, got {actual}")]
    TooFewPairs { required: usize, actual: usize },
    #[error("invalid percentile band [{lo}, {hi}]")]
    InvalidBand { lo: f64, hi: f64 },
    #[error("exemplar warp bank is empty")]
    EmptyBank,
    #[error("image is {image:?} but mask is {mask:?}")]
    SizeMismatch { image: (u32, u32), mask: (u32, u32) },
    #[error("at least one correspondence must be requested")]
    NoPoints,
    #[error(transparent)]
    Tps(#[from] TpsError),
}

/// A foreground mask and the outer contour of its largest component.
#[derive(Debug, Clone, PartialEq)]
pub struct Silhouette {
    pub mask: Mask,
    pub contour: Vec<Point2>,
}

impl Silhouette {
    pub fn from_mask(mask: Mask) -> Result<Self, ExemplarError> {
        if mask.is_empty() {
            return Err(ExemplarError::EmptyMask);
        }
        let contour = contour::trace_outer_contour(&mask);
        Ok(Self { mask, contour })
    }

    pub fn frame(&self) -> ImageFrame {
        self.mask.frame()
    }
}

/// Contour point pairs from a one-to-one shape-context assignment. Points are
/// in each silhouette's pixel coordinates.
pub fn silhouette_correspondences(
    a: &Silhouette,
    b: &Silhouette,
    samples: usize,
) -> Result<Vec<(Point2, Point2)>, ExemplarError> {
    let (pa, pb) = resampled_pair(a, b, samples)?;
    let cost = shape_context::cost_matrix(
        &shape_context::shape_contexts(&pa),
        &shape_context::shape_contexts(&pb),
    );
    let assignment = hungarian::min_cost_assignment(&cost);
    Ok(assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| (pa[i], pb[j]))
        .collect())
}

/// Total χ² cost of the optimal shape-context assignment between two silhouettes.
pub fn silhouette_matching_cost(
    a: &Silhouette,
    b: &Silhouette,
    samples: usize,
) -> Result<f64, ExemplarError> {
    let (pa, pb) = resampled_pair(a, b, samples)?;
    let cost = shape_context::cost_matrix(
        &shape_context::shape_contexts(&pa),
        &shape_context::shape_contexts(&pb),
    );
    let assignment = hungarian::min_cost_assignment(&cost);
    Ok(hungarian::assignment_cost(&cost, &assignment))
}

fn resampled_pair(
    a: &Silhouette,
    b: &Silhouette,
    samples: usize,
) -> Result<(Vec<Point2>, Vec<Point2>), ExemplarError> {
    for s in [a, b] {
        if s.contour.len() < samples || samples == 0 {
            return Err(ExemplarError::DegenerateContour {
                len: s.contour.len(),
                samples,
            });
        }
    }
    Ok((
        contour::resample_closed(&a.contour, samples),
        contour::resample_closed(&b.contour, samples),
    ))
}

/// A warp from an original frame to a deformed one, with the backward warp
/// used for raster resampling. Both live in normalized coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarWarp {
    pub forward: TpsWarp,
    pub inverse: TpsWarp,
    pub energy: WarpEnergy,
}

impl ExemplarWarp {
    /// Builds from a forward warp; the inverse is the TPS solved with source
    /// and target swapped.
    pub fn from_forward(forward: TpsWarp) -> Result<Self, TpsError> {
        let moved = tps::apply_warp(&forward, &forward.source_points);
        let inverse = tps::solve_warp(&moved, &forward.source_points)?;
        let energy = tps::warp_energy_of(&forward)?;
        Ok(Self {
            forward,
            inverse,
            energy,
        })
    }

    /// Builds from control-point correspondences in normalized coordinates.
    pub fn from_correspondences(source: &[Point2], target: &[Point2]) -> Result<Self, TpsError> {
        let system = tps::build_system(source)?;
        let forward = tps::solve_coefficients(&system, target)?;
        let energy = tps::warp_energy(&forward, &system)?;
        let inverse = tps::solve_warp(target, source)?;
        Ok(Self {
            forward,
            inverse,
            energy,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarWarpBank {
    pub warps: Vec<ExemplarWarp>,
    pub percentile_lo: f64,
    pub percentile_hi: f64,
}

impl ExemplarWarpBank {
    /// A bank holding the given warps without any energy filtering.
    pub fn from_warps(warps: Vec<ExemplarWarp>) -> Self {
        Self {
            warps,
            percentile_lo: 0.0,
            percentile_hi: 100.0,
        }
    }

    pub fn len(&self) -> usize {
        self.warps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.warps.is_empty()
    }
}

/// Minimum number of silhouette pairs for a meaningful percentile band.
pub const MIN_MINING_PAIRS: usize = 10;

/// Registers every pair, solves the smoothed `a → b` warp in normalized coordinates,
/// and keeps the `[lo, hi)` percentile band of the mean-energy ranking.
/// Pairs that fail to register are skipped with a warning.
pub fn mine_exemplar_bank(
    pairs: &[(Silhouette, Silhouette)],
    lo: f64,
    hi: f64,
) -> Result<ExemplarWarpBank, ExemplarError> {
    if pairs.len() < MIN_MINING_PAIRS {
        return Err(ExemplarError::TooFewPairs {
            required: MIN_MINING_PAIRS,
            actual: pairs.len(),
        });
    }
    let mut warps = Vec::with_capacity(pairs.len());
    for (i, (a, b)) in pairs.iter().enumerate() {
        match mine_one(a, b) {
            Ok(w) => warps.push(w),
            Err(e) => log::warn!("skipping silhouette pair {i}: {e}"),
        }
    }
    let warps = filter_by_energy_band(warps, lo, hi)?;
    Ok(ExemplarWarpBank {
        warps,
        percentile_lo: lo,
        percentile_hi: hi,
    })
}

fn mine_one(a: &Silhouette, b: &Silhouette) -> Result<ExemplarWarp, ExemplarError> {
    let corr = silhouette_correspondences(a, b, DEFAULT_CONTOUR_SAMPLES)?;
    let (fa, fb) = (a.frame(), b.frame());
    let src: Vec<Point2> = corr.iter().map(|(p, _)| fa.to_normalized(*p)).collect();
    let dst: Vec<Point2> = corr.iter().map(|(_, q)| fb.to_normalized(*q)).collect();
    let forward = tps::solve_warp_regularized(&src, &dst, MINING_REGULARIZATION)?;
    Ok(ExemplarWarp::from_forward(forward)?)
}

/// Stable-sorts by mean energy and keeps ranks `⌊lo·N/100⌋ .. ⌊hi·N/100⌋`.
pub fn filter_by_energy_band(
    warps: Vec<ExemplarWarp>,
    lo: f64,
    hi: f64,
) -> Result<Vec<ExemplarWarp>, ExemplarError> {
    if !(0.0..=100.0).contains(&lo) || !(0.0..=100.0).contains(&hi) || lo > hi {
        return Err(ExemplarError::InvalidBand { lo, hi });
    }
    let n = warps.len();
    let (start, end) = band_ranks(n, lo, hi);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        warps[i]
            .energy
            .mean_energy
            .total_cmp(&warps[j].energy.mean_energy)
    });
    let keep: Vec<usize> = order[start..end].to_vec();
    let mut slots: Vec<Option<ExemplarWarp>> = warps.into_iter().map(Some).collect();
    Ok(keep
        .into_iter()
        .map(|i| slots[i].take().expect("index kept twice"))
        .collect())
}

pub fn band_ranks(n: usize, lo: f64, hi: f64) -> (usize, usize) {
    let start = ((lo / 100.0) * n as f64).floor() as usize;
    let end = (((hi / 100.0) * n as f64).floor() as usize).min(n);
    (start.min(end), end)
}

/// Per-channel affine intensity jitter `v ↦ scale·v + shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelJitter {
    pub scale: f32,
    pub shift: f32,
}

pub const CHROMATIC_SCALE: (f32, f32) = (0.8, 1.2);
pub const CHROMATIC_SHIFT: (f32, f32) = (-0.1, 0.1);

/// An image pushed through a known warp, with exact correspondences.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPair {
    pub original_id: String,
    pub warped_image: RgbImageF,
    pub warped_mask: Mask,
    /// `(original pixel, warped pixel)`.
    pub correspondences: Vec<(Point2, Point2)>,
    pub warp_index: usize,
    pub applied_warp: TpsWarp,
    pub inverse_warp: TpsWarp,
    pub chromatic: Option<[ChannelJitter; 3]>,
}

/// Samples a bank warp, resamples the image through it (bilinear, black
/// outside), draws `n` stratified foreground points and records where the warp
/// sends them. All randomness comes from `rng_seed`.
pub fn generate_pair(
    original_id: &str,
    image: &RgbImageF,
    mask: &Mask,
    bank: &ExemplarWarpBank,
    n: usize,
    chromatic: bool,
    rng_seed: u64,
) -> Result<SyntheticPair, ExemplarError> {
    if bank.is_empty() {
        return Err(ExemplarError::EmptyBank);
    }
    if n == 0 {
        return Err(ExemplarError::NoPoints);
    }
    if mask.is_empty() {
        return Err(ExemplarError::EmptyMask);
    }
    if (image.width(), image.height()) != (mask.width(), mask.height()) {
        return Err(ExemplarError::SizeMismatch {
            image: (image.width(), image.height()),
            mask: (mask.width(), mask.height()),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let warp_index = rng.random_range(0..bank.len());
    let exemplar = &bank.warps[warp_index];
    let frame = mask.frame();

    let (mut warped_image, warped_mask, coverage) =
        warp_raster_with_coverage(image, mask, &exemplar.inverse);

    let jitter = chromatic.then(|| {
        [0; 3].map(|_| ChannelJitter {
            scale: rng.random_range(CHROMATIC_SCALE.0..=CHROMATIC_SCALE.1),
            shift: rng.random_range(CHROMATIC_SHIFT.0..=CHROMATIC_SHIFT.1),
        })
    });
    if let Some(j) = &jitter {
        apply_jitter(&mut warped_image, &coverage, j);
    }

    let sources = stratified_foreground_points(mask, n, &mut rng);
    let correspondences = sources
        .into_iter()
        .map(|p| {
            let q = frame.to_pixel(exemplar.forward.apply(frame.to_normalized(p)));
            (p, q)
        })
        .collect();

    Ok(SyntheticPair {
        original_id: original_id.to_string(),
        warped_image,
        warped_mask,
        correspondences,
        warp_index,
        applied_warp: exemplar.forward.clone(),
        inverse_warp: exemplar.inverse.clone(),
        chromatic: jitter,
    })
}

/// Backward-maps every output pixel through `inverse`. Returns the resampled
/// image and the nearest-neighbour-resampled mask.
pub fn warp_raster(image: &RgbImageF, mask: &Mask, inverse: &TpsWarp) -> (RgbImageF, Mask) {
    let (img, m, _) = warp_raster_with_coverage(image, mask, inverse);
    (img, m)
}

// Third output marks pixels whose backward sample landed inside the source.
fn warp_raster_with_coverage(
    image: &RgbImageF,
    mask: &Mask,
    inverse: &TpsWarp,
) -> (RgbImageF, Mask, Mask) {
    let frame = mask.frame();
    let (w, h) = (image.width(), image.height());
    let mut out = RgbImageF::new(w, h);
    let mut out_mask = Mask::new(w, h);
    let mut coverage = Mask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let q = frame.to_normalized(Point2::new(x as f64, y as f64));
            let p = frame.to_pixel(inverse.apply(q));
            if let Some(px) = sample_bilinear(image, p.x, p.y) {
                out.put_pixel(x, y, image::Rgb(px));
                coverage.set(x, y, true);
            }
            if mask.contains_point(p) {
                out_mask.set(x, y, true);
            }
        }
    }
    (out, out_mask, coverage)
}

fn apply_jitter(img: &mut RgbImageF, valid: &Mask, jitter: &[ChannelJitter; 3]) {
    for (x, y, px) in img.enumerate_pixels_mut() {
        if !valid.get(x, y) {
            continue;
        }
        for (c, j) in jitter.iter().enumerate() {
            px.0[c] = (px.0[c] * j.scale + j.shift).clamp(0.0, 1.0);
        }
    }
}

/// `n` foreground pixel positions: the foreground bounding box is split into
/// `⌈√n⌉ × ⌈√n⌉` cells, one point is drawn per non-empty cell, and any
/// remainder is drawn uniformly from the rest of the foreground.
pub fn stratified_foreground_points(mask: &Mask, n: usize, rng: &mut impl Rng) -> Vec<Point2> {
    let fg: Vec<(u32, u32)> = mask.foreground().collect();
    if fg.is_empty() || n == 0 {
        return Vec::new();
    }
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    for &(x, y) in &fg {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let cells = (n as f64).sqrt().ceil() as usize;
    let bw = (x1 - x0 + 1) as f64;
    let bh = (y1 - y0 + 1) as f64;
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); cells * cells];
    for (i, &(x, y)) in fg.iter().enumerate() {
        let cx = (((x - x0) as f64 / bw) * cells as f64) as usize;
        let cy = (((y - y0) as f64 / bh) * cells as f64) as usize;
        buckets[cy.min(cells - 1) * cells + cx.min(cells - 1)].push(i);
    }
    let occupied: Vec<usize> = (0..buckets.len())
        .filter(|&c| !buckets[c].is_empty())
        .collect();
    let chosen_cells: Vec<usize> = if occupied.len() > n {
        let mut picks: Vec<usize> = sample(rng, occupied.len(), n)
            .into_iter()
            .map(|i| occupied[i])
            .collect();
        picks.sort_unstable();
        picks
    } else {
        occupied
    };

    let mut taken = vec![false; fg.len()];
    let mut out = Vec::with_capacity(n);
    for c in chosen_cells {
        let b = &buckets[c];
        let i = b[rng.random_range(0..b.len())];
        taken[i] = true;
        out.push(i);
    }
    let free: Vec<usize> = (0..fg.len()).filter(|&i| !taken[i]).collect();
    let remaining = n - out.len();
    if remaining > 0 {
        if free.len() >= remaining {
            out.extend(
                sample(rng, free.len(), remaining)
                    .into_iter()
                    .map(|i| free[i]),
            );
        } else {
            out.extend(free.iter().copied());
            while out.len() < n {
                out.push(rng.random_range(0..fg.len()));
            }
        }
    }
    out.into_iter()
        .map(|i| Point2::new(fg[i].0 as f64, fg[i].1 as f64))
        .collect()
}

/// One line of a synthetic-pair manifest (JSON lines). Paths are relative to
/// the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPairRecord {
    pub pair_id: String,
    pub original_id: String,
    pub image_path: String,
    pub mask_path: String,
    pub warped_image_path: String,
    pub warped_mask_path: String,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    pub warp_index: usize,
    /// `[x1, y1, x2, y2]` in pixels, original then warped.
    pub correspondences: Vec<[f64; 4]>,
    pub applied_warp: TpsWarp,
    pub inverse_warp: TpsWarp,
    pub chromatic: Option<[ChannelJitter; 3]>,
}

impl SyntheticPairRecord {
    pub fn frame(&self) -> ImageFrame {
        ImageFrame::new(self.width, self.height)
    }

    pub fn sources(&self) -> Vec<Point2> {
        self.correspondences
            .iter()
            .map(|c| Point2::new(c[0], c[1]))
            .collect()
    }

    pub fn targets(&self) -> Vec<Point2> {
        self.correspondences
            .iter()
            .map(|c| Point2::new(c[2], c[3]))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    fn blob(seed: u64) -> Silhouette {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Silhouette::from_mask(synthetic::random_blob_mask(96, 96, &mut rng)).unwrap()
    }

    #[test]
    fn identical_silhouettes_match_to_themselves() {
        let a = blob(3);
        let corr = silhouette_correspondences(&a, &a, 60).unwrap();
        for (p, q) in &corr {
            assert_eq!(p, q);
        }
        assert!(silhouette_matching_cost(&a, &a, 60).unwrap().abs() < 1e-12);
    }

    #[test]
    fn translated_silhouette_matches_translated_points() {
        let a = blob(4);
        let shifted = Mask::from_fn(a.mask.width() + 10, a.mask.height(), |x, y| {
            x >= 10 && a.mask.get(x - 10, y)
        });
        let b = Silhouette::from_mask(shifted).unwrap();
        for (p, q) in silhouette_correspondences(&a, &b, 50).unwrap() {
            assert!((q.x - p.x - 10.0).abs() < 1e-9 && (q.y - p.y).abs() < 1e-9);
        }
    }

    #[test]
    fn short_contour_is_degenerate() {
        let m = Mask::from_fn(10, 10, |x, y| (4..6).contains(&x) && (4..6).contains(&y));
        let s = Silhouette::from_mask(m).unwrap();
        assert_eq!(
            silhouette_correspondences(&s, &s, 100).unwrap_err(),
            ExemplarError::DegenerateContour {
                len: 4,
                samples: 100
            }
        );
        assert_eq!(
            Silhouette::from_mask(Mask::new(3, 3)).unwrap_err(),
            ExemplarError::EmptyMask
        );
    }

    #[test]
    fn band_ranks_follow_floor_rule() {
        assert_eq!(band_ranks(100, 50.0, 90.0), (50, 90));
        assert_eq!(band_ranks(37, 0.0, 100.0), (0, 37));
        assert_eq!(band_ranks(10, 50.0, 90.0), (5, 9));
        assert!(filter_by_energy_band(Vec::new(), 60.0, 50.0).is_err());
    }

    #[test]
    fn too_few_pairs_rejected() {
        let a = blob(1);
        let pairs = vec![(a.clone(), a); 3];
        assert_eq!(
            mine_exemplar_bank(&pairs, 50.0, 90.0).unwrap_err(),
            ExemplarError::TooFewPairs {
                required: 10,
                actual: 3
            }
        );
    }

    #[test]
    fn stratified_points_cover_cells_and_stay_on_foreground() {
        let mask = Mask::from_fn(64, 64, |x, y| {
            (x as i32 - 32).pow(2) + (y as i32 - 32).pow(2) < 26 * 26
        });
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts = stratified_foreground_points(&mask, 100, &mut rng);
        assert_eq!(pts.len(), 100);
        assert!(pts.iter().all(|p| mask.contains_point(*p)));
        let tiny = Mask::from_fn(8, 8, |x, y| x < 2 && y < 2);
        let pts = stratified_foreground_points(&tiny, 10, &mut rng);
        assert_eq!(pts.len(), 10);
        assert!(pts.iter().all(|p| tiny.contains_point(*p)));
    }

    #[test]
    fn empty_bank_is_an_error() {
        let mask = Mask::from_fn(8, 8, |_, _| true);
        let img = RgbImageF::new(8, 8);
        let bank = ExemplarWarpBank::from_warps(Vec::new());
        assert_eq!(
            generate_pair("x", &img, &mask, &bank, 5, false, 0).unwrap_err(),
            ExemplarError::EmptyBank
        );
    }
}
