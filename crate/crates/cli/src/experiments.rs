//! Synthetic experiments: the benefit of a true-warp prior on repeated
//! textures, and the affine-only versus exemplar-TPS bank ablation.

use nalgebra::{DMatrix, DVector};
use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use warpmatch::eval::{label_matches, pck, pck_at_cutoff, GroundTruthMatches};
use warpmatch::exemplar::{
    generate_pair, mine_exemplar_bank, ExemplarWarp, ExemplarWarpBank, Silhouette, SyntheticPair,
};
use warpmatch::matcher::{match_images, threshold_at_precision, LabeledRatio, Match, WarpPrior};
use warpmatch::raster::{Mask, RgbImageF};
use warpmatch::synthetic::{
    random_blob_mask, random_smooth_warp, repeated_texture_image, warp_mask,
};
use warpmatch::tps::{
    grid_system, regular_grid, solve_coefficients, solve_warp, warp_points_jacobian, ImageFrame,
    Point2, TpsWarp,
};

use crate::config::PipelineConfig;
use crate::error::{CliError, Staged};
use crate::output::derive_seed;
use crate::pipeline::{describe, grid_keypoints, seed_matches, synthetic_gt};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorBenefitOptions {
    pub pairs: usize,
    pub size: u32,
    /// Texture period, pixels.
    pub period: f64,
    /// Grid displacement amplitude of the random warps, normalized units.
    pub amplitude: f64,
}

impl Default for PriorBenefitOptions {
    fn default() -> Self {
        Self {
            pairs: 200,
            size: 128,
            period: 12.0,
            amplitude: 0.06,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorBenefitReport {
    pub options: PriorBenefitOptions,
    pub lambda: f64,
    pub pairs: usize,
    #[serde(rename = "pck@0.05_prior")]
    pub pck_prior: f64,
    #[serde(rename = "pck@0.05_appearance")]
    pub pck_appearance: f64,
}

/// A textured blob, its synthetic deformation and the matcher inputs.
struct TestPair {
    image: RgbImageF,
    mask: Mask,
    pair: SyntheticPair,
}

fn make_pair(
    image: RgbImageF,
    mask: Mask,
    warp: ExemplarWarp,
    n: usize,
    chromatic: bool,
    seed: u64,
) -> Result<TestPair, CliError> {
    let bank = ExemplarWarpBank::from_warps(vec![warp]);
    let pair = generate_pair("a", &image, &mask, &bank, n, chromatic, seed).stage("experiment")?;
    Ok(TestPair { image, mask, pair })
}

struct Described {
    desc_a: warpmatch::descriptors::DescriptorSet,
    desc_b: warpmatch::descriptors::DescriptorSet,
    gt: GroundTruthMatches,
    frame: ImageFrame,
}

fn describe_pair(t: &TestPair, cfg: &PipelineConfig) -> Result<Described, CliError> {
    let kp_a = grid_keypoints("a", &t.mask, cfg.stride);
    let kp_b = grid_keypoints("b", &t.pair.warped_mask, cfg.stride);
    let frame = t.mask.frame();
    Ok(Described {
        desc_a: describe(&t.image, &kp_a, cfg)?,
        desc_b: describe(&t.pair.warped_image, &kp_b, cfg)?,
        gt: synthetic_gt(&kp_a, &t.pair.applied_warp, frame, &t.pair.warped_mask),
        frame,
    })
}

/// PCK@α of matching with the generating warp as prior versus appearance
/// only, on repeated-texture blobs under random smooth warps.
pub fn prior_benefit(
    opts: &PriorBenefitOptions,
    cfg: &PipelineConfig,
) -> Result<PriorBenefitReport, CliError> {
    let params = cfg.match_params();
    let scores: Vec<(f64, f64)> = (0..opts.pairs)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(cfg.seed, "prior-benefit", &i.to_string());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mask = random_blob_mask(opts.size, opts.size, &mut rng);
            let image = repeated_texture_image(&mask, opts.period, &mut rng);
            let warp = ExemplarWarp::from_forward(random_smooth_warp(
                cfg.k_grid,
                opts.amplitude,
                &mut rng,
            ))
            .stage("experiment")?;
            let t = make_pair(image, mask, warp, 1, cfg.chromatic, seed)?;
            let d = describe_pair(&t, cfg)?;
            let prior = WarpPrior {
                a_to_b: t.pair.applied_warp.clone(),
                b_to_a: t.pair.inverse_warp.clone(),
                frame_a: d.frame,
                frame_b: d.frame,
            };
            let with = match_images(&d.desc_a, &d.desc_b, Some(&prior), &params).stage("match")?;
            let without = match_images(&d.desc_a, &d.desc_b, None, &params).stage("match")?;
            Ok((
                pck(&with.matches, &d.gt, cfg.alpha, d.frame, d.frame),
                pck(&without.matches, &d.gt, cfg.alpha, d.frame, d.frame),
            ))
        })
        .collect::<Result<_, CliError>>()?;
    let n = scores.len().max(1) as f64;
    Ok(PriorBenefitReport {
        options: *opts,
        lambda: cfg.lambda,
        pairs: scores.len(),
        pck_prior: scores.iter().map(|s| s.0).sum::<f64>() / n,
        pck_appearance: scores.iter().map(|s| s.1).sum::<f64>() / n,
    })
}

/// What the bank subspaces are fit to on each test pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationSeeds {
    /// The pair's sampled foreground correspondences.
    Correspondences,
    /// Top appearance matches, filtered by affine consensus and refined
    /// from prior-guided matches.
    Appearance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationOptions {
    /// Random silhouette pairs registered to mine warps.
    pub mining_pairs: usize,
    pub mining_size: u32,
    /// Shared displacement fields of the mined deformations.
    pub family_modes: usize,
    /// Amplitude of each field, normalized units.
    pub mining_amplitude: f64,
    /// Test pairs, each deformed by a fresh sample of the category family.
    pub test_pairs: usize,
    pub size: u32,
    /// Period of the repeated foreground texture of test images, pixels.
    pub period: f64,
    /// Distinctive blobs painted over the repeated texture.
    pub landmarks: usize,
    /// Principal non-affine modes kept from the bank.
    pub modes: usize,
    /// Assumed seed correspondence noise, normalized units.
    pub noise: f64,
    pub seeds: AblationSeeds,
    /// Refits from the top prior-guided matches after the first fit.
    pub refine_rounds: usize,
    /// Affine consensus tolerance for seeds, normalized units.
    pub inlier_tol: f64,
}

impl Default for AblationOptions {
    fn default() -> Self {
        Self {
            mining_pairs: 60,
            mining_size: 96,
            family_modes: 3,
            mining_amplitude: 0.5,
            test_pairs: 40,
            size: 128,
            period: 12.0,
            landmarks: 12,
            modes: 3,
            noise: 0.05,
            seeds: AblationSeeds::Correspondences,
            refine_rounds: 2,
            inlier_tol: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankResult {
    pub name: String,
    pub basis_size: usize,
    /// Pooled ratio cutoff at the target precision; `None` if unattainable.
    pub cutoff: Option<f64>,
    /// Mean PCK@α over test pairs of the matches kept by `cutoff` (0 when
    /// no cutoff exists).
    pub pck_at_cutoff: f64,
    pub pck: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub options: AblationOptions,
    pub precision: f64,
    pub bank_size: usize,
    pub test_pairs: usize,
    pub results: Vec<BankResult>,
}

/// Linear model of `k × k` grid displacements: the six affine directions plus
/// principal non-affine modes of a warp bank, fit to seed correspondences.
#[derive(Debug, Clone)]
pub struct BankSubspace {
    pub k: usize,
    grid: Vec<Point2>,
    /// `2k² × p`, interleaved x/y rows.
    basis: DMatrix<f64>,
    /// Bank variance along each non-affine mode.
    variances: Vec<f64>,
}

fn grid_displacement(w: &TpsWarp, grid: &[Point2]) -> DVector<f64> {
    DVector::from_iterator(
        2 * grid.len(),
        grid.iter().flat_map(|g| {
            let q = w.apply(*g);
            [q.x - g.x, q.y - g.y]
        }),
    )
}

fn affine_basis(grid: &[Point2]) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(2 * grid.len(), 6);
    for (i, g) in grid.iter().enumerate() {
        for (c, v) in [1.0, g.x, g.y].into_iter().enumerate() {
            a[(2 * i, c)] = v;
            a[(2 * i + 1, 3 + c)] = v;
        }
    }
    a
}

impl BankSubspace {
    /// Affine directions plus up to `modes` principal directions of the
    /// bank's displacements after removing their affine part.
    pub fn from_warps(k: usize, warps: &[TpsWarp], modes: usize) -> Self {
        let grid = regular_grid(k);
        let affine = affine_basis(&grid);
        let qr = affine.clone().qr();
        let q = qr.q();
        let mut cols = Vec::new();
        let mut variances = Vec::new();
        if modes > 0 && !warps.is_empty() {
            let residuals = DMatrix::from_columns(
                &warps
                    .iter()
                    .map(|w| {
                        let d = grid_displacement(w, &grid);
                        &d - &q * (q.transpose() * &d)
                    })
                    .collect::<Vec<_>>(),
            );
            let svd = residuals.svd(true, false);
            let u = svd.u.expect("left singular vectors");
            let top = svd.singular_values.max();
            let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
            order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
            for &j in order.iter().take(modes) {
                if svd.singular_values[j] > 1e-9 * top.max(1e-300) {
                    cols.push(u.column(j).into_owned());
                    variances.push(svd.singular_values[j].powi(2) / warps.len() as f64);
                }
            }
        }
        let mut all: Vec<DVector<f64>> = affine.column_iter().map(|c| c.into_owned()).collect();
        all.extend(cols);
        Self {
            k,
            grid,
            basis: DMatrix::from_columns(&all),
            variances,
        }
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Least squares on normalized correspondences with a Gaussian prior on
    /// each mode (the bank variance along it) and correspondence noise of
    /// standard deviation `noise`, with two rounds of trimming residuals above
    /// 2.5× their median. Returns the deformed grid.
    pub fn fit(&self, a: &[Point2], b: &[Point2], noise: f64) -> Result<Vec<Point2>, CliError> {
        let system = grid_system(self.k).stage("experiment")?;
        let mut keep: Vec<usize> = (0..a.len()).collect();
        let mut c = DVector::zeros(self.dim());
        for round in 0..3 {
            let pts: Vec<Point2> = keep.iter().map(|&i| a[i]).collect();
            let jac = warp_points_jacobian(&system, &pts);
            let g = DVector::from_iterator(
                2 * self.grid.len(),
                self.grid.iter().flat_map(|p| [p.x, p.y]),
            );
            let base = &jac * g;
            let y = DVector::from_iterator(
                2 * keep.len(),
                keep.iter()
                    .enumerate()
                    .flat_map(|(r, &i)| [b[i].x - base[2 * r], b[i].y - base[2 * r + 1]]),
            );
            let x = &jac * &self.basis;
            let mut normal = x.transpose() * &x;
            let scale = normal.trace() / self.dim() as f64;
            for (j, v) in self.variances.iter().enumerate() {
                normal[(6 + j, 6 + j)] += noise * noise / v;
            }
            for j in 0..6.min(self.dim()) {
                normal[(j, j)] += 1e-12 * scale;
            }
            c = normal
                .cholesky()
                .ok_or_else(|| CliError::numerical("experiment", "singular subspace fit"))?
                .solve(&(x.transpose() * &y));
            if round == 2 {
                break;
            }
            let r = &x * &c - &y;
            let res: Vec<f64> = (0..keep.len())
                .map(|i| r[2 * i].hypot(r[2 * i + 1]))
                .collect();
            let mut sorted = res.clone();
            sorted.sort_by(f64::total_cmp);
            let limit = (2.5 * sorted[sorted.len() / 2]).max(1e-3);
            let next: Vec<usize> = keep
                .iter()
                .zip(&res)
                .filter(|(_, r)| **r <= limit)
                .map(|(i, _)| *i)
                .collect();
            if next.len() < 6 || next.len() == keep.len() {
                break;
            }
            keep = next;
        }
        let d = &self.basis * c;
        Ok(self
            .grid
            .iter()
            .enumerate()
            .map(|(i, p)| Point2::new(p.x + d[2 * i], p.y + d[2 * i + 1]))
            .collect())
    }
}

/// Indices of the largest set of correspondences agreeing with an affine
/// map through three sampled ones, within `tol`.
pub fn affine_inliers(
    a: &[Point2],
    b: &[Point2],
    tol: f64,
    iterations: usize,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let n = a.len();
    if n < 4 {
        return (0..n).collect();
    }
    let mut best: Vec<usize> = Vec::new();
    for _ in 0..iterations {
        let idx = rand::seq::index::sample(rng, n, 3);
        let m = DMatrix::from_fn(3, 3, |r, c| [1.0, a[idx.index(r)].x, a[idx.index(r)].y][c]);
        let Some(lu) = Some(m.lu()).filter(|lu| lu.determinant().abs() > 1e-9) else {
            continue;
        };
        let (Some(cx), Some(cy)) = (
            lu.solve(&DVector::from_iterator(3, idx.iter().map(|i| b[i].x))),
            lu.solve(&DVector::from_iterator(3, idx.iter().map(|i| b[i].y))),
        ) else {
            continue;
        };
        let inliers: Vec<usize> = (0..n)
            .filter(|&i| {
                let p = Point2::new(
                    cx[0] + cx[1] * a[i].x + cx[2] * a[i].y,
                    cy[0] + cy[1] * a[i].x + cy[2] * a[i].y,
                );
                p.distance(&b[i]) <= tol
            })
            .collect();
        if inliers.len() > best.len() {
            best = inliers;
        }
    }
    if best.len() < 3 {
        (0..n).collect()
    } else {
        best
    }
}

/// Deformations of one synthetic category: a few fixed smooth displacement
/// fields on the `k × k` grid, mixed with random weights in `[-1, 1]` on top
/// of a mild random affine map.
#[derive(Debug, Clone)]
pub struct DeformationFamily {
    pub k: usize,
    /// Per-field grid displacements, normalized units.
    pub fields: Vec<Vec<Point2>>,
}

const CONSENSUS_ITERATIONS: usize = 500;
const FIELD_FREQUENCY: std::ops::Range<f64> = 1.0..2.5;

impl DeformationFamily {
    pub fn random(k: usize, modes: usize, amplitude: f64, rng: &mut impl Rng) -> Self {
        let grid = regular_grid(k);
        let fields = (0..modes)
            .map(|_| {
                let (fx, fy) = (
                    rng.random_range(FIELD_FREQUENCY),
                    rng.random_range(FIELD_FREQUENCY),
                );
                let (px, py) = (rng.random_range(0.0..TAU), rng.random_range(0.0..TAU));
                grid.iter()
                    .map(|p| {
                        Point2::new(
                            amplitude * (fx * p.y + px).sin(),
                            amplitude * (fy * p.x + py).sin(),
                        )
                    })
                    .collect()
            })
            .collect();
        Self { k, fields }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Result<TpsWarp, CliError> {
        let theta: f64 = rng.random_range(-0.1..0.1);
        let s: f64 = rng.random_range(0.92..1.08);
        let (c, sn) = (theta.cos() * s, theta.sin() * s);
        let t = (rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
        let z: Vec<f64> = self
            .fields
            .iter()
            .map(|_| rng.random_range(-1.0..=1.0))
            .collect();
        let target: Vec<Point2> = regular_grid(self.k)
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let (dx, dy) = self
                    .fields
                    .iter()
                    .zip(&z)
                    .fold((0.0, 0.0), |(x, y), (f, w)| {
                        (x + w * f[i].x, y + w * f[i].y)
                    });
                Point2::new(c * p.x - sn * p.y + t.0 + dx, sn * p.x + c * p.y + t.1 + dy)
            })
            .collect();
        solve_coefficients(grid_system(self.k).stage("experiment")?.as_ref(), &target)
            .stage("experiment")
    }
}

/// The synthetic category's deformation family.
pub fn category_family(opts: &AblationOptions, cfg: &PipelineConfig) -> DeformationFamily {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "ablation-family", ""));
    DeformationFamily::random(
        cfg.k_grid,
        opts.family_modes,
        opts.mining_amplitude,
        &mut rng,
    )
}

/// Mines silhouette warps between random blobs and copies deformed by
/// `family`, keeping the configured energy band.
pub fn mine_category_bank(
    family: &DeformationFamily,
    opts: &AblationOptions,
    cfg: &PipelineConfig,
) -> Result<ExemplarWarpBank, CliError> {
    let pairs: Vec<(Silhouette, Silhouette)> = (0..opts.mining_pairs)
        .into_par_iter()
        .map(|i| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "ablation-mine", &i.to_string()));
            let a = random_blob_mask(opts.mining_size, opts.mining_size, &mut rng);
            let deform = ExemplarWarp::from_forward(family.sample(&mut rng)?).stage("exemplar")?;
            let b = warp_mask(&a, &deform.inverse);
            Ok((
                Silhouette::from_mask(a).stage("exemplar")?,
                Silhouette::from_mask(b).stage("exemplar")?,
            ))
        })
        .collect::<Result<_, CliError>>()?;
    let [lo, hi] = cfg.percentiles;
    mine_exemplar_bank(&pairs, lo, hi).stage("exemplar")
}

/// Repeated texture with `landmarks` distinctive Gaussian colour blobs on
/// the foreground.
pub fn landmark_texture_image(
    mask: &Mask,
    period: f64,
    landmarks: usize,
    rng: &mut impl Rng,
) -> RgbImageF {
    let mut img = repeated_texture_image(mask, period, rng);
    let fg: Vec<(u32, u32)> = mask.foreground().collect();
    if fg.is_empty() {
        return img;
    }
    let blobs: Vec<(f64, f64, f64, [f32; 3])> = (0..landmarks)
        .map(|_| {
            let (x, y) = fg[rng.random_range(0..fg.len())];
            (
                x as f64,
                y as f64,
                rng.random_range(2.5..4.5),
                [0; 3].map(|_| rng.random_range(0.0..1.0f32)),
            )
        })
        .collect();
    for &(x, y) in &fg {
        let mut c = img.get_pixel(x, y).0;
        for (bx, by, s, col) in &blobs {
            let g =
                (-((x as f64 - bx).powi(2) + (y as f64 - by).powi(2)) / (2.0 * s * s)).exp() as f32;
            for k in 0..3 {
                c[k] = c[k] * (1.0 - g) + col[k] * g;
            }
        }
        img.get_pixel_mut(x, y).0 = c;
    }
    img
}

struct Ranked {
    matches: Vec<Match>,
    gt: GroundTruthMatches,
    frame: ImageFrame,
}

fn score_bank(name: &str, ranked: &[Ranked], dim: usize, cfg: &PipelineConfig) -> BankResult {
    let mut pooled: Vec<LabeledRatio> = ranked
        .iter()
        .flat_map(|r| label_matches(&r.matches, &r.gt, cfg.alpha, r.frame, r.frame))
        .collect();
    pooled.sort_by(|a, b| a.ratio.total_cmp(&b.ratio));
    let cutoff = threshold_at_precision(&pooled, cfg.precision).ok();
    let n = ranked.len().max(1) as f64;
    BankResult {
        name: name.to_string(),
        basis_size: dim,
        cutoff,
        pck_at_cutoff: cutoff.map_or(0.0, |c| {
            ranked
                .iter()
                .map(|r| pck_at_cutoff(&r.matches, c, &r.gt, cfg.alpha, r.frame, r.frame))
                .sum::<f64>()
                / n
        }),
        pck: ranked
            .iter()
            .map(|r| pck(&r.matches, &r.gt, cfg.alpha, r.frame, r.frame))
            .sum::<f64>()
            / n,
    }
}

/// Mines an exemplar bank from silhouettes of a synthetic category and tests
/// on fresh deformations of the same category. Grids regressed from seed
/// matches through the exemplar-TPS subspace and through its affine-only
/// counterpart serve as priors; each method is scored at its own pooled
/// cutoff for the target precision.
pub fn bank_ablation(
    opts: &AblationOptions,
    cfg: &PipelineConfig,
) -> Result<AblationReport, CliError> {
    let family = category_family(opts, cfg);
    let mined = mine_category_bank(&family, opts, cfg)?;
    if mined.is_empty() {
        return Err(CliError::data("experiment", "mined bank is empty"));
    }
    let bank: Vec<TpsWarp> = mined.warps.iter().map(|w| w.forward.clone()).collect();
    let tps_space = BankSubspace::from_warps(cfg.k_grid, &bank, opts.modes);
    let affine_space = BankSubspace::from_warps(cfg.k_grid, &[], 0);
    let params = cfg.match_params();

    let per_pair: Vec<[Ranked; 4]> = (0..opts.test_pairs)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(cfg.seed, "ablation-test", &i.to_string());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mask = random_blob_mask(opts.size, opts.size, &mut rng);
            let image = landmark_texture_image(&mask, opts.period, opts.landmarks, &mut rng);
            let warp = ExemplarWarp::from_forward(family.sample(&mut rng)?).stage("experiment")?;
            let t = make_pair(image, mask, warp, cfg.n_points, cfg.chromatic, seed)?;
            let d = describe_pair(&t, cfg)?;
            let appearance = match_images(&d.desc_a, &d.desc_b, None, &params).stage("match")?;
            let prior_from = |space: &BankSubspace,
                              a: &[Point2],
                              b: &[Point2]|
             -> Result<Option<WarpPrior>, CliError> {
                let target = space.fit(a, b, opts.noise)?;
                Ok(
                    match (
                        solve_warp(&space.grid, &target),
                        solve_warp(&target, &space.grid),
                    ) {
                        (Ok(a_to_b), Ok(b_to_a)) => Some(WarpPrior {
                            a_to_b,
                            b_to_a,
                            frame_a: d.frame,
                            frame_b: d.frame,
                        }),
                        _ => None,
                    },
                )
            };
            let ranked_with = |space: &BankSubspace| -> Result<Ranked, CliError> {
                let matches = match opts.seeds {
                    AblationSeeds::Correspondences => {
                        let (a, b): (Vec<Point2>, Vec<Point2>) = t
                            .pair
                            .correspondences
                            .iter()
                            .map(|(p, q)| (d.frame.to_normalized(*p), d.frame.to_normalized(*q)))
                            .unzip();
                        let prior = prior_from(space, &a, &b)?;
                        match_images(&d.desc_a, &d.desc_b, prior.as_ref(), &params)
                            .stage("match")?
                            .matches
                    }
                    AblationSeeds::Appearance => {
                        let mut seeds =
                            seed_matches(&appearance.matches, cfg.seed_fraction).to_vec();
                        let mut matches = Vec::new();
                        for round in 0..=opts.refine_rounds {
                            let a: Vec<Point2> =
                                seeds.iter().map(|m| d.frame.to_normalized(m.a)).collect();
                            let b: Vec<Point2> =
                                seeds.iter().map(|m| d.frame.to_normalized(m.b)).collect();
                            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                                seed,
                                "ablation-consensus",
                                &round.to_string(),
                            ));
                            let keep = affine_inliers(
                                &a,
                                &b,
                                opts.inlier_tol,
                                CONSENSUS_ITERATIONS,
                                &mut rng,
                            );
                            let a: Vec<Point2> = keep.iter().map(|&i| a[i]).collect();
                            let b: Vec<Point2> = keep.iter().map(|&i| b[i]).collect();
                            let prior = prior_from(space, &a, &b)?;
                            matches = match_images(&d.desc_a, &d.desc_b, prior.as_ref(), &params)
                                .stage("match")?
                                .matches;
                            seeds = seed_matches(&matches, cfg.seed_fraction).to_vec();
                        }
                        matches
                    }
                };
                Ok(Ranked {
                    matches,
                    gt: d.gt.clone(),
                    frame: d.frame,
                })
            };
            let truth = WarpPrior {
                a_to_b: t.pair.applied_warp.clone(),
                b_to_a: t.pair.inverse_warp.clone(),
                frame_a: d.frame,
                frame_b: d.frame,
            };
            Ok([
                ranked_with(&tps_space)?,
                ranked_with(&affine_space)?,
                Ranked {
                    matches: appearance.matches,
                    gt: d.gt.clone(),
                    frame: d.frame,
                },
                Ranked {
                    matches: match_images(&d.desc_a, &d.desc_b, Some(&truth), &params)
                        .stage("match")?
                        .matches,
                    gt: d.gt.clone(),
                    frame: d.frame,
                },
            ])
        })
        .collect::<Result<_, CliError>>()?;

    let column = |i: usize| -> Vec<Ranked> {
        per_pair
            .iter()
            .map(|p| Ranked {
                matches: p[i].matches.clone(),
                gt: p[i].gt.clone(),
                frame: p[i].frame,
            })
            .collect()
    };
    let results = vec![
        score_bank("exemplar-tps", &column(0), tps_space.dim(), cfg),
        score_bank("affine", &column(1), affine_space.dim(), cfg),
        score_bank("appearance", &column(2), 0, cfg),
        score_bank("true-warp", &column(3), 0, cfg),
    ];
    Ok(AblationReport {
        options: *opts,
        precision: cfg.precision,
        bank_size: bank.len(),
        test_pairs: per_pair.len(),
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use warpmatch::tps::TpsWarp;

    #[test]
    fn affine_subspace_recovers_an_affine_map() {
        let space = BankSubspace::from_warps(5, &[], 0);
        assert_eq!(space.dim(), 6);
        let m = TpsWarp::affine(&regular_grid(5), [[1.1, 0.1], [-0.05, 0.9]], [0.05, -0.02]);
        let a: Vec<Point2> = (0..40)
            .map(|i| {
                Point2::new(
                    -0.8 + 0.04 * i as f64,
                    0.5 * ((i * 7) % 11) as f64 / 11.0 - 0.2,
                )
            })
            .collect();
        let b: Vec<Point2> = a.iter().map(|p| m.apply(*p)).collect();
        let grid = space.fit(&a, &b, 0.0).unwrap();
        for (g, s) in grid.iter().zip(regular_grid(5)) {
            assert!(g.distance(&m.apply(s)) < 1e-8);
        }
    }

    #[test]
    fn bank_modes_span_the_bank() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let warps: Vec<TpsWarp> = (0..3)
            .map(|_| random_smooth_warp(6, 0.05, &mut rng))
            .collect();
        let space = BankSubspace::from_warps(6, &warps, 8);
        assert_eq!(space.dim(), 9);
        let grid = regular_grid(6);
        let a: Vec<Point2> = (0..200)
            .map(|i| {
                Point2::new(
                    -0.9 + 0.009 * i as f64,
                    ((i * 37) % 101) as f64 / 56.0 - 0.9,
                )
            })
            .collect();
        let b: Vec<Point2> = a.iter().map(|p| warps[1].apply(*p)).collect();
        let fitted = space.fit(&a, &b, 0.0).unwrap();
        for (f, g) in fitted.iter().zip(&grid) {
            assert!(f.distance(&warps[1].apply(*g)) < 1e-6);
        }
    }

    #[test]
    fn affine_consensus_drops_outliers() {
        let m = TpsWarp::affine(&regular_grid(3), [[0.9, -0.2], [0.2, 0.9]], [0.1, 0.0]);
        let a: Vec<Point2> = (0..30)
            .map(|i| Point2::new(-0.9 + 0.06 * i as f64, ((i * 13) % 17) as f64 / 9.0 - 0.9))
            .collect();
        let mut b: Vec<Point2> = a.iter().map(|p| m.apply(*p)).collect();
        for i in [2, 11, 19, 27] {
            b[i] = Point2::new(b[i].x + 0.5, b[i].y - 0.3);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let keep = affine_inliers(&a, &b, 1e-6, 200, &mut rng);
        assert_eq!(
            keep,
            (0..30)
                .filter(|i| ![2, 11, 19, 27].contains(i))
                .collect::<Vec<_>>()
        );
    }
}
