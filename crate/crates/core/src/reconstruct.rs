//! Rank-3 rigid factorization of propagated tracks and depth snapping.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::propagate::TrackSet;
use crate::tps::Point2;

pub const DEFAULT_VISIBILITY_FRAC: f64 = 0.10;
/// Consecutive residual increases tolerated before giving up.
pub const DIVERGENCE_PATIENCE: usize = 5;
/// Relative residual growth that counts as an increase.
pub const DIVERGENCE_RTOL: f64 = 1e-6;
/// `σ₃ / σ₁` below this marks a rank-deficient (near-planar) shape.
pub const DEGENERATE_RATIO: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ReconstructError {
    #[error("no tracks to reconstruct")]
    EmptyTracks,
    #[error("insufficient data: {frames} frames and {points} points (need 3 and 4)")]
    InsufficientData { frames: usize, points: usize },
    #[error("factorization diverged after {iterations} iterations")]
    DivergedFactorization { iterations: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `2F × P` stacked observations (`x` row then `y` row per frame), centered
/// per frame over observed entries. Frame 0 is the target.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementMatrix {
    pub w: DMatrix<f64>,
    pub mask: DMatrix<bool>,
    pub frame_ids: Vec<String>,
    pub target_frame: usize,
    pub track_ids: Vec<usize>,
    /// Per-frame observed mean removed during centering.
    pub frame_means: Vec<[f64; 2]>,
    /// Uncentered target-frame observations, one per column.
    pub target_observations: Vec<Point2>,
}

impl MeasurementMatrix {
    pub fn frames(&self) -> usize {
        self.frame_ids.len()
    }

    pub fn points(&self) -> usize {
        self.track_ids.len()
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// `observations[frame][column]`; frame 0 is the target and must observe
    /// every column. Columns seen in fewer than `⌈frac·F⌉` frames are dropped,
    /// as are frames left without observations.
    pub fn from_observations(
        frame_ids: Vec<String>,
        track_ids: Vec<usize>,
        observations: &[Vec<Option<Point2>>],
        min_visibility_frac: f64,
    ) -> Result<Self, ReconstructError> {
        if track_ids.is_empty() || frame_ids.is_empty() {
            return Err(ReconstructError::EmptyTracks);
        }
        let f = frame_ids.len();
        let needed = ((min_visibility_frac * f as f64) - 1e-9).ceil().max(1.0) as usize;
        let keep_cols: Vec<usize> = (0..track_ids.len())
            .filter(|&p| {
                observations[0][p].is_some()
                    && observations.iter().filter(|row| row[p].is_some()).count() >= needed
            })
            .collect();
        if keep_cols.is_empty() {
            return Err(ReconstructError::EmptyTracks);
        }
        let keep_frames: Vec<usize> = (0..f)
            .filter(|&fr| fr == 0 || keep_cols.iter().any(|&p| observations[fr][p].is_some()))
            .collect();
        let (nf, np) = (keep_frames.len(), keep_cols.len());
        let mut w = DMatrix::zeros(2 * nf, np);
        let mut mask = DMatrix::from_element(2 * nf, np, false);
        let mut frame_means = Vec::with_capacity(nf);
        for (r, &fr) in keep_frames.iter().enumerate() {
            let obs: Vec<(usize, Point2)> = keep_cols
                .iter()
                .enumerate()
                .filter_map(|(c, &p)| observations[fr][p].map(|q| (c, q)))
                .collect();
            let n = obs.len() as f64;
            let mean = [
                obs.iter().map(|(_, q)| q.x).sum::<f64>() / n,
                obs.iter().map(|(_, q)| q.y).sum::<f64>() / n,
            ];
            for (c, q) in obs {
                w[(2 * r, c)] = q.x - mean[0];
                w[(2 * r + 1, c)] = q.y - mean[1];
                mask[(2 * r, c)] = true;
                mask[(2 * r + 1, c)] = true;
            }
            frame_means.push(mean);
        }
        Ok(Self {
            w,
            mask,
            frame_ids: keep_frames.iter().map(|&i| frame_ids[i].clone()).collect(),
            target_frame: 0,
            track_ids: keep_cols.iter().map(|&p| track_ids[p]).collect(),
            frame_means,
            target_observations: keep_cols
                .iter()
                .map(|&p| observations[0][p].expect("target observes kept columns"))
                .collect(),
        })
    }
}

/// Target image first, other images in id order; columns in track-id order.
pub fn build_measurement_matrix(
    tracks: &TrackSet,
    min_visibility_frac: f64,
) -> Result<MeasurementMatrix, ReconstructError> {
    if tracks.is_empty() {
        return Err(ReconstructError::EmptyTracks);
    }
    let mut frame_ids = vec![tracks.target_image.clone()];
    frame_ids.extend(
        tracks
            .image_counts()
            .into_keys()
            .filter(|i| *i != tracks.target_image),
    );
    let track_ids: Vec<usize> = tracks.tracks.keys().copied().collect();
    let observations: Vec<Vec<Option<Point2>>> = frame_ids
        .iter()
        .map(|img| {
            tracks
                .tracks
                .values()
                .map(|t| t.get(img).map(|p| p.point))
                .collect()
        })
        .collect();
    MeasurementMatrix::from_observations(frame_ids, track_ids, &observations, min_visibility_frac)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorizeOptions {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for FactorizeOptions {
    fn default() -> Self {
        Self {
            max_iters: 3000,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    /// One 3D point per measurement column.
    pub shape: Vec<[f64; 3]>,
    /// Scaled-orthonormal `2 × 3` camera rows per frame.
    pub rotations: Vec<[[f64; 3]; 2]>,
    /// Per-frame image translation in uncentered pixels.
    pub translations: Vec<[f64; 2]>,
    /// RMSE over observed entries, pixels.
    pub residual: f64,
    pub residual_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub degenerate_rank: bool,
}

/// Coefficients of `aᵀCb` in the upper-triangle entries of a symmetric `C`.
fn sym_row(a: &[f64], b: &[f64]) -> Vec<f64> {
    let r = a.len();
    let mut out = Vec::with_capacity(r * (r + 1) / 2);
    for i in 0..r {
        for j in i..r {
            out.push(if i == j {
                a[i] * b[i]
            } else {
                a[i] * b[j] + a[j] * b[i]
            });
        }
    }
    out
}

fn motion_rows(m: &DMatrix<f64>, f: usize) -> (Vector3<f64>, Vector3<f64>) {
    let r = |i: usize| Vector3::new(m[(i, 0)], m[(i, 1)], m[(i, 2)]);
    (r(2 * f), r(2 * f + 1))
}

fn row_vec(m: &DMatrix<f64>, r: usize) -> Vec<f64> {
    m.row(r).iter().copied().collect()
}

/// `Q` with `M̂Q` closest (least squares over `C = QQᵀ`) to equal-norm,
/// orthogonal row pairs; the target frame's first row gets unit norm.
fn metric_upgrade(m_hat: &DMatrix<f64>, target: usize) -> Result<DMatrix<f64>, ReconstructError> {
    let f = m_hat.nrows() / 2;
    let rank = m_hat.ncols();
    let unknowns = rank * (rank + 1) / 2;
    let mut a = DMatrix::zeros(2 * f, unknowns);
    for fr in 0..f {
        let (x, y) = (row_vec(m_hat, 2 * fr), row_vec(m_hat, 2 * fr + 1));
        let (gxx, gyy, gxy) = (sym_row(&x, &x), sym_row(&y, &y), sym_row(&x, &y));
        for k in 0..unknowns {
            a[(2 * fr, k)] = gxx[k] - gyy[k];
            a[(2 * fr + 1, k)] = gxy[k];
        }
    }
    // Smallest right singular vector of A via the normal matrix.
    let eig = SymmetricEigen::new(a.transpose() * &a);
    let imin = (0..unknowns)
        .min_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]))
        .expect("nonempty spectrum");
    let mut c: Vec<f64> = eig.eigenvectors.column(imin).iter().copied().collect();
    let tx = row_vec(m_hat, 2 * target);
    let mut s: f64 = sym_row(&tx, &tx).iter().zip(&c).map(|(g, v)| g * v).sum();
    if s.abs() < 1e-300 {
        return Err(ReconstructError::Numerical(
            "metric upgrade normalization vanished".into(),
        ));
    }
    if s < 0.0 {
        c.iter_mut().for_each(|v| *v = -*v);
        s = -s;
    }
    c.iter_mut().for_each(|v| *v /= s);
    let mut cm = DMatrix::zeros(rank, rank);
    let mut k = 0;
    for i in 0..rank {
        for j in i..rank {
            cm[(i, j)] = c[k];
            cm[(j, i)] = c[k];
            k += 1;
        }
    }
    let e = SymmetricEigen::new(cm);
    let lmax = e.eigenvalues.max();
    if !(lmax > 0.0) || !lmax.is_finite() {
        return Err(ReconstructError::Numerical(
            "metric upgrade has no positive direction".into(),
        ));
    }
    let floor = 1e-9 * lmax;
    let sqrt_l = DMatrix::from_diagonal(&e.eigenvalues.map(|l| l.max(floor).sqrt()));
    Ok(e.eigenvectors * sqrt_l)
}

/// Nearest scaled-orthonormal row pair (common scale = mean singular value).
fn project_motion(m: &mut DMatrix<f64>) {
    let f = m.nrows() / 2;
    for fr in 0..f {
        let block = m.rows(2 * fr, 2).into_owned();
        let svd = block.svd(true, true);
        let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
        let s = 0.5 * (svd.singular_values[0] + svd.singular_values[1]);
        let proj = u * vt * s;
        m.rows_mut(2 * fr, 2).copy_from(&proj);
    }
}

/// Least-squares shape per column over observed rows (minimum-norm when
/// underdetermined).
fn solve_shape(
    w: &DMatrix<f64>,
    mask: &DMatrix<bool>,
    m: &DMatrix<f64>,
    t: &DVector<f64>,
) -> DMatrix<f64> {
    let (rows, cols) = w.shape();
    let rank = m.ncols();
    let mut s = DMatrix::zeros(rank, cols);
    for p in 0..cols {
        let obs: Vec<usize> = (0..rows).filter(|&r| mask[(r, p)]).collect();
        let a = DMatrix::from_fn(obs.len(), rank, |i, k| m[(obs[i], k)]);
        let b = DVector::from_fn(obs.len(), |i, _| w[(obs[i], p)] - t[obs[i]]);
        let sol = a.svd(true, true).solve(&b, 1e-12).expect("svd has u and v");
        s.set_column(p, &sol);
    }
    s
}

/// Fill → rank-3 truncation → metric upgrade → motion projection, repeated
/// until the observed-entry RMSE changes by less than `tol`. Missing entries
/// start at the column mean of the observed entries of the same coordinate.
/// `DIVERGENCE_PATIENCE` consecutive relative increases above
/// `DIVERGENCE_RTOL` fail with `DivergedFactorization`.
///
/// When the initial fill has `σ₃ < 10⁻⁶ σ₁` the result is flagged
/// `degenerate_rank` and a planar (rank-2) model is fitted instead: the shape
/// lies in its own `z = 0` plane and motion rows are not projected.
pub fn factorize_rigid(
    m: &MeasurementMatrix,
    opts: &FactorizeOptions,
) -> Result<Reconstruction, ReconstructError> {
    let (rows, cols) = m.w.shape();
    let frames = rows / 2;
    if frames < 3 || cols < 4 {
        return Err(ReconstructError::InsufficientData {
            frames,
            points: cols,
        });
    }
    let observed = m.observed_count() as f64;
    let mut filled = m.w.clone();
    for p in 0..cols {
        for parity in 0..2 {
            let vals: Vec<f64> = (parity..rows)
                .step_by(2)
                .filter(|&r| m.mask[(r, p)])
                .map(|r| m.w[(r, p)])
                .collect();
            let mean = if vals.is_empty() {
                0.0
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            };
            for r in (parity..rows).step_by(2) {
                if !m.mask[(r, p)] {
                    filled[(r, p)] = mean;
                }
            }
        }
    }

    let mut history = Vec::new();
    let mut degenerate_rank = false;
    let mut increases = 0;
    let mut best: Option<(DMatrix<f64>, DMatrix<f64>, DVector<f64>, f64)> = None;
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..opts.max_iters {
        iterations = it + 1;
        let t_fill = DVector::from_fn(rows, |r, _| filled.row(r).mean());
        let centered = &filled - &t_fill * DMatrix::from_element(1, cols, 1.0);
        let svd = centered.svd(true, false);
        let u = svd.u.as_ref().expect("u requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
        if order.len() < 3 {
            return Err(ReconstructError::InsufficientData {
                frames,
                points: cols,
            });
        }
        let sv: Vec<f64> = order
            .iter()
            .take(3)
            .map(|&i| svd.singular_values[i])
            .collect();
        if it == 0 {
            degenerate_rank = sv[2] < DEGENERATE_RATIO * sv[0];
        }
        let rank = if degenerate_rank { 2 } else { 3 };
        let m_hat = DMatrix::from_fn(rows, rank, |r, k| u[(r, order[k])] * sv[k].sqrt());
        let q = metric_upgrade(&m_hat, m.target_frame)?;
        let mut motion = m_hat * q;
        if rank == 3 {
            project_motion(&mut motion);
        }

        let shape = solve_shape(&m.w, &m.mask, &motion, &t_fill);
        let model = &motion * &shape;
        let t = DVector::from_fn(rows, |r, _| {
            let obs: Vec<f64> = (0..cols)
                .filter(|&p| m.mask[(r, p)])
                .map(|p| m.w[(r, p)] - model[(r, p)])
                .collect();
            if obs.is_empty() {
                t_fill[r]
            } else {
                obs.iter().sum::<f64>() / obs.len() as f64
            }
        });
        let mut sq = 0.0;
        for p in 0..cols {
            for r in 0..rows {
                let est = model[(r, p)] + t[r];
                if m.mask[(r, p)] {
                    sq += (m.w[(r, p)] - est).powi(2);
                } else {
                    filled[(r, p)] = est;
                }
            }
        }
        let rmse = (sq / observed).sqrt();
        if !rmse.is_finite() {
            return Err(ReconstructError::Numerical("non-finite residual".into()));
        }
        let prev = history.last().copied();
        history.push(rmse);
        if best.as_ref().is_none_or(|b| rmse <= b.3) {
            best = Some((motion, shape, t, rmse));
        }
        if let Some(prev) = prev {
            if (prev - rmse).abs() < opts.tol {
                converged = true;
                break;
            }
            if rmse > prev * (1.0 + DIVERGENCE_RTOL) {
                increases += 1;
                if increases >= DIVERGENCE_PATIENCE {
                    return Err(ReconstructError::DivergedFactorization { iterations });
                }
            } else {
                increases = 0;
            }
        }
    }

    let (motion, shape, t, residual) = best.expect("at least one iteration");
    let motion = motion.resize_horizontally(3, 0.0);
    let shape = shape.resize_vertically(3, 0.0);
    Ok(Reconstruction {
        shape: (0..cols)
            .map(|p| [shape[(0, p)], shape[(1, p)], shape[(2, p)]])
            .collect(),
        rotations: (0..frames)
            .map(|f| {
                let (x, y) = motion_rows(&motion, f);
                [[x.x, x.y, x.z], [y.x, y.y, y.z]]
            })
            .collect(),
        translations: (0..frames)
            .map(|f| {
                [
                    t[2 * f] + m.frame_means[f][0],
                    t[2 * f + 1] + m.frame_means[f][1],
                ]
            })
            .collect(),
        residual,
        residual_history: history,
        iterations,
        converged,
        degenerate_rank,
    })
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

/// Target-frame observations for `x, y`; `z` is the reconstructed point along
/// the target camera's viewing axis, in the same pixel scale.
pub fn xy_snap(recon: &Reconstruction, m: &MeasurementMatrix) -> Vec<[f64; 3]> {
    let [r1, r2] = recon.rotations[m.target_frame];
    let (r1, r2) = (v3(r1), v3(r2));
    let n = r1.norm();
    let axis = if n > 0.0 {
        r1.cross(&r2) / n
    } else {
        Vector3::zeros()
    };
    m.target_observations
        .iter()
        .zip(&recon.shape)
        .map(|(p, s)| [p.x, p.y, axis.dot(&v3(*s))])
        .collect()
}

/// ASCII PLY with double `x y z` and an int `track_id` per vertex.
pub fn write_ply<W: Write>(
    mut w: W,
    points: &[[f64; 3]],
    track_ids: &[usize],
) -> Result<(), ReconstructError> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", points.len())?;
    writeln!(w, "property double x")?;
    writeln!(w, "property double y")?;
    writeln!(w, "property double z")?;
    writeln!(w, "property int track_id")?;
    writeln!(w, "end_header")?;
    for (p, id) in points.iter().zip(track_ids) {
        writeln!(w, "{} {} {} {}", p[0], p[1], p[2], id)?;
    }
    Ok(())
}

/// RMSE after the best similarity transform (reflections allowed) taking
/// `a` onto `b`.
pub fn procrustes_rmse(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let n = a.len();
    let to_mat = |v: &[[f64; 3]]| {
        let m = DMatrix::from_fn(n, 3, |i, k| v[i][k]);
        let mean = DMatrix::from_fn(1, 3, |_, k| m.column(k).mean());
        let ones = DMatrix::from_element(n, 1, 1.0);
        &m - ones * mean
    };
    let (ca, cb) = (to_mat(a), to_mat(b));
    let na = ca.norm_squared();
    if na == 0.0 {
        return (cb.norm_squared() / n as f64).sqrt();
    }
    let h = ca.transpose() * &cb;
    let svd = h.svd(true, true);
    let r = svd.u.as_ref().expect("u") * svd.v_t.as_ref().expect("v");
    let s = svd.singular_values.sum() / na;
    let diff = ca * r * s - cb;
    (diff.norm_squared() / n as f64).sqrt()
}

/// Largest pairwise distance.
pub fn diameter(points: &[[f64; 3]]) -> f64 {
    let mut d: f64 = 0.0;
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            d = d.max(v3(*p).metric_distance(&v3(*q)));
        }
    }
    d
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagate::TrackPoint;
    use std::collections::BTreeMap;

    fn track_set(frames: usize, points: usize, seen: impl Fn(usize, usize) -> bool) -> TrackSet {
        let mut tracks = BTreeMap::new();
        for p in 0..points {
            let mut t = BTreeMap::new();
            for f in 0..frames {
                if f == 0 || seen(f, p) {
                    t.insert(
                        format!("img{f:02}"),
                        TrackPoint {
                            keypoint: p,
                            point: Point2::new((p * 3 + f) as f64, (p * p) as f64 * 0.5 + f as f64),
                            cost: 0.0,
                        },
                    );
                }
            }
            tracks.insert(p, t);
        }
        TrackSet {
            target_image: "img00".into(),
            tracks,
        }
    }

    #[test]
    fn full_tracks_give_full_mask_and_zero_means() {
        let m = build_measurement_matrix(&track_set(5, 6, |_, _| true), 0.1).unwrap();
        assert!(m.mask.iter().all(|b| *b));
        for r in 0..m.w.nrows() {
            assert!(m.w.row(r).sum().abs() < 1e-12);
        }
        assert_eq!(m.frame_ids[0], "img00");
    }

    #[test]
    fn rarely_seen_tracks_are_dropped() {
        // track 0 seen only in the target frame: 1 of 20 frames
        let m = build_measurement_matrix(&track_set(20, 5, |_, p| p != 0), 0.1).unwrap();
        assert_eq!(m.track_ids, vec![1, 2, 3, 4]);
        assert!(matches!(
            build_measurement_matrix(&TrackSet::default(), 0.1),
            Err(ReconstructError::EmptyTracks)
        ));
    }

    #[test]
    fn visibility_threshold_uses_exact_ceiling() {
        // 30 frames: 0.1·30 needs 3 frames despite floating-point rounding
        let m = build_measurement_matrix(&track_set(30, 5, |f, p| p != 0 || f < 3), 0.1).unwrap();
        assert_eq!(m.track_ids.len(), 5);
    }

    #[test]
    fn too_little_data_is_rejected() {
        let m = build_measurement_matrix(&track_set(2, 6, |_, _| true), 0.1).unwrap();
        assert!(matches!(
            factorize_rigid(&m, &FactorizeOptions::default()),
            Err(ReconstructError::InsufficientData { .. })
        ));
    }

    #[test]
    fn spearman_and_procrustes_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 35.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        let a = [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 2.0, 0.0],
            [0.0, 0.0, 3.0],
        ];
        let b: Vec<[f64; 3]> = a
            .iter()
            .map(|p| [2.0 * p[1] + 1.0, -2.0 * p[0], 2.0 * p[2] - 4.0])
            .collect();
        assert!(procrustes_rmse(&a, &b) < 1e-12);
        let mirrored: Vec<[f64; 3]> = a.iter().map(|p| [p[0], p[1], -p[2]]).collect();
        assert!(procrustes_rmse(&a, &mirrored) < 1e-12);
    }

    #[test]
    fn ply_layout() {
        let mut buf = Vec::new();
        write_ply(&mut buf, &[[1.0, 2.5, -3.0]], &[7]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("ply\nformat ascii 1.0\nelement vertex 1\n"));
        assert!(s.ends_with("end_header\n1 2.5 -3 7\n"));
    }
}
