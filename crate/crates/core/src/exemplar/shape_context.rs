//! Log-polar shape-context descriptors and χ² matching cost.

use crate::tps::Point2;

pub const RADIAL_BINS: usize = 5;
pub const ANGULAR_BINS: usize = 12;
const R_INNER: f64 = 0.125;
const R_OUTER: f64 = 2.0;

/// One normalized histogram per point, `RADIAL_BINS × ANGULAR_BINS` entries,
/// radius-major. Distances are scaled by the mean pairwise distance so the
/// descriptor is translation and scale invariant (not rotation invariant).
pub fn shape_contexts(points: &[Point2]) -> Vec<Vec<f64>> {
    let n = points.len();
    let bins = RADIAL_BINS * ANGULAR_BINS;
    if n < 2 {
        return vec![vec![0.0; bins]; n];
    }

    let mut mean_dist = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            mean_dist += points[i].distance(&points[j]);
        }
    }
    mean_dist /= (n * (n - 1) / 2) as f64;
    if mean_dist == 0.0 {
        return vec![vec![0.0; bins]; n];
    }

    let log_inner = R_INNER.ln();
    let log_step = (R_OUTER.ln() - log_inner) / RADIAL_BINS as f64;
    let edges: Vec<f64> = (1..=RADIAL_BINS)
        .map(|m| (log_inner + m as f64 * log_step).exp())
        .collect();

    let two_pi = std::f64::consts::TAU;
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut hist = vec![0.0; bins];
            let mut total = 0.0;
            for (j, q) in points.iter().enumerate() {
                if i == j {
                    continue;
                }
                let r = p.distance(q) / mean_dist;
                if r == 0.0 || r >= R_OUTER {
                    continue;
                }
                let rb = edges.iter().position(|&e| r < e).unwrap_or(RADIAL_BINS - 1);
                let theta = (q.y - p.y).atan2(q.x - p.x).rem_euclid(two_pi);
                let ab = ((theta / two_pi * ANGULAR_BINS as f64) as usize).min(ANGULAR_BINS - 1);
                hist[rb * ANGULAR_BINS + ab] += 1.0;
                total += 1.0;
            }
            if total > 0.0 {
                hist.iter_mut().for_each(|h| *h /= total);
            }
            hist
        })
        .collect()
}

/// `½ Σ (g − h)² / (g + h)` over bins where `g + h > 0`.
pub fn chi_squared(g: &[f64], h: &[f64]) -> f64 {
    0.5 * g
        .iter()
        .zip(h)
        .filter(|(a, b)| **a + **b > 0.0)
        .map(|(a, b)| (a - b).powi(2) / (a + b))
        .sum::<f64>()
}

pub fn cost_matrix(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .map(|ga| b.iter().map(|hb| chi_squared(ga, hb)).collect())
        .collect()
}
