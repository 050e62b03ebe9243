use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warpmatch::synthetic::random_smooth_grid;
use warpmatch::tps::{
    apply_warp, grid_system, regular_grid, solve_coefficients, warp_energy, warp_points_jacobian,
    Point2, TpsWarp,
};

/// Second derivatives `(fxx, fxy, fyy)` of `Σ wᵢ U(‖p − sᵢ‖)` with `U = s ln s`, `s = r²`.
fn hessian(warp_w: &[f64], src: &[Point2], p: Point2) -> (f64, f64, f64) {
    let mut h = (0.0, 0.0, 0.0);
    for (w, c) in warp_w.iter().zip(src) {
        let (dx, dy) = (p.x - c.x, p.y - c.y);
        let s = dx * dx + dy * dy;
        let l = 2.0 * (s.ln() + 1.0);
        h.0 += w * (l + 4.0 * dx * dx / s);
        h.1 += w * (4.0 * dx * dy / s);
        h.2 += w * (l + 4.0 * dy * dy / s);
    }
    h
}

fn bending_integrand(w: &[f64], src: &[Point2], p: Point2) -> f64 {
    let (a, b, c) = hessian(w, src, p);
    a * a + 2.0 * b * b + c * c
}

/// Midpoint rule over `[-outer, outer]²`, fine inside `[-inner, inner]²`.
fn bending_quadrature(w: &[f64], src: &[Point2]) -> f64 {
    let (inner, h_in) = (1.5f64, 0.004f64);
    let (outer, h_out) = (60.0f64, 0.05f64);
    let mut total = 0.0;
    let n_in = (2.0 * inner / h_in).round() as i64;
    for i in 0..n_in {
        for j in 0..n_in {
            let p = Point2::new(
                -inner + (i as f64 + 0.5) * h_in,
                -inner + (j as f64 + 0.5) * h_in,
            );
            total += bending_integrand(w, src, p) * h_in * h_in;
        }
    }
    let n_out = (2.0 * outer / h_out).round() as i64;
    for i in 0..n_out {
        for j in 0..n_out {
            let p = Point2::new(
                -outer + (i as f64 + 0.5) * h_out,
                -outer + (j as f64 + 0.5) * h_out,
            );
            if p.x.abs() < inner && p.y.abs() < inner {
                continue;
            }
            total += bending_integrand(w, src, p) * h_out * h_out;
        }
    }
    total
}

#[test]
fn bending_energy_is_proportional_to_the_bending_integral() {
    let system = grid_system(3).unwrap();
    for seed in 0..2 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let warp = solve_coefficients(&system, &random_smooth_grid(3, 0.15, &mut rng)).unwrap();
        let e = warp_energy(&warp, &system).unwrap().bending;
        let integral = bending_quadrature(&warp.wx, &warp.source_points)
            + bending_quadrature(&warp.wy, &warp.source_points);
        let expected = 16.0 * std::f64::consts::PI * e;
        assert!(e > 0.0);
        assert!(
            (integral - expected).abs() < 0.01 * expected,
            "seed {seed}: quadrature {integral} vs 16π·wᵀKw {expected}"
        );
    }
}

#[test]
fn jacobian_times_targets_reproduces_warped_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for k in [3, 5, 8] {
        let system = grid_system(k).unwrap();
        let targets = random_smooth_grid(k, 0.1, &mut rng);
        let warp = solve_coefficients(&system, &targets).unwrap();
        let eval: Vec<Point2> = (0..25)
            .map(|_| Point2::new(rng.random_range(-1.3..1.3), rng.random_range(-1.3..1.3)))
            .collect();
        let jac = warp_points_jacobian(&system, &eval);
        let flat = nalgebra::DVector::from_iterator(
            2 * targets.len(),
            targets.iter().flat_map(|p| [p.x, p.y]),
        );
        let predicted = &jac * flat;
        for (m, q) in apply_warp(&warp, &eval).iter().enumerate() {
            assert!((predicted[2 * m] - q.x).abs() < 1e-9);
            assert!((predicted[2 * m + 1] - q.y).abs() < 1e-9);
        }
    }
}

fn grid_targets(k: usize, seed: u64, amplitude: f64) -> Vec<Point2> {
    random_smooth_grid(k, amplitude, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn assert_warp_close(a: &TpsWarp, b: &TpsWarp, tol: f64) {
    for (x, y) in
        a.wx.iter()
            .chain(&a.wy)
            .chain(&a.ax)
            .chain(&a.ay)
            .zip(b.wx.iter().chain(&b.wy).chain(&b.ax).chain(&b.ay))
    {
        assert!((x - y).abs() < tol, "{x} vs {y}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solve_is_linear_in_targets(k in 3usize..8, s1 in 0u64..1000, s2 in 0u64..1000, alpha in -2.0..2.0f64, beta in -2.0..2.0f64) {
        let system = grid_system(k).unwrap();
        let t1 = grid_targets(k, s1, 0.2);
        let t2 = grid_targets(k, s2, 0.2);
        let mix: Vec<Point2> = t1.iter().zip(&t2).map(|(a, b)| Point2::new(alpha * a.x + beta * b.x, alpha * a.y + beta * b.y)).collect();
        let w1 = solve_coefficients(&system, &t1).unwrap();
        let w2 = solve_coefficients(&system, &t2).unwrap();
        let wm = solve_coefficients(&system, &mix).unwrap();
        let combined = TpsWarp {
            source_points: w1.source_points.clone(),
            wx: w1.wx.iter().zip(&w2.wx).map(|(a, b)| alpha * a + beta * b).collect(),
            wy: w1.wy.iter().zip(&w2.wy).map(|(a, b)| alpha * a + beta * b).collect(),
            ax: [0, 1, 2].map(|i| alpha * w1.ax[i] + beta * w2.ax[i]),
            ay: [0, 1, 2].map(|i| alpha * w1.ay[i] + beta * w2.ay[i]),
        };
        assert_warp_close(&wm, &combined, 1e-8);
    }

    #[test]
    fn affine_targets_have_no_bending(k in 3usize..10, a in prop::array::uniform4(-2.0..2.0f64), b in prop::array::uniform2(-1.0..1.0f64)) {
        let system = grid_system(k).unwrap();
        let targets: Vec<Point2> = regular_grid(k)
            .iter()
            .map(|p| Point2::new(a[0] * p.x + a[1] * p.y + b[0], a[2] * p.x + a[3] * p.y + b[1]))
            .collect();
        let warp = solve_coefficients(&system, &targets).unwrap();
        prop_assert!(warp.max_weight() < 1e-8);
        prop_assert!(warp_energy(&warp, &system).unwrap().bending < 1e-12);
        prop_assert!(warp.satisfies_constraints());
    }

    #[test]
    fn solved_warps_interpolate_and_satisfy_side_constraints(k in 3usize..11, seed in 0u64..10_000) {
        let system = grid_system(k).unwrap();
        let targets = grid_targets(k, seed, 0.25);
        let warp = solve_coefficients(&system, &targets).unwrap();
        for (p, t) in apply_warp(&warp, system.source_points()).iter().zip(&targets) {
            prop_assert!(p.distance(t) < 1e-8);
        }
        prop_assert!(warp.satisfies_constraints());
        let energy = warp_energy(&warp, &system).unwrap();
        prop_assert!(energy.bending >= 0.0 && energy.affine >= 0.0);
        prop_assert!((energy.mean_energy - (energy.bending + energy.affine) / 2.0).abs() < 1e-12);
    }
}
