use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use warpmatch::exemplar::{
    generate_pair, mine_exemplar_bank, silhouette_matching_cost, ExemplarWarp, ExemplarWarpBank,
    Silhouette,
};
use warpmatch::raster::{Mask, RgbImageF};
use warpmatch::synthetic::{
    distinct_texture_image, random_blob_mask, random_smooth_warp, warp_mask,
};
use warpmatch::tps::{regular_grid, Point2, TpsWarp};

fn ellipse(angle_deg: f64) -> Silhouette {
    let (s, c) = angle_deg.to_radians().sin_cos();
    Silhouette::from_mask(Mask::from_fn(120, 120, |x, y| {
        let (dx, dy) = (x as f64 - 60.0, y as f64 - 60.0);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / 45.0).powi(2) + (v / 22.0).powi(2) <= 1.0
    }))
    .unwrap()
}

fn star() -> Silhouette {
    Silhouette::from_mask(Mask::from_fn(120, 120, |x, y| {
        let (dx, dy) = (x as f64 - 60.0, y as f64 - 60.0);
        let t = dy.atan2(dx);
        dx.hypot(dy) <= 25.0 + 20.0 * (5.0 * t).cos().max(0.0).powi(2)
    }))
    .unwrap()
}

#[test]
fn rotated_ellipse_is_closer_than_a_star() {
    let e = ellipse(0.0);
    let rotated = silhouette_matching_cost(&e, &ellipse(30.0), 100).unwrap();
    let starred = silhouette_matching_cost(&e, &star(), 100).unwrap();
    assert!(rotated < starred, "rotated {rotated} vs star {starred}");
}

fn smooth_pairs(count: usize) -> Vec<(Silhouette, Silhouette)> {
    (0..count as u64)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_blob_mask(80, 80, &mut rng);
            let warp = random_smooth_warp(5, 0.08, &mut rng);
            let b = warp_mask(&a, &warp);
            (
                Silhouette::from_mask(a).unwrap(),
                Silhouette::from_mask(b).unwrap(),
            )
        })
        .collect()
}

#[test]
fn percentile_band_keeps_forty_of_a_hundred_and_brackets_the_distribution() {
    let pairs = smooth_pairs(100);
    let all = mine_exemplar_bank(&pairs, 0.0, 100.0).unwrap();
    assert_eq!(all.len(), 100);
    let band = mine_exemplar_bank(&pairs, 50.0, 90.0).unwrap();
    assert_eq!(band.len(), 40);

    let mut energies: Vec<f64> = all.warps.iter().map(|w| w.energy.mean_energy).collect();
    energies.sort_by(f64::total_cmp);
    let kept: Vec<f64> = band.warps.iter().map(|w| w.energy.mean_energy).collect();
    let lo = kept.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = kept.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(lo, energies[50]);
    assert_eq!(hi, energies[89]);
}

#[test]
fn identical_silhouettes_yield_zero_energy_warps() {
    let pairs: Vec<_> = smooth_pairs(12)
        .into_iter()
        .map(|(a, _)| (a.clone(), a))
        .collect();
    let bank = mine_exemplar_bank(&pairs, 50.0, 90.0).unwrap();
    assert_eq!(bank.len(), 4);
    for w in &bank.warps {
        assert!(w.energy.mean_energy.abs() < 1e-12);
    }
}

fn scene(seed: u64) -> (RgbImageF, Mask) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = random_blob_mask(72, 64, &mut rng);
    (distinct_texture_image(&mask, &mut rng), mask)
}

fn single(warp: TpsWarp) -> ExemplarWarpBank {
    ExemplarWarpBank::from_warps(vec![ExemplarWarp::from_forward(warp).unwrap()])
}

#[test]
fn identity_bank_leaves_the_image_untouched() {
    let (img, mask) = scene(1);
    let bank = single(TpsWarp::identity(&regular_grid(4)));
    let pair = generate_pair("img", &img, &mask, &bank, 50, false, 3).unwrap();
    assert_eq!(pair.warped_mask, mask);
    for (a, b) in pair.warped_image.pixels().zip(img.pixels()) {
        for c in 0..3 {
            assert!((a.0[c] - b.0[c]).abs() < 1e-5);
        }
    }
    for (p, q) in &pair.correspondences {
        assert!(p.distance(q) < 1e-9);
    }
}

#[test]
fn same_seed_gives_identical_pairs() {
    let (img, mask) = scene(2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let bank = ExemplarWarpBank::from_warps(
        (0..4)
            .map(|_| ExemplarWarp::from_forward(random_smooth_warp(6, 0.05, &mut rng)).unwrap())
            .collect(),
    );
    let a = generate_pair("img", &img, &mask, &bank, 100, true, 42).unwrap();
    let b = generate_pair("img", &img, &mask, &bank, 100, true, 42).unwrap();
    assert_eq!(a, b);
    let c = generate_pair("img", &img, &mask, &bank, 100, true, 43).unwrap();
    assert_ne!(a.correspondences, c.correspondences);
}

#[test]
fn scaling_warp_scales_normalized_correspondences() {
    let (img, mask) = scene(3);
    let bank = single(TpsWarp::affine(
        &regular_grid(4),
        [[1.1, 0.0], [0.0, 1.1]],
        [0.0, 0.0],
    ));
    let pair = generate_pair("img", &img, &mask, &bank, 100, false, 7).unwrap();
    let frame = mask.frame();
    for (p, q) in &pair.correspondences {
        let pn = frame.to_normalized(*p);
        let expected = frame.to_pixel(Point2::new(1.1 * pn.x, 1.1 * pn.y));
        assert!(q.distance(&expected) <= 0.5);
    }
}

#[test]
fn correspondences_are_exact_and_on_the_foreground() {
    let (img, mask) = scene(4);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let bank = single(random_smooth_warp(10, 0.06, &mut rng));
    let pair = generate_pair("img", &img, &mask, &bank, 100, true, 9).unwrap();
    assert_eq!(pair.correspondences.len(), 100);
    let frame = mask.frame();
    for (p, q) in &pair.correspondences {
        assert!(mask.contains_point(*p));
        let moved = pair.applied_warp.apply(frame.to_normalized(*p));
        assert!(moved.distance(&frame.to_normalized(*q)) < 1e-8);
    }
    let jitter = pair.chromatic.unwrap();
    for j in jitter {
        assert!((0.8..=1.2).contains(&j.scale) && (-0.1..=0.1).contains(&j.shift));
    }
}
