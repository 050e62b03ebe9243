//! Seeded generators for silhouettes, warps, textured images and a small rigid
//! scene. Used by the experiments, the toy dataset and the test suites.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::Rng;

use crate::raster::{Mask, RgbImageF};
use crate::tps::{self, ImageFrame, Point2, TpsWarp};

/// Star-shaped blob: radius `r(θ) = r₀ (1 + Σ a_k cos(kθ + φ_k))` around a
/// jittered center.
pub fn random_blob_mask(width: u32, height: u32, rng: &mut impl Rng) -> Mask {
    let min_side = width.min(height) as f64;
    let cx = width as f64 / 2.0 + rng.random_range(-0.05..0.05) * width as f64;
    let cy = height as f64 / 2.0 + rng.random_range(-0.05..0.05) * height as f64;
    let r0 = min_side * rng.random_range(0.26..0.34);
    let harmonics: Vec<(f64, f64, f64)> = (2..=5)
        .map(|k| {
            let amp = rng.random_range(0.0..0.22) / k as f64 * 2.0;
            (k as f64, amp, rng.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    Mask::from_fn(width, height, |x, y| {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        let theta = dy.atan2(dx);
        let r = r0
            * (1.0
                + harmonics
                    .iter()
                    .map(|(k, a, p)| a * (k * theta + p).cos())
                    .sum::<f64>());
        dx.hypot(dy) < r
    })
}

/// Deformed `k × k` lattice: a random mild affine map plus a low-frequency
/// sinusoidal displacement of the given amplitude (normalized units).
pub fn random_smooth_grid(k: usize, amplitude: f64, rng: &mut impl Rng) -> Vec<Point2> {
    let theta: f64 = rng.random_range(-0.1..0.1);
    let s: f64 = rng.random_range(0.92..1.08);
    let (c, sn) = (theta.cos() * s, theta.sin() * s);
    let t = (rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
    let fx = rng.random_range(1.0..2.5);
    let fy = rng.random_range(1.0..2.5);
    let px = rng.random_range(0.0..std::f64::consts::TAU);
    let py = rng.random_range(0.0..std::f64::consts::TAU);
    tps::regular_grid(k)
        .into_iter()
        .map(|p| {
            let ax = c * p.x - sn * p.y + t.0;
            let ay = sn * p.x + c * p.y + t.1;
            Point2::new(
                ax + amplitude * (fx * p.y + px).sin(),
                ay + amplitude * (fy * p.x + py).sin(),
            )
        })
        .collect()
}

pub fn random_smooth_warp(k: usize, amplitude: f64, rng: &mut impl Rng) -> TpsWarp {
    let system = tps::grid_system(k).expect("regular grid system");
    tps::solve_coefficients(&system, &random_smooth_grid(k, amplitude, rng))
        .expect("grid dimensions")
}

/// Random affine map on the `k × k` grid: rotation within `±max_rot`, anisotropic
/// scale in `[1 − s, 1 + s]`, shear within `±s/2` and translation within `±t`.
pub fn random_affine_warp(k: usize, max_rot: f64, s: f64, t: f64, rng: &mut impl Rng) -> TpsWarp {
    let theta = rng.random_range(-max_rot..=max_rot);
    let sx = rng.random_range(1.0 - s..=1.0 + s);
    let sy = rng.random_range(1.0 - s..=1.0 + s);
    let shear = rng.random_range(-s / 2.0..=s / 2.0);
    let (c, sn) = (theta.cos(), theta.sin());
    // R · [[sx, shear], [0, sy]]
    let a = [
        [c * sx, c * shear - sn * sy],
        [sn * sx, sn * shear + c * sy],
    ];
    let b = [rng.random_range(-t..=t), rng.random_range(-t..=t)];
    TpsWarp::affine(&tps::regular_grid(k), a, b)
}

/// Nearest-neighbour mask warp through a backward (output → input) map.
pub fn warp_mask(mask: &Mask, inverse: &TpsWarp) -> Mask {
    let frame = mask.frame();
    Mask::from_fn(mask.width(), mask.height(), |x, y| {
        let p = frame.to_pixel(inverse.apply(frame.to_normalized(Point2::new(x as f64, y as f64))));
        mask.contains_point(p)
    })
}

fn random_color(rng: &mut impl Rng) -> [f32; 3] {
    [0; 3].map(|_| rng.random_range(0.25..0.95))
}

fn background(width: u32, height: u32, rng: &mut impl Rng) -> RgbImageF {
    let base = [0; 3].map(|_| rng.random_range(0.05..0.2f32));
    RgbImageF::from_fn(width, height, |_, _| {
        let n = rng.random_range(-0.02..0.02f32);
        image::Rgb(base.map(|c| c + n))
    })
}

/// Foreground filled with a periodic two-colour pattern (stripes crossed at a
/// random angle), so local appearance repeats every `period` pixels.
pub fn repeated_texture_image(mask: &Mask, period: f64, rng: &mut impl Rng) -> RgbImageF {
    let mut img = background(mask.width(), mask.height(), rng);
    let c0 = random_color(rng);
    let c1 = random_color(rng);
    let ang = rng.random_range(0.0..std::f64::consts::PI);
    let (ca, sa) = (ang.cos(), ang.sin());
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let w = std::f64::consts::TAU / period;
    for (x, y) in mask.foreground() {
        let (xf, yf) = (x as f64, y as f64);
        let u = ca * xf + sa * yf;
        let v = -sa * xf + ca * yf;
        let t = 0.5 + 0.25 * ((w * u + phase).sin() + (w * v).sin());
        let t = t as f32;
        img.put_pixel(
            x,
            y,
            image::Rgb([0, 1, 2].map(|c| c0[c] * (1.0 - t) + c1[c] * t)),
        );
    }
    img
}

/// Foreground filled with a sum of random coloured Gaussian blobs, so local
/// appearance is distinctive.
pub fn distinct_texture_image(mask: &Mask, rng: &mut impl Rng) -> RgbImageF {
    let mut img = background(mask.width(), mask.height(), rng);
    let (w, h) = (mask.width() as f64, mask.height() as f64);
    let blobs: Vec<(f64, f64, f64, [f32; 3])> = (0..60)
        .map(|_| {
            (
                rng.random_range(0.0..w),
                rng.random_range(0.0..h),
                rng.random_range(3.0..9.0),
                [0; 3].map(|_| rng.random_range(-0.5..0.5f32)),
            )
        })
        .collect();
    let base = random_color(rng);
    for (x, y) in mask.foreground() {
        let mut c = base;
        for (bx, by, s, col) in &blobs {
            let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
            let g = (-d2 / (2.0 * s * s)).exp() as f32;
            for k in 0..3 {
                c[k] += g * col[k];
            }
        }
        img.put_pixel(x, y, image::Rgb(c.map(|v| v.clamp(0.0, 1.0))));
    }
    img
}

/// Rigid point cloud whose points are drawn as small distinctive sprites.
#[derive(Debug, Clone)]
pub struct RigidScene {
    pub points: Vec<Vector3<f64>>,
    sprites: Vec<Vec<[f32; 3]>>,
    pub sprite_radius: i64,
}

/// One orthographic rendering of a [`RigidScene`].
#[derive(Debug, Clone)]
pub struct SceneView {
    pub image: RgbImageF,
    pub mask: Mask,
    /// Pixel position of every scene point (rounded to pixel centers).
    pub points: Vec<Point2>,
    /// Depth along the viewing axis, scaled to pixel units (larger = closer).
    pub depths: Vec<f64>,
    pub visible: Vec<bool>,
    pub rotation: Rotation3<f64>,
}

impl RigidScene {
    /// `count` points spread on a flattened ellipsoid shell with a minimum
    /// spacing, each with its own random sprite.
    pub fn random(count: usize, rng: &mut impl Rng) -> Self {
        Self::random_with_spacing(count, 0.19, rng)
    }

    /// As [`RigidScene::random`] with an explicit minimum frontal spacing in
    /// scene units. Fewer than `count` points are returned when the shell
    /// cannot hold them.
    pub fn random_with_spacing(count: usize, spacing: f64, rng: &mut impl Rng) -> Self {
        let mut points: Vec<Vector3<f64>> = Vec::with_capacity(count);
        let mut attempts = 0;
        while points.len() < count && attempts < 100_000 {
            attempts += 1;
            let u: f64 = rng.random_range(-1.0..1.0);
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let r = (1.0 - u * u).sqrt();
            let depth_scale = rng.random_range(0.55..1.0);
            let p = Vector3::new(r * phi.cos(), 0.7 * u, 0.6 * r * phi.sin() * depth_scale);
            // Keep points apart in the frontal projection so sprites overlap little.
            if points
                .iter()
                .all(|q| ((q.x - p.x).powi(2) + (q.y - p.y).powi(2)).sqrt() > spacing)
            {
                points.push(p);
            }
        }
        let sprite_radius = 4;
        let side = (2 * sprite_radius + 1) as usize;
        let sprites = (0..points.len())
            .map(|_| {
                let base = random_color(rng);
                (0..side * side)
                    .map(|_| {
                        let on = rng.random_bool(0.5);
                        let v = if on { 1.0 } else { 0.15 };
                        base.map(|c| c * v)
                    })
                    .collect()
            })
            .collect();
        Self {
            points,
            sprites,
            sprite_radius,
        }
    }

    /// Orthographic view after rotating the scene by `rotation`; `scale` is
    /// pixels per scene unit. Sprites are painted back to front.
    pub fn render(
        &self,
        rotation: Rotation3<f64>,
        scale: f64,
        frame: ImageFrame,
        rng: &mut impl Rng,
    ) -> SceneView {
        let mut image = background(frame.width, frame.height, rng);
        let mut mask = Mask::new(frame.width, frame.height);
        let cx = frame.width as f64 / 2.0;
        let cy = frame.height as f64 / 2.0;
        let rotated: Vec<Vector3<f64>> = self.points.iter().map(|p| rotation * p).collect();
        let points: Vec<Point2> = rotated
            .iter()
            .map(|q| Point2::new((cx + scale * q.x).round(), (cy + scale * q.y).round()))
            .collect();
        let depths: Vec<f64> = rotated.iter().map(|q| -scale * q.z).collect();
        let mut order: Vec<usize> = (0..self.points.len()).collect();
        order.sort_by(|&a, &b| depths[a].total_cmp(&depths[b]));
        let r = self.sprite_radius;
        let side = 2 * r + 1;
        let fill_r = r + 3;
        for &i in &order {
            let (px, py) = (points[i].x as i64, points[i].y as i64);
            for dy in -fill_r..=fill_r {
                for dx in -fill_r..=fill_r {
                    let (x, y) = (px + dx, py + dy);
                    if x < 0 || y < 0 || x >= frame.width as i64 || y >= frame.height as i64 {
                        continue;
                    }
                    if dx * dx + dy * dy <= fill_r * fill_r {
                        mask.set(x as u32, y as u32, true);
                    }
                    if dx.abs() <= r && dy.abs() <= r {
                        let c = self.sprites[i][((dy + r) * side + dx + r) as usize];
                        image.put_pixel(x as u32, y as u32, image::Rgb(c));
                    }
                }
            }
        }
        let visible = points
            .iter()
            .map(|p| {
                p.x >= 0.0 && p.y >= 0.0 && p.x < frame.width as f64 && p.y < frame.height as f64
            })
            .collect();
        SceneView {
            image,
            mask,
            points,
            depths,
            visible,
            rotation,
        }
    }
}

/// Rotation about the vertical axis (azimuth) then the horizontal axis (elevation).
pub fn view_rotation(azimuth: f64, elevation: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::x_axis(), elevation)
        * Rotation3::from_axis_angle(&Vector3::y_axis(), azimuth)
}

/// Random proper rotation (uniform enough for test scenes).
pub fn random_rotation(rng: &mut impl Rng) -> Rotation3<f64> {
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let axis = if axis.norm() < 1e-6 {
        Vector3::z()
    } else {
        axis.normalize()
    };
    let m: Matrix3<f64> = Rotation3::from_axis_angle(
        &nalgebra::Unit::new_normalize(axis),
        rng.random_range(0.0..std::f64::consts::PI),
    )
    .into_inner();
    Rotation3::from_matrix_unchecked(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn blobs_are_nonempty_and_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let m = random_blob_mask(64, 48, &mut rng);
            assert!(m.count() > 200);
            assert!(!m.get(0, 0));
        }
    }

    #[test]
    fn smooth_grid_is_within_default_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let g = random_smooth_grid(10, 0.12, &mut rng);
            assert!(g.iter().all(|p| p.x.abs() <= 1.5 && p.y.abs() <= 1.5));
        }
    }

    #[test]
    fn scene_projects_points_inside_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scene = RigidScene::random(20, &mut rng);
        assert_eq!(scene.points.len(), 20);
        let view = scene.render(
            view_rotation(0.3, 0.1),
            60.0,
            ImageFrame::new(192, 160),
            &mut rng,
        );
        assert!(view.visible.iter().all(|v| *v));
        assert!(view.points.iter().all(|p| view.mask.contains_point(*p)));
    }
}
