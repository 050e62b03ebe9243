//! Thin-plate-spline warps between 2D control-point configurations.
//!
//! A warp is parameterized by `N` source control points and the coefficient
//! block `θ = (wˣ wʸ; aˣ aʸ)` solving
//!
//! ```text
//! | K   P | |w|   |x'|
//! | Pᵀ  0 | |a| = |0 |      K_ij = U(‖x_i − x_j‖),  P_i = (1, x_i, y_i)
//! ```
//!
//! with `U(r) = r² log r²`. The system matrix only depends on the source
//! points, so it is factored once ([`SystemMatrix`]) and every solve against
//! it is a matrix-vector product. The same linearity gives the Jacobian of
//! warped points with respect to the deformed control points in closed form
//! ([`warp_points_jacobian`]), which drives [`fit_grid_to_correspondences`].
//!
//! All math runs in normalized `[-1, 1]²` coordinates; [`ImageFrame`] converts
//! pixels at the module boundary.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cap on the estimated condition number of a system matrix.
pub const DEFAULT_CONDITION_CAP: f64 = 1e12;

/// Default bound on deformed grid coordinates.
pub const DEFAULT_GRID_BOUND: f64 = 1.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TpsError {
    #[error("singular TPS system: {0}")]
    SingularSystem(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid control grid: {0}")]
    InvalidGrid(String),
}

/// A 2D point. Serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn distance_sq(&self, other: &Point2) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

/// Pixel extent of an image, used to move between pixel and normalized
/// coordinates. Pixel centers sit at integer coordinates, so the image covers
/// `[-0.5, w - 0.5] × [-0.5, h - 0.5]`, which maps onto `[-1, 1]²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageFrame {
    pub width: u32,
    pub height: u32,
}

impl ImageFrame {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    pub fn to_normalized(&self, p: Point2) -> Point2 {
        Point2::new(
            (2.0 * p.x + 1.0) / self.width as f64 - 1.0,
            (2.0 * p.y + 1.0) / self.height as f64 - 1.0,
        )
    }

    pub fn to_pixel(&self, p: Point2) -> Point2 {
        Point2::new(
            ((p.x + 1.0) * self.width as f64 - 1.0) / 2.0,
            ((p.y + 1.0) * self.height as f64 - 1.0) / 2.0,
        )
    }

    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64)
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= -0.5
            && p.y >= -0.5
            && p.x <= self.width as f64 - 0.5
            && p.y <= self.height as f64 - 0.5
    }
}

/// `U(r) = r² log r²`, with the removable singularity `U(0) = 0`.
pub fn radial_kernel(r: f64) -> f64 {
    kernel_from_sq(r * r)
}

#[inline]
fn kernel_from_sq(r2: f64) -> f64 {
    if r2 == 0.0 {
        0.0
    } else {
        r2 * r2.ln()
    }
}

/// Regular `k × k` lattice spanning `[-1, 1]²`, row-major (x varies fastest).
pub fn regular_grid(k: usize) -> Vec<Point2> {
    assert!(k >= 2, "grid side must be at least 2");
    let step = 2.0 / (k - 1) as f64;
    let mut pts = Vec::with_capacity(k * k);
    for row in 0..k {
        for col in 0..k {
            pts.push(Point2::new(
                -1.0 + col as f64 * step,
                -1.0 + row as f64 * step,
            ));
        }
    }
    pts
}

/// The factored `(N+3) × (N+3)` TPS system for a fixed set of source points.
#[derive(Debug, Clone)]
pub struct SystemMatrix {
    n: usize,
    l: DMatrix<f64>,
    l_inv: DMatrix<f64>,
    source_points: Vec<Point2>,
    condition: f64,
}

impl SystemMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn l_inv(&self) -> &DMatrix<f64> {
        &self.l_inv
    }

    pub fn source_points(&self) -> &[Point2] {
        &self.source_points
    }

    /// Ratio of extreme singular values of `L`.
    pub fn condition_estimate(&self) -> f64 {
        self.condition
    }

    /// Row vector `b(p) = [U(‖p − x_1‖) … U(‖p − x_N‖), 1, p_x, p_y]`; the warped
    /// coordinate is `b(p) · θ`.
    fn basis_row(&self, p: Point2) -> DVector<f64> {
        basis_row(&self.source_points, p)
    }
}

fn basis_row(source: &[Point2], p: Point2) -> DVector<f64> {
    let n = source.len();
    let mut b = DVector::zeros(n + 3);
    for (i, s) in source.iter().enumerate() {
        b[i] = kernel_from_sq(p.distance_sq(s));
    }
    b[n] = 1.0;
    b[n + 1] = p.x;
    b[n + 2] = p.y;
    b
}

/// Builds and inverts `L` for the given source points, rejecting systems
/// whose condition estimate exceeds [`DEFAULT_CONDITION_CAP`].
pub fn build_system(source_points: &[Point2]) -> Result<SystemMatrix, TpsError> {
    build_system_with_cap(source_points, DEFAULT_CONDITION_CAP)
}

pub fn build_system_with_cap(
    source_points: &[Point2],
    condition_cap: f64,
) -> Result<SystemMatrix, TpsError> {
    let n = source_points.len();
    if n < 3 {
        return Err(TpsError::SingularSystem(format!(
            "need at least 3 control points, got {n}"
        )));
    }
    if let Some(p) = source_points.iter().find(|p| !p.is_finite()) {
        return Err(TpsError::SingularSystem(format!(
            "non-finite control point {p:?}"
        )));
    }

    let dim = n + 3;
    let mut l = DMatrix::zeros(dim, dim);
    for i in 0..n {
        for j in (i + 1)..n {
            let u = kernel_from_sq(source_points[i].distance_sq(&source_points[j]));
            l[(i, j)] = u;
            l[(j, i)] = u;
        }
        let p = source_points[i];
        for (c, v) in [1.0, p.x, p.y].into_iter().enumerate() {
            l[(i, n + c)] = v;
            l[(n + c, i)] = v;
        }
    }

    let singular_values = l.clone().svd(false, false).singular_values;
    let s_max = singular_values.max();
    let s_min = singular_values.min();
    let condition = if s_min > 0.0 {
        s_max / s_min
    } else {
        f64::INFINITY
    };
    if !(condition <= condition_cap) {
        return Err(TpsError::SingularSystem(format!(
            "condition estimate {condition:.3e} exceeds cap {condition_cap:.1e} \
             (collinear or duplicated control points)"
        )));
    }

    let l_inv = l
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| TpsError::SingularSystem("LU factorization failed".into()))?;

    Ok(SystemMatrix {
        n,
        l,
        l_inv,
        source_points: source_points.to_vec(),
        condition,
    })
}

/// Shared system for the regular `k × k` grid. Built once per `k` and cached
/// for the life of the process.
pub fn grid_system(k: usize) -> Result<Arc<SystemMatrix>, TpsError> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<SystemMatrix>>>> = OnceLock::new();
    if k < 2 {
        return Err(TpsError::InvalidGrid(format!("grid side {k} < 2")));
    }
    let cache = CACHE.get_or_init(Default::default);
    if let Some(sys) = cache.lock().expect("grid cache poisoned").get(&k) {
        return Ok(Arc::clone(sys));
    }
    let sys = Arc::new(build_system(&regular_grid(k))?);
    let mut guard = cache.lock().expect("grid cache poisoned");
    Ok(Arc::clone(guard.entry(k).or_insert(sys)))
}

/// A solved thin-plate-spline mapping from the source frame to the target frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpsWarp {
    pub source_points: Vec<Point2>,
    pub wx: Vec<f64>,
    pub wy: Vec<f64>,
    /// Affine coefficients for x, ordered constant / x / y.
    pub ax: [f64; 3],
    pub ay: [f64; 3],
}

impl TpsWarp {
    /// The identity map expressed on the given control points.
    pub fn identity(source_points: &[Point2]) -> Self {
        let n = source_points.len();
        Self {
            source_points: source_points.to_vec(),
            wx: vec![0.0; n],
            wy: vec![0.0; n],
            ax: [0.0, 1.0, 0.0],
            ay: [0.0, 0.0, 1.0],
        }
    }

    /// An affine map `p ↦ A p + b` with no non-affine part.
    pub fn affine(source_points: &[Point2], a: [[f64; 2]; 2], b: [f64; 2]) -> Self {
        let n = source_points.len();
        Self {
            source_points: source_points.to_vec(),
            wx: vec![0.0; n],
            wy: vec![0.0; n],
            ax: [b[0], a[0][0], a[0][1]],
            ay: [b[1], a[1][0], a[1][1]],
        }
    }

    pub fn len(&self) -> usize {
        self.source_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_points.is_empty()
    }

    pub fn apply(&self, p: Point2) -> Point2 {
        let mut x = self.ax[0] + self.ax[1] * p.x + self.ax[2] * p.y;
        let mut y = self.ay[0] + self.ay[1] * p.x + self.ay[2] * p.y;
        for ((s, wx), wy) in self.source_points.iter().zip(&self.wx).zip(&self.wy) {
            let u = kernel_from_sq(p.distance_sq(s));
            x += wx * u;
            y += wy * u;
        }
        Point2::new(x, y)
    }

    /// Largest absolute value among the non-affine weights.
    pub fn max_weight(&self) -> f64 {
        self.wx
            .iter()
            .chain(&self.wy)
            .fold(0.0_f64, |m, w| m.max(w.abs()))
    }

    /// Largest absolute violation of `Σw = 0`, `Σw·x = 0`, `Σw·y = 0` over both
    /// coordinate weight vectors.
    pub fn constraint_residual(&self) -> f64 {
        let mut worst = 0.0_f64;
        for w in [&self.wx, &self.wy] {
            let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
            for (wi, p) in w.iter().zip(&self.source_points) {
                s0 += wi;
                s1 += wi * p.x;
                s2 += wi * p.y;
            }
            worst = worst.max(s0.abs()).max(s1.abs()).max(s2.abs());
        }
        worst
    }

    /// Tolerance the side constraints must meet: `1e-8 · ‖w‖∞`, floored at `1e-10`.
    pub fn constraint_tolerance(&self) -> f64 {
        (1e-8 * self.max_weight()).max(1e-10)
    }

    pub fn satisfies_constraints(&self) -> bool {
        self.constraint_residual() <= self.constraint_tolerance()
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string(self)
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

/// Solves `θ = L⁻¹ [x'; 0]` for the deformed control points, with one step of
/// iterative refinement against `L`.
pub fn solve_coefficients(system: &SystemMatrix, targets: &[Point2]) -> Result<TpsWarp, TpsError> {
    if targets.len() != system.n {
        return Err(TpsError::DimensionMismatch {
            expected: system.n,
            actual: targets.len(),
        });
    }
    let n = system.n;
    let mut rhs = DMatrix::zeros(n + 3, 2);
    for (i, t) in targets.iter().enumerate() {
        rhs[(i, 0)] = t.x;
        rhs[(i, 1)] = t.y;
    }
    let mut theta = &system.l_inv * &rhs;
    let residual = &rhs - &system.l * &theta;
    theta += &system.l_inv * residual;

    Ok(TpsWarp {
        source_points: system.source_points.clone(),
        wx: theta.view((0, 0), (n, 1)).iter().copied().collect(),
        wy: theta.view((0, 1), (n, 1)).iter().copied().collect(),
        ax: [theta[(n, 0)], theta[(n + 1, 0)], theta[(n + 2, 0)]],
        ay: [theta[(n, 1)], theta[(n + 1, 1)], theta[(n + 2, 1)]],
    })
}

/// Convenience: build the system for `source` and solve for `target`.
pub fn solve_warp(source: &[Point2], target: &[Point2]) -> Result<TpsWarp, TpsError> {
    let system = build_system(source)?;
    solve_coefficients(&system, target)
}

/// Smoothing solve with `K + λ·α²·I` in place of `K`, where `α` is the mean
/// pairwise distance between source points. `λ = 0` interpolates exactly.
pub fn solve_warp_regularized(
    source: &[Point2],
    target: &[Point2],
    lambda: f64,
) -> Result<TpsWarp, TpsError> {
    if lambda == 0.0 {
        return solve_warp(source, target);
    }
    let system = build_system(source)?;
    if target.len() != system.n {
        return Err(TpsError::DimensionMismatch {
            expected: system.n,
            actual: target.len(),
        });
    }
    let n = system.n;
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            total += source[i].distance(&source[j]);
        }
    }
    let alpha = total / (n * (n - 1) / 2) as f64;
    let mut l = system.l.clone();
    for i in 0..n {
        l[(i, i)] += lambda * alpha * alpha;
    }
    let mut rhs = DMatrix::zeros(n + 3, 2);
    for (i, t) in target.iter().enumerate() {
        rhs[(i, 0)] = t.x;
        rhs[(i, 1)] = t.y;
    }
    let theta = l
        .lu()
        .solve(&rhs)
        .ok_or_else(|| TpsError::SingularSystem("regularized system is singular".into()))?;
    Ok(TpsWarp {
        source_points: source.to_vec(),
        wx: theta.view((0, 0), (n, 1)).iter().copied().collect(),
        wy: theta.view((0, 1), (n, 1)).iter().copied().collect(),
        ax: [theta[(n, 0)], theta[(n + 1, 0)], theta[(n + 2, 0)]],
        ay: [theta[(n, 1)], theta[(n + 1, 1)], theta[(n + 2, 1)]],
    })
}

pub fn apply_warp(warp: &TpsWarp, points: &[Point2]) -> Vec<Point2> {
    points.iter().map(|&p| warp.apply(p)).collect()
}

/// Bending and affine energy of a warp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarpEnergy {
    pub bending: f64,
    pub affine: f64,
    pub mean_energy: f64,
}

impl WarpEnergy {
    pub fn new(bending: f64, affine: f64) -> Self {
        let bending = if bending < 0.0 { 0.0 } else { bending };
        let affine = affine.max(0.0);
        Self {
            bending,
            affine,
            mean_energy: 0.5 * (bending + affine),
        }
    }
}

/// `bending = wxᵀ K wx + wyᵀ K wy`; `affine = ‖A − I‖²_F` of the 2×2 linear part.
pub fn warp_energy(warp: &TpsWarp, system: &SystemMatrix) -> Result<WarpEnergy, TpsError> {
    if warp.len() != system.n {
        return Err(TpsError::DimensionMismatch {
            expected: system.n,
            actual: warp.len(),
        });
    }
    let n = system.n;
    let k = system.l.view((0, 0), (n, n));
    let wx = DVector::from_column_slice(&warp.wx);
    let wy = DVector::from_column_slice(&warp.wy);
    let bending = wx.dot(&(k * &wx)) + wy.dot(&(k * &wy));
    let affine = (warp.ax[1] - 1.0).powi(2)
        + warp.ax[2].powi(2)
        + warp.ay[1].powi(2)
        + (warp.ay[2] - 1.0).powi(2);
    Ok(WarpEnergy::new(bending, affine))
}

/// Energy of a warp computed against its own source points.
pub fn warp_energy_of(warp: &TpsWarp) -> Result<WarpEnergy, TpsError> {
    let n = warp.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let u = kernel_from_sq(warp.source_points[i].distance_sq(&warp.source_points[j]));
            k[(i, j)] = u;
            k[(j, i)] = u;
        }
    }
    let wx = DVector::from_column_slice(&warp.wx);
    let wy = DVector::from_column_slice(&warp.wy);
    let bending = wx.dot(&(&k * &wx)) + wy.dot(&(&k * &wy));
    let affine = (warp.ax[1] - 1.0).powi(2)
        + warp.ax[2].powi(2)
        + warp.ay[1].powi(2)
        + (warp.ay[2] - 1.0).powi(2);
    Ok(WarpEnergy::new(bending, affine))
}

/// `∂(warped eval points) / ∂(deformed control points)`.
///
/// Rows are interleaved per evaluation point (`2m` = x, `2m+1` = y) and columns
/// per control point (`2j` = x', `2j+1` = y'). Since `θ = L⁻¹ x'` the result is
/// independent of the targets and x outputs only depend on x targets.
pub fn warp_points_jacobian(system: &SystemMatrix, eval_points: &[Point2]) -> DMatrix<f64> {
    let n = system.n;
    let weights = coordinate_weights(system, eval_points);
    let mut jac = DMatrix::zeros(2 * eval_points.len(), 2 * n);
    for m in 0..eval_points.len() {
        for j in 0..n {
            let v = weights[(m, j)];
            jac[(2 * m, 2 * j)] = v;
            jac[(2 * m + 1, 2 * j + 1)] = v;
        }
    }
    jac
}

/// `M × N` matrix `B` such that each warped coordinate of eval point `m` is
/// `Σ_j B[m, j] · target_j` (the same weights serve x and y).
pub fn coordinate_weights(system: &SystemMatrix, eval_points: &[Point2]) -> DMatrix<f64> {
    let n = system.n;
    let l_inv_cols = system.l_inv.columns(0, n);
    let mut out = DMatrix::zeros(eval_points.len(), n);
    for (m, &p) in eval_points.iter().enumerate() {
        let b = system.basis_row(p);
        let row = b.transpose() * l_inv_cols;
        out.row_mut(m).copy_from(&row);
    }
    out
}

/// A `k × k` regular lattice and its deformed image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlGrid {
    pub k: usize,
    pub source: Vec<Point2>,
    pub target: Vec<Point2>,
}

impl ControlGrid {
    pub fn identity(k: usize) -> Self {
        let source = regular_grid(k);
        Self {
            k,
            target: source.clone(),
            source,
        }
    }

    /// Validates the target lattice against the invariants (finite, within `±bound`).
    pub fn new(k: usize, target: Vec<Point2>, bound: f64) -> Result<Self, TpsError> {
        if k < 2 {
            return Err(TpsError::InvalidGrid(format!("grid side {k} < 2")));
        }
        if target.len() != k * k {
            return Err(TpsError::DimensionMismatch {
                expected: k * k,
                actual: target.len(),
            });
        }
        if let Some(p) = target
            .iter()
            .find(|p| !p.is_finite() || p.x.abs() > bound || p.y.abs() > bound)
        {
            return Err(TpsError::InvalidGrid(format!(
                "target point {p:?} outside ±{bound}"
            )));
        }
        Ok(Self {
            k,
            source: regular_grid(k),
            target,
        })
    }

    /// Samples an existing warp on the regular lattice.
    pub fn from_warp(k: usize, warp: &TpsWarp, bound: f64) -> Self {
        let source = regular_grid(k);
        let target = source
            .iter()
            .map(|&p| {
                let q = warp.apply(p);
                Point2::new(q.x.clamp(-bound, bound), q.y.clamp(-bound, bound))
            })
            .collect();
        Self { k, source, target }
    }

    pub fn warp(&self) -> Result<TpsWarp, TpsError> {
        let system = grid_system(self.k)?;
        solve_coefficients(&system, &self.target)
    }
}

/// Step-size policy for [`fit_grid_to_correspondences`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    Fixed(f64),
    /// `1 / Lipschitz` of the objective gradient, from a power iteration.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridFitOptions {
    pub k: usize,
    pub iterations: usize,
    pub step: StepSize,
    /// Weight on the grid's bending energy added to the objective.
    pub bending_weight: f64,
    /// Deformed coordinates are projected back into `±bound` after each step.
    pub bound: f64,
}

impl Default for GridFitOptions {
    fn default() -> Self {
        Self {
            k: 10,
            iterations: 2000,
            step: StepSize::Auto,
            bending_weight: 0.0,
            bound: DEFAULT_GRID_BOUND,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridFit {
    pub grid: ControlGrid,
    /// Mean squared correspondence distance after each iteration (index 0 is
    /// the starting identity grid).
    pub history: Vec<f64>,
}

impl GridFit {
    pub fn final_mse(&self) -> f64 {
        *self.history.last().unwrap_or(&f64::NAN)
    }
}

/// Finds a deformed grid whose warp carries `source_kps` onto `target_kps`
/// (normalized coordinates) by projected gradient descent on the mean squared
/// correspondence distance, starting from the regular lattice.
pub fn fit_grid_to_correspondences(
    source_kps: &[Point2],
    target_kps: &[Point2],
    options: &GridFitOptions,
) -> Result<GridFit, TpsError> {
    if source_kps.len() != target_kps.len() {
        return Err(TpsError::DimensionMismatch {
            expected: source_kps.len(),
            actual: target_kps.len(),
        });
    }
    let m = source_kps.len();
    if m < 3 {
        return Err(TpsError::SingularSystem(format!(
            "need at least 3 correspondences, got {m}"
        )));
    }
    let system = grid_system(options.k)?;
    let n = system.n();
    let weights = coordinate_weights(&system, source_kps);

    // Objective: (1/M) ‖B g − t‖² + β gᵀ E g per coordinate, where E is the
    // bending-energy matrix of grid targets.
    let mut hessian = weights.transpose() * &weights / m as f64;
    let bending = if options.bending_weight > 0.0 {
        let l_inv_nn = system.l_inv().view((0, 0), (n, n)).clone_owned();
        let k = system.l().view((0, 0), (n, n)).clone_owned();
        let e = l_inv_nn.transpose() * k * &l_inv_nn;
        Some(e * options.bending_weight)
    } else {
        None
    };
    if let Some(e) = &bending {
        hessian += e;
    }
    let bt_tx =
        weights.transpose() * DVector::from_iterator(m, target_kps.iter().map(|p| p.x)) / m as f64;
    let bt_ty =
        weights.transpose() * DVector::from_iterator(m, target_kps.iter().map(|p| p.y)) / m as f64;

    let step = match options.step {
        StepSize::Fixed(s) => s,
        StepSize::Auto => 1.0 / (2.0 * largest_eigenvalue(&hessian).max(1e-12)),
    };

    let grid0 = regular_grid(options.k);
    let mut gx = DVector::from_iterator(n, grid0.iter().map(|p| p.x));
    let mut gy = DVector::from_iterator(n, grid0.iter().map(|p| p.y));

    let mse = |gx: &DVector<f64>, gy: &DVector<f64>| -> f64 {
        let px = &weights * gx;
        let py = &weights * gy;
        let mut acc = 0.0;
        for i in 0..m {
            acc += (px[i] - target_kps[i].x).powi(2) + (py[i] - target_kps[i].y).powi(2);
        }
        acc / m as f64
    };

    let mut history = Vec::with_capacity(options.iterations + 1);
    history.push(mse(&gx, &gy));
    for _ in 0..options.iterations {
        // ∇ = 2 (H g − Bᵀt / M)
        let grad_x = (&hessian * &gx - &bt_tx) * 2.0;
        let grad_y = (&hessian * &gy - &bt_ty) * 2.0;
        gx -= grad_x * step;
        gy -= grad_y * step;
        for v in gx.iter_mut().chain(gy.iter_mut()) {
            *v = v.clamp(-options.bound, options.bound);
        }
        history.push(mse(&gx, &gy));
    }

    let target = gx
        .iter()
        .zip(gy.iter())
        .map(|(&x, &y)| Point2::new(x, y))
        .collect();
    Ok(GridFit {
        grid: ControlGrid {
            k: options.k,
            source: grid0,
            target,
        },
        history,
    })
}

fn largest_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    let n = sym.nrows();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..200 {
        let w = sym * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = w / norm;
        let est = next.dot(&(sym * &next));
        v = next;
        if (est - lambda).abs() <= 1e-10 * est.abs() {
            return est;
        }
        lambda = est;
    }
    // Power iteration underestimates when it has not converged; pad slightly.
    lambda * 1.05
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn perturbed_grid(k: usize, amp: f64, seed: u64) -> Vec<Point2> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        regular_grid(k)
            .into_iter()
            .map(|p| {
                Point2::new(
                    p.x + rng.random_range(-amp..amp),
                    p.y + rng.random_range(-amp..amp),
                )
            })
            .collect()
    }

    #[test]
    fn kernel_values() {
        assert_eq!(radial_kernel(0.0), 0.0);
        assert_eq!(radial_kernel(1.0), 0.0);
        let r = 0.5_f64.exp();
        assert!((radial_kernel(r) - std::f64::consts::E).abs() < 1e-12);
        assert!(radial_kernel(0.5) < 0.0);
    }

    #[test]
    fn regularized_solve_keeps_affine_maps_and_smooths_the_rest() {
        let src = perturbed_grid(5, 0.1, 3);
        let affine: Vec<Point2> = src
            .iter()
            .map(|p| Point2::new(0.9 * p.x - 0.2 * p.y + 0.1, 0.3 * p.x + 1.1 * p.y))
            .collect();
        let w = solve_warp_regularized(&src, &affine, 5.0).unwrap();
        for (p, q) in src.iter().zip(&affine) {
            assert!(w.apply(*p).distance(q) < 1e-10);
        }

        let bent = perturbed_grid(5, 0.1, 4);
        let exact = solve_warp_regularized(&src, &bent, 0.0).unwrap();
        assert_eq!(exact, solve_warp(&src, &bent).unwrap());
        let mut last = warp_energy_of(&exact).unwrap().bending;
        for lambda in [0.1, 1.0, 10.0] {
            let smooth = solve_warp_regularized(&src, &bent, lambda).unwrap();
            let bending = warp_energy_of(&smooth).unwrap().bending;
            assert!(
                bending < last,
                "bending {bending} at λ={lambda} not below {last}"
            );
            last = bending;
        }
    }

    #[test]
    fn three_point_system_has_zero_kernel_diagonal() {
        let pts = [
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(0.0, 1.0),
        ];
        let sys = build_system(&pts).unwrap();
        assert_eq!(sys.l().shape(), (6, 6));
        for i in 0..3 {
            assert_eq!(sys.l()[(i, i)], 0.0);
        }
        assert_eq!(sys.l(), &sys.l().transpose());
    }

    #[test]
    fn grid_system_is_symmetric_and_inverse_accurate() {
        let sys = grid_system(10).unwrap();
        assert_eq!(sys.l().shape(), (103, 103));
        assert_eq!(sys.l(), &sys.l().transpose());
        let err = (sys.l() * sys.l_inv() - DMatrix::identity(103, 103)).amax();
        assert!(err < 1e-8, "L·L⁻¹ error {err}");
        assert!(Arc::ptr_eq(&sys, &grid_system(10).unwrap()));
    }

    #[test]
    fn collinear_and_duplicated_points_are_singular() {
        let collinear = [
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(2.0, 2.0),
        ];
        assert!(matches!(
            build_system(&collinear),
            Err(TpsError::SingularSystem(_))
        ));
        let dup = [
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(0.0, 1.0),
            Point2::new(1.0, 0.0),
        ];
        assert!(matches!(
            build_system(&dup),
            Err(TpsError::SingularSystem(_))
        ));
        assert!(matches!(
            build_system(&collinear[..2]),
            Err(TpsError::SingularSystem(_))
        ));
    }

    #[test]
    fn identity_and_scale_solve_to_pure_affine() {
        let sys = grid_system(5).unwrap();
        let src = sys.source_points().to_vec();
        let id = solve_coefficients(&sys, &src).unwrap();
        assert!(id.max_weight() < 1e-12);
        for (a, b) in id.ax.iter().zip([0.0, 1.0, 0.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in id.ay.iter().zip([0.0, 0.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }

        let scaled: Vec<_> = src
            .iter()
            .map(|p| Point2::new(2.0 * p.x, 2.0 * p.y))
            .collect();
        let w = solve_coefficients(&sys, &scaled).unwrap();
        assert!(w.max_weight() < 1e-12);
        assert!((w.ax[1] - 2.0).abs() < 1e-12 && w.ax[0].abs() < 1e-12 && w.ax[2].abs() < 1e-12);
        assert!((w.ay[2] - 2.0).abs() < 1e-12 && w.ay[0].abs() < 1e-12 && w.ay[1].abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let sys = grid_system(3).unwrap();
        let err = solve_coefficients(&sys, &[Point2::default(); 4]).unwrap_err();
        assert_eq!(
            err,
            TpsError::DimensionMismatch {
                expected: 9,
                actual: 4
            }
        );
    }

    #[test]
    fn perturbed_grid_interpolates_control_points() {
        let sys = grid_system(5).unwrap();
        let targets = perturbed_grid(5, 0.15, 7);
        let warp = solve_coefficients(&sys, &targets).unwrap();
        for (s, t) in sys.source_points().iter().zip(&targets) {
            assert!(warp.apply(*s).distance(t) < 1e-8);
        }
        assert!(warp.satisfies_constraints());
        assert!(warp.max_weight() > 1e-4);
    }

    #[test]
    fn affine_warp_applies_linear_map() {
        let src = regular_grid(4);
        let w = TpsWarp::affine(&src, [[1.2, -0.3], [0.1, 0.9]], [0.25, -0.5]);
        let p = Point2::new(0.3, -0.7);
        let q = w.apply(p);
        assert!((q.x - (1.2 * 0.3 - 0.3 * -0.7 + 0.25)).abs() < 1e-15);
        assert!((q.y - (0.1 * 0.3 + 0.9 * -0.7 - 0.5)).abs() < 1e-15);
        let id = TpsWarp::identity(&src);
        assert_eq!(id.apply(p), p);
    }

    #[test]
    fn energy_of_identity_and_rotation() {
        let sys = grid_system(4).unwrap();
        let id = TpsWarp::identity(sys.source_points());
        let e = warp_energy(&id, &sys).unwrap();
        assert_eq!((e.bending, e.affine, e.mean_energy), (0.0, 0.0, 0.0));

        let rotated: Vec<_> = sys
            .source_points()
            .iter()
            .map(|p| Point2::new(-p.y, p.x))
            .collect();
        let rot = solve_coefficients(&sys, &rotated).unwrap();
        let e = warp_energy(&rot, &sys).unwrap();
        assert!(e.bending.abs() < 1e-12);
        // ‖R − I‖²_F = 8 sin²(θ/2) = 4 at 90°
        assert!((e.affine - 4.0).abs() < 1e-12);
        assert!((e.mean_energy - 2.0).abs() < 1e-12);

        let bad = TpsWarp::identity(&regular_grid(3));
        assert!(matches!(
            warp_energy(&bad, &sys),
            Err(TpsError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn energy_of_matches_system_energy() {
        let sys = grid_system(6).unwrap();
        let warp = solve_coefficients(&sys, &perturbed_grid(6, 0.1, 3)).unwrap();
        let a = warp_energy(&warp, &sys).unwrap();
        let b = warp_energy_of(&warp).unwrap();
        assert!((a.bending - b.bending).abs() < 1e-12 * a.bending.max(1.0));
        assert!(a.bending > 0.0);
    }

    #[test]
    fn jacobian_rows_at_control_points_are_unit_vectors() {
        let sys = grid_system(4).unwrap();
        let pts = sys.source_points().to_vec();
        let jac = warp_points_jacobian(&sys, &pts[3..5]);
        for (m, i) in [3usize, 4].into_iter().enumerate() {
            for c in 0..jac.ncols() {
                let ex = if c == 2 * i { 1.0 } else { 0.0 };
                let ey = if c == 2 * i + 1 { 1.0 } else { 0.0 };
                assert!((jac[(2 * m, c)] - ex).abs() < 1e-9);
                assert!((jac[(2 * m + 1, c)] - ey).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn jacobian_reproduces_constants() {
        let sys = grid_system(5).unwrap();
        let pts = [Point2::new(0.13, -0.42), Point2::new(1.3, 0.9)];
        let jac = warp_points_jacobian(&sys, &pts);
        for r in 0..jac.nrows() {
            let parity = r % 2;
            let s: f64 = (0..jac.ncols())
                .filter(|c| c % 2 == parity)
                .map(|c| jac[(r, c)])
                .sum();
            let cross: f64 = (0..jac.ncols())
                .filter(|c| c % 2 != parity)
                .map(|c| jac[(r, c)].abs())
                .sum();
            assert!((s - 1.0).abs() < 1e-9, "row {r} sums to {s}");
            assert_eq!(cross, 0.0);
        }
    }

    #[test]
    fn control_grid_validation() {
        assert!(ControlGrid::new(3, regular_grid(3), 1.5).is_ok());
        assert!(ControlGrid::new(3, regular_grid(2), 1.5).is_err());
        let mut far = regular_grid(3);
        far[0].x = 2.0;
        assert!(matches!(
            ControlGrid::new(3, far, 1.5),
            Err(TpsError::InvalidGrid(_))
        ));
    }

    #[test]
    fn grid_fit_stays_put_when_identity_already_fits() {
        let src = perturbed_grid(4, 0.2, 11);
        let fit = fit_grid_to_correspondences(
            &src,
            &src,
            &GridFitOptions {
                k: 5,
                iterations: 50,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(fit.history[0] < 1e-24);
        for (a, b) in fit.grid.target.iter().zip(&fit.grid.source) {
            assert!(a.distance(b) < 1e-12);
        }
    }

    #[test]
    fn grid_fit_recovers_affine_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let src: Vec<_> = (0..60)
            .map(|_| Point2::new(rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9)))
            .collect();
        let dst: Vec<_> = src
            .iter()
            .map(|p| {
                Point2::new(
                    0.9 * p.x + 0.15 * p.y + 0.05,
                    -0.1 * p.x + 1.05 * p.y - 0.08,
                )
            })
            .collect();
        let fit = fit_grid_to_correspondences(&src, &dst, &GridFitOptions::default()).unwrap();
        assert!(fit.final_mse() < 1e-6, "mse {}", fit.final_mse());
        for pair in fit.history.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-15);
        }
    }

    #[test]
    fn bending_penalty_reduces_grid_energy() {
        let sys = grid_system(5).unwrap();
        let truth = solve_coefficients(&sys, &perturbed_grid(5, 0.2, 21)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let src: Vec<_> = (0..40)
            .map(|_| Point2::new(rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9)))
            .collect();
        let dst = apply_warp(&truth, &src);
        let plain = fit_grid_to_correspondences(
            &src,
            &dst,
            &GridFitOptions {
                k: 5,
                ..Default::default()
            },
        )
        .unwrap();
        let smooth = fit_grid_to_correspondences(
            &src,
            &dst,
            &GridFitOptions {
                k: 5,
                bending_weight: 0.05,
                ..Default::default()
            },
        )
        .unwrap();
        let e_plain = warp_energy(&plain.grid.warp().unwrap(), &sys)
            .unwrap()
            .bending;
        let e_smooth = warp_energy(&smooth.grid.warp().unwrap(), &sys)
            .unwrap()
            .bending;
        assert!(e_smooth < e_plain, "{e_smooth} !< {e_plain}");
    }

    #[test]
    fn frame_round_trip() {
        let f = ImageFrame::new(224, 160);
        let p = Point2::new(13.25, 100.5);
        let q = f.to_pixel(f.to_normalized(p));
        assert!(p.distance(&q) < 1e-12);
        assert_eq!(
            f.to_normalized(Point2::new(-0.5, -0.5)),
            Point2::new(-1.0, -1.0)
        );
        assert_eq!(
            f.to_normalized(Point2::new(223.5, 159.5)),
            Point2::new(1.0, 1.0)
        );
    }

    #[test]
    fn warp_json_round_trip() {
        let sys = grid_system(3).unwrap();
        let w = solve_coefficients(&sys, &perturbed_grid(3, 0.1, 1)).unwrap();
        let back = TpsWarp::from_json(&w.to_json().unwrap()).unwrap();
        assert_eq!(w, back);
    }
}
