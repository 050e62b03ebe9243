//! Keypoint sets, patch descriptors and the descriptor file format.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{GrayImageF, Mask};
use crate::tps::{ImageFrame, Point2};

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("out of bounds: {0}")]
    OutOfBounds(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid keypoint set: {0}")]
    InvalidKeypoints(String),
    #[error("descriptor file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Keypoints of one image in pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    pub image_id: String,
    pub points: Vec<Point2>,
    pub visibility: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
}

impl KeypointSet {
    /// All points visible, unnamed.
    pub fn new(image_id: impl Into<String>, points: Vec<Point2>) -> Self {
        let visibility = vec![true; points.len()];
        Self {
            image_id: image_id.into(),
            points,
            visibility,
            names: None,
        }
    }

    pub fn with_visibility(
        image_id: impl Into<String>,
        points: Vec<Point2>,
        visibility: Vec<bool>,
        names: Option<Vec<String>>,
    ) -> Result<Self, DescriptorError> {
        let set = Self {
            image_id: image_id.into(),
            points,
            visibility,
            names,
        };
        set.check_lengths()?;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn check_lengths(&self) -> Result<(), DescriptorError> {
        if self.visibility.len() != self.points.len() {
            return Err(DescriptorError::InvalidKeypoints(format!(
                "{} points but {} visibility flags",
                self.points.len(),
                self.visibility.len()
            )));
        }
        if let Some(names) = &self.names {
            if names.len() != self.points.len() {
                return Err(DescriptorError::InvalidKeypoints(format!(
                    "{} points but {} names",
                    self.points.len(),
                    names.len()
                )));
            }
        }
        Ok(())
    }

    /// Length check plus every visible point inside `frame`.
    pub fn validate(&self, frame: ImageFrame) -> Result<(), DescriptorError> {
        self.check_lengths()?;
        for (i, (p, v)) in self.points.iter().zip(&self.visibility).enumerate() {
            if *v && !(p.is_finite() && frame.contains(*p)) {
                return Err(DescriptorError::OutOfBounds(format!(
                    "keypoint {i} at ({}, {}) outside {}x{} image {}",
                    p.x, p.y, frame.width, frame.height, self.image_id
                )));
            }
        }
        Ok(())
    }

    /// Index of the visible point named `name`.
    pub fn find(&self, name: &str) -> Option<usize> {
        let names = self.names.as_ref()?;
        names
            .iter()
            .zip(&self.visibility)
            .position(|(n, v)| *v && n == name)
    }
}

/// Unit-norm descriptor rows, one per keypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    pub keypoints: KeypointSet,
    pub descriptor_id: String,
    dim: usize,
    data: Vec<f32>,
}

impl DescriptorSet {
    /// Rows are L2-normalized; all-zero rows become the uniform vector.
    pub fn from_rows(
        keypoints: KeypointSet,
        descriptor_id: impl Into<String>,
        dim: usize,
        mut data: Vec<f32>,
    ) -> Result<Self, DescriptorError> {
        let expected = keypoints.len() * dim;
        if data.len() != expected {
            return Err(DescriptorError::DimensionMismatch {
                expected,
                actual: data.len(),
            });
        }
        if dim > 0 {
            data.chunks_mut(dim).for_each(normalize_or_uniform);
        }
        Ok(Self {
            keypoints,
            descriptor_id: descriptor_id.into(),
            dim,
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

fn normalize_or_uniform(row: &mut [f32]) {
    let norm = row.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
    if norm > 1e-12 && norm.is_finite() {
        row.iter_mut().for_each(|v| *v = (*v as f64 / norm) as f32);
    } else {
        let u = (1.0 / (row.len() as f64).sqrt()) as f32;
        row.iter_mut().for_each(|v| *v = u);
    }
}

/// A pluggable per-keypoint descriptor.
pub trait Extractor: Sync {
    /// Name plus parameters; equal ids mean comparable descriptors.
    fn descriptor_id(&self) -> String;
    fn dim(&self) -> usize;
    /// Smallest image side the extractor can handle.
    fn min_image_side(&self) -> u32;
    /// Unnormalized descriptor at `p`.
    fn describe(&self, image: &GrayImageF, p: Point2) -> Vec<f32>;
}

/// Gradient-orientation histogram over a square patch: `cells × cells`
/// spatial cells of `bins` orientation bins, Gaussian-weighted, clipped and
/// renormalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientHistogram {
    pub radius: u32,
    pub cells: u32,
    pub bins: u32,
    pub clip: f32,
}

impl Default for GradientHistogram {
    fn default() -> Self {
        Self {
            radius: 8,
            cells: 4,
            bins: 8,
            clip: 0.2,
        }
    }
}

impl Extractor for GradientHistogram {
    fn descriptor_id(&self) -> String {
        format!(
            "gradhist-r{}-c{}-b{}-clip{}",
            self.radius, self.cells, self.bins, self.clip
        )
    }

    fn dim(&self) -> usize {
        (self.cells * self.cells * self.bins) as usize
    }

    fn min_image_side(&self) -> u32 {
        2 * self.radius
    }

    fn describe(&self, image: &GrayImageF, p: Point2) -> Vec<f32> {
        let side = 2 * self.radius as usize;
        let cells = self.cells as usize;
        let bins = self.bins as usize;
        let cell_side = side as f64 / cells as f64;
        let sigma = self.radius as f64;
        let mut hist = vec![0.0f64; self.dim()];
        let half = self.radius as f64 - 0.5;
        for j in 0..side {
            for i in 0..side {
                let dx = i as f64 - half;
                let dy = j as f64 - half;
                let (x, y) = (p.x + dx, p.y + dy);
                let gx = 0.5 * (intensity(image, x + 1.0, y) - intensity(image, x - 1.0, y));
                let gy = 0.5 * (intensity(image, x, y + 1.0) - intensity(image, x, y - 1.0));
                let mag = gx.hypot(gy);
                if mag == 0.0 {
                    continue;
                }
                let weight = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                let cell = ((j as f64 / cell_side) as usize).min(cells - 1) * cells
                    + ((i as f64 / cell_side) as usize).min(cells - 1);
                let pos = gy.atan2(gx).rem_euclid(std::f64::consts::TAU) / std::f64::consts::TAU
                    * bins as f64;
                let b0 = (pos.floor() as usize) % bins;
                let frac = pos - pos.floor();
                let b1 = (b0 + 1) % bins;
                hist[cell * bins + b0] += weight * mag * (1.0 - frac);
                hist[cell * bins + b1] += weight * mag * frac;
            }
        }
        let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-12 {
            return vec![0.0; hist.len()];
        }
        let clip = self.clip as f64;
        hist.iter().map(|v| (v / norm).min(clip) as f32).collect()
    }
}

/// Bilinear intensity with reflect padding (mirror about the edge pixels).
fn intensity(image: &GrayImageF, x: f64, y: f64) -> f64 {
    let x = reflect(x, image.width());
    let y = reflect(y, image.height());
    let x0 = x.floor() as u32;
    let y0 = y.floor() as u32;
    let x1 = (x0 + 1).min(image.width() - 1);
    let y1 = (y0 + 1).min(image.height() - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let v = |x, y| image.get_pixel(x, y).0[0] as f64;
    let top = v(x0, y0) * (1.0 - fx) + v(x1, y0) * fx;
    let bottom = v(x0, y1) * (1.0 - fx) + v(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

fn reflect(v: f64, n: u32) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let last = (n - 1) as f64;
    let period = 2.0 * last;
    let m = v.rem_euclid(period);
    if m > last {
        period - m
    } else {
        m
    }
}

/// Describes every keypoint. Invisible keypoints get the uniform vector
/// without a bounds check.
pub fn extract(
    image: &GrayImageF,
    keypoints: &KeypointSet,
    extractor: &dyn Extractor,
) -> Result<DescriptorSet, DescriptorError> {
    let frame = ImageFrame::new(image.width(), image.height());
    let min_side = extractor.min_image_side();
    if image.width() < min_side || image.height() < min_side {
        return Err(DescriptorError::OutOfBounds(format!(
            "{}x{} image smaller than the {min_side}px patch",
            image.width(),
            image.height()
        )));
    }
    keypoints.validate(frame)?;
    let dim = extractor.dim();
    let rows: Vec<Vec<f32>> = keypoints
        .points
        .par_iter()
        .zip(keypoints.visibility.par_iter())
        .map(|(p, v)| {
            if *v {
                extractor.describe(image, *p)
            } else {
                vec![0.0; dim]
            }
        })
        .collect();
    for r in &rows {
        if r.len() != dim {
            return Err(DescriptorError::DimensionMismatch {
                expected: dim,
                actual: r.len(),
            });
        }
    }
    DescriptorSet::from_rows(
        keypoints.clone(),
        extractor.descriptor_id(),
        dim,
        rows.concat(),
    )
}

/// Euclidean distance between two descriptor rows.
pub fn appearance_distance(a: &[f32], b: &[f32]) -> Result<f64, DescriptorError> {
    if a.len() != b.len() {
        return Err(DescriptorError::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Lattice points `(s/2 + i·s, s/2 + j·s)` lying on the foreground, row-major.
pub fn sample_foreground_grid(mask: &Mask, stride: u32) -> KeypointSet {
    let stride = stride.max(1);
    let mut points = Vec::new();
    let mut y = stride / 2;
    while y < mask.height() {
        let mut x = stride / 2;
        while x < mask.width() {
            if mask.get(x, y) {
                points.push(Point2::new(x as f64, y as f64));
            }
            x += stride;
        }
        y += stride;
    }
    KeypointSet::new("", points)
}

const MAGIC: &[u8; 4] = b"WDSC";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Sidecar {
    image_id: String,
    descriptor_id: String,
    points: Vec<Point2>,
    #[serde(default)]
    visibility: Option<Vec<bool>>,
}

/// Writes the little-endian binary matrix and its JSON sidecar.
pub fn write_descriptors(
    set: &DescriptorSet,
    bin_path: &Path,
    json_path: &Path,
) -> Result<(), DescriptorError> {
    let mut buf = Vec::with_capacity(16 + set.data.len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(set.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(set.dim as u32).to_le_bytes());
    for v in &set.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(bin_path)?.write_all(&buf)?;
    let sidecar = Sidecar {
        image_id: set.keypoints.image_id.clone(),
        descriptor_id: set.descriptor_id.clone(),
        points: set.keypoints.points.clone(),
        visibility: Some(set.keypoints.visibility.clone()),
    };
    std::fs::write(json_path, serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

/// Reads descriptors written by any tool that follows the format; rows are
/// renormalized on import.
pub fn read_descriptors(
    bin_path: &Path,
    json_path: &Path,
) -> Result<DescriptorSet, DescriptorError> {
    let mut bytes = Vec::new();
    std::fs::File::open(bin_path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[0..4] != MAGIC {
        return Err(DescriptorError::Format("missing WDSC header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != FORMAT_VERSION {
        return Err(DescriptorError::Format(format!(
            "unsupported version {version}"
        )));
    }
    let (m, d) = (word(8) as usize, word(12) as usize);
    if bytes.len() != 16 + 4 * m * d {
        return Err(DescriptorError::Format(format!(
            "expected {} payload bytes for {m}x{d}, found {}",
            4 * m * d,
            bytes.len() - 16
        )));
    }
    let data: Vec<f32> = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let sidecar: Sidecar = serde_json::from_slice(&std::fs::read(json_path)?)?;
    if sidecar.points.len() != m {
        return Err(DescriptorError::DimensionMismatch {
            expected: m,
            actual: sidecar.points.len(),
        });
    }
    let visibility = sidecar.visibility.unwrap_or_else(|| vec![true; m]);
    let keypoints =
        KeypointSet::with_visibility(sidecar.image_id, sidecar.points, visibility, None)?;
    DescriptorSet::from_rows(keypoints, sidecar.descriptor_id, d, data)
}
