//! Raster containers and pixel-level helpers shared by the pipeline stages.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb, Rgb32FImage};
use thiserror::Error;

use crate::tps::{ImageFrame, Point2};

/// Linear grayscale image with `f32` intensities in `[0, 1]`.
pub type GrayImageF = ImageBuffer<Luma<f32>, Vec<f32>>;

/// RGB image with `f32` channels in `[0, 1]`.
pub type RgbImageF = Rgb32FImage;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("failed to read image {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("failed to write image {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

/// Binary foreground mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; (width * height) as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity((width * height) as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn frame(&self) -> ImageFrame {
        ImageFrame::new(self.width, self.height)
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    /// Out-of-range coordinates read as background.
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as u32) < self.width
            && (y as u32) < self.height
            && self.get(x as u32, y as u32)
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        let w = self.width;
        self.bits[(y * w + x) as usize] = v;
    }

    /// Foreground test for a continuous pixel position (nearest pixel).
    pub fn contains_point(&self, p: Point2) -> bool {
        self.get_signed(p.x.round() as i64, p.y.round() as i64)
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Foreground pixels in row-major order.
    pub fn foreground(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| (i as u32 % self.width, i as u32 / self.width))
    }

    /// 8-bit convention: `>= 128` is foreground.
    pub fn from_gray(img: &image::GrayImage) -> Self {
        Self::from_fn(img.width(), img.height(), |x, y| {
            img.get_pixel(x, y).0[0] >= 128
        })
    }

    pub fn to_gray(&self) -> image::GrayImage {
        image::GrayImage::from_fn(self.width, self.height, |x, y| {
            Luma([if self.get(x, y) { 255 } else { 0 }])
        })
    }

    pub fn load_png(path: &Path) -> Result<Self, RasterError> {
        let img = image::open(path).map_err(|source| RasterError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::from_gray(&img.to_luma8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<(), RasterError> {
        self.to_gray()
            .save(path)
            .map_err(|source| RasterError::Write {
                path: path.display().to_string(),
                source,
            })
    }
}

pub fn load_rgb(path: &Path) -> Result<RgbImageF, RasterError> {
    let img = image::open(path).map_err(|source| RasterError::Read {
        path: path.display().to_string(),
        source,
    })?;
    Ok(img.to_rgb32f())
}

/// Writes an 8-bit PNG, rounding and clamping each channel.
pub fn save_rgb_png(img: &RgbImageF, path: &Path) -> Result<(), RasterError> {
    let out = image::RgbImage::from_fn(img.width(), img.height(), |x, y| {
        let p = img.get_pixel(x, y).0;
        Rgb(p.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
    });
    out.save(path).map_err(|source| RasterError::Write {
        path: path.display().to_string(),
        source,
    })
}

/// Rec. 601 luma of a linear RGB image.
pub fn to_gray(img: &RgbImageF) -> GrayImageF {
    GrayImageF::from_fn(img.width(), img.height(), |x, y| {
        let [r, g, b] = img.get_pixel(x, y).0;
        Luma([0.299 * r + 0.587 * g + 0.114 * b])
    })
}

/// Bilinear sample at a continuous pixel position; `None` outside the pixel
/// centers' convex hull extended by half a pixel.
pub fn sample_bilinear(img: &RgbImageF, x: f64, y: f64) -> Option<[f32; 3]> {
    let (w, h) = (img.width() as f64, img.height() as f64);
    if !(x >= -0.5 && y >= -0.5 && x <= w - 0.5 && y <= h - 0.5) {
        return None;
    }
    let xc = snap(x).clamp(0.0, w - 1.0);
    let yc = snap(y).clamp(0.0, h - 1.0);
    let x0 = xc.floor() as u32;
    let y0 = yc.floor() as u32;
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let fx = (xc - x0 as f64) as f32;
    let fy = (yc - y0 as f64) as f32;
    let p00 = img.get_pixel(x0, y0).0;
    let p10 = img.get_pixel(x1, y0).0;
    let p01 = img.get_pixel(x0, y1).0;
    let p11 = img.get_pixel(x1, y1).0;
    let mut out = [0.0f32; 3];
    for c in 0..3 {
        let top = p00[c] * (1.0 - fx) + p10[c] * fx;
        let bottom = p01[c] * (1.0 - fx) + p11[c] * fx;
        out[c] = top * (1.0 - fy) + bottom * fy;
    }
    Some(out)
}

// Coordinates within 1e-9 px of a pixel center read that pixel exactly.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_png_round_trip() {
        let m = Mask::from_fn(7, 5, |x, y| (x + y) % 3 == 0);
        let dir = std::env::temp_dir().join(format!("warpmatch-mask-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.png");
        m.save_png(&path).unwrap();
        assert_eq!(Mask::load_png(&path).unwrap(), m);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn bilinear_interpolates_between_pixels() {
        let img = RgbImageF::from_fn(2, 1, |x, _| Rgb([x as f32, 0.5, 1.0 - x as f32]));
        let p = sample_bilinear(&img, 0.25, 0.0).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-6 && (p[2] - 0.75).abs() < 1e-6);
        assert!(sample_bilinear(&img, -0.6, 0.0).is_none());
        assert!(sample_bilinear(&img, 1.4, 0.2).is_some());
    }

    #[test]
    fn foreground_iterates_row_major() {
        let m = Mask::from_fn(3, 2, |x, y| x == y || (x, y) == (2, 0));
        let fg: Vec<_> = m.foreground().collect();
        assert_eq!(fg, vec![(0, 0), (2, 0), (1, 1)]);
        assert_eq!(m.count(), 3);
    }
}
