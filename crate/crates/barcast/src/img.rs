//! In-memory RGB image buffer with linear [0,1] channels.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Row-major RGB image, channels linear in [0,1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRgb {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
}

impl ImageRgb {
    pub fn new(width: usize, height: usize, fill: [f64; 3]) -> Self {
        Self {
            width,
            height,
            pixels: vec![fill; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "expected {}x{}={} pixels, got {}",
                width,
                height,
                width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn is_square(&self) -> bool {
        self.width == self.height
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> [f64; 3] {
        self.pixels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        let i = row * self.width + col;
        self.pixels[i] = rgb;
    }

    /// Center-crop to a square of side `min(width, height)`.
    pub fn center_crop_square(&self) -> ImageRgb {
        let side = self.width.min(self.height);
        let r0 = (self.height - side) / 2;
        let c0 = (self.width - side) / 2;
        let mut out = ImageRgb::new(side, side, [0.0; 3]);
        for r in 0..side {
            for c in 0..side {
                out.set(r, c, self.get(r0 + r, c0 + c));
            }
        }
        out
    }

    /// Box-filter resample of a square image to `target` x `target`.
    /// Each output pixel is the unweighted mean of the source pixels whose
    /// centers fall in its footprint.
    pub fn box_resample(&self, target: usize) -> Result<ImageRgb> {
        if !self.is_square() {
            return Err(Error::Image(
                "box_resample expects a square image (center-crop first)".into(),
            ));
        }
        if target == 0 {
            return Err(Error::Image("target size must be positive".into()));
        }
        let n = self.width;
        if n == target {
            return Ok(self.clone());
        }
        let mut out = ImageRgb::new(target, target, [0.0; 3]);
        for r in 0..target {
            for c in 0..target {
                // Source index range covered by output cell [r, r+1) x [c, c+1)
                // in output coordinates, scaled to source coordinates.
                let r0 = r * n / target;
                let r1 = (((r + 1) * n).div_ceil(target)).min(n);
                let c0 = c * n / target;
                let c1 = (((c + 1) * n).div_ceil(target)).min(n);
                let mut acc = [0.0f64; 3];
                let mut cnt = 0usize;
                for sr in r0..r1 {
                    for sc in c0..c1 {
                        let p = self.get(sr, sc);
                        acc[0] += p[0];
                        acc[1] += p[1];
                        acc[2] += p[2];
                        cnt += 1;
                    }
                }
                let inv = 1.0 / cnt as f64;
                out.set(r, c, [acc[0] * inv, acc[1] * inv, acc[2] * inv]);
            }
        }
        Ok(out)
    }

    /// Mean absolute per-channel difference against another image of the
    /// same shape.
    pub fn mean_abs_diff(&self, other: &ImageRgb) -> f64 {
        assert_eq!(self.pixels.len(), other.pixels.len());
        let mut acc = 0.0;
        for (a, b) in self.pixels.iter().zip(&other.pixels) {
            for ch in 0..3 {
                acc += (a[ch] - b[ch]).abs();
            }
        }
        acc / (3.0 * self.pixels.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_resample_halving_averages_blocks() {
        let mut src = ImageRgb::new(4, 4, [0.0; 3]);
        // distinct value per pixel
        for r in 0..4 {
            for c in 0..4 {
                let v = (r * 4 + c) as f64;
                src.set(r, c, [v, v, v]);
            }
        }
        let out = src.box_resample(2).unwrap();
        // top-left block: values 0,1,4,5 -> mean 2.5
        assert_eq!(out.get(0, 0)[0], 2.5);
        // bottom-right block: 10,11,14,15 -> 12.5
        assert_eq!(out.get(1, 1)[0], 12.5);
    }

    #[test]
    fn center_crop_takes_middle() {
        let mut src = ImageRgb::new(4, 2, [0.0; 3]);
        for c in 0..4 {
            src.set(0, c, [c as f64, 0.0, 0.0]);
            src.set(1, c, [c as f64, 0.0, 0.0]);
        }
        let out = src.center_crop_square();
        assert_eq!(out.width, 2);
        assert_eq!(out.height, 2);
        assert_eq!(out.get(0, 0)[0], 1.0);
        assert_eq!(out.get(0, 1)[0], 2.0);
    }
}
