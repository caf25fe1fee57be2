//! Channel-major images and the pixel operations the pipeline needs.

use crate::error::{Error, Result};
use crate::model::resample::half_pixel_taps;
use crate::scalar::{c, Scalar};
use crate::tensor::Matrix;

/// `[channels, height, width]` image, row-major within each channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {channels}x{height}x{width} image",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Interleaved 8-bit RGB to `[3, h, w]` in `[0, 1]`.
    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != width * height * 3 {
            return Err(Error::ShapeMismatch("rgb buffer length".into()));
        }
        let mut img = Self::zeros(3, height, width);
        let inv = c::<T>(1.0 / 255.0);
        for y in 0..height {
            for x in 0..width {
                for ch in 0..3 {
                    let v = T::from_u8(rgb[(y * width + x) * 3 + ch]).unwrap() * inv;
                    img.set(ch, y, x, v);
                }
            }
        }
        Ok(img)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, ch: usize, y: usize, x: usize) -> T {
        self.data[(ch * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, ch: usize, y: usize, x: usize, v: T) {
        self.data[(ch * self.height + y) * self.width + x] = v;
    }

    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }

    /// Non-overlapping `p × p` patches as rows `[T, channels·p²]`, tokens in
    /// raster order, columns `c·p² + y·p + x`.
    pub fn patches(&self, p: usize) -> Result<Matrix<T>> {
        if p == 0 || !self.height.is_multiple_of(p) || !self.width.is_multiple_of(p) {
            return Err(Error::InvalidConfig(format!(
                "{}x{} image cannot be cut into {p}-pixel patches",
                self.height, self.width
            )));
        }
        let (gh, gw) = (self.height / p, self.width / p);
        let cols = self.channels * p * p;
        let mut m = Matrix::zeros(gh * gw, cols);
        for ty in 0..gh {
            for tx in 0..gw {
                let row = m.row_mut(ty * gw + tx);
                for ch in 0..self.channels {
                    for y in 0..p {
                        let src = (ch * self.height + ty * p + y) * self.width + tx * p;
                        let dst = ch * p * p + y * p;
                        row[dst..dst + p].copy_from_slice(&self.data[src..src + p]);
                    }
                }
            }
        }
        Ok(m)
    }

    /// Bilinear resize with half-pixel centres.
    pub fn resize(&self, height: usize, width: usize) -> Self {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let ty = half_pixel_taps(self.height, height);
        let tx = half_pixel_taps(self.width, width);
        let mut out = Self::zeros(self.channels, height, width);
        for ch in 0..self.channels {
            for (y, wy) in ty.iter().enumerate() {
                for (x, wx) in tx.iter().enumerate() {
                    let mut acc = 0.0;
                    for &(sy, a) in wy {
                        for &(sx, b) in wx {
                            acc += a * b * self.get(ch, sy, sx).to_f64_lossy();
                        }
                    }
                    out.set(ch, y, x, c(acc));
                }
            }
        }
        out
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for ch in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    out.set(ch, y, x, self.get(ch, y, self.width - 1 - x));
                }
            }
        }
        out
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Self {
        assert!(
            x0 + width <= self.width && y0 + height <= self.height,
            "crop out of bounds"
        );
        let mut out = Self::zeros(self.channels, height, width);
        for ch in 0..self.channels {
            for y in 0..height {
                for x in 0..width {
                    out.set(ch, y, x, self.get(ch, y0 + y, x0 + x));
                }
            }
        }
        out
    }
}

/// Binary mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Tight `(x0, y0, x1, y1)` pixel bounds, exclusive on the far side.
    pub fn bounds(&self) -> Option<(usize, usize, usize, usize)> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    b = Some(match b {
                        None => (x, y, x + 1, y + 1),
                        Some((a, bb, cc, d)) => (a.min(x), bb.min(y), cc.max(x + 1), d.max(y + 1)),
                    });
                }
            }
        }
        b
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(y, x, self.get(y, self.width - 1 - x));
            }
        }
        out
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Self {
        let mut out = Self::new(height, width);
        for y in 0..height {
            for x in 0..width {
                out.set(y, x, self.get(y0 + y, x0 + x));
            }
        }
        out
    }

    /// Nearest-neighbour resample using pixel centres.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Self {
        let mut out = Self::new(height, width);
        for y in 0..height {
            let sy = (((y as f64 + 0.5) * self.height as f64 / height as f64) as usize).min(self.height - 1);
            for x in 0..width {
                let sx = (((x as f64 + 0.5) * self.width as f64 / width as f64) as usize).min(self.width - 1);
                out.set(y, x, self.get(sy, sx));
            }
        }
        out
    }

    pub fn intersection(&self, other: &Self) -> usize {
        self.data.iter().zip(&other.data).filter(|(a, b)| **a && **b).count()
    }

    pub fn union(&self, other: &Self) -> usize {
        self.data.iter().zip(&other.data).filter(|(a, b)| **a || **b).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patches_layout() {
        let img = Image::from_vec(2, 4, 4, (0..32).map(|v| v as f64).collect()).unwrap();
        let p = img.patches(2).unwrap();
        assert_eq!(p.shape(), (4, 8));
        // token 1 is the top-right 2x2 block.
        assert_eq!(p.row(1), &[2.0, 3.0, 6.0, 7.0, 18.0, 19.0, 22.0, 23.0]);
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = Image::from_vec(1, 3, 5, (0..15).map(|v| v as f32).collect()).unwrap();
        assert_eq!(img.resize(3, 5), img);
        let flat = Image::from_vec(1, 4, 4, vec![0.5f64; 16]).unwrap();
        assert!(flat.resize(7, 3).data().iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn mask_bounds() {
        let mut m = Mask::new(5, 6);
        m.set(1, 2, true);
        m.set(3, 4, true);
        assert_eq!(m.bounds(), Some((2, 1, 5, 4)));
        assert_eq!(Mask::new(2, 2).bounds(), None);
    }
}
