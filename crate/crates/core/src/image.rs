//! Real-valued 2-D grids.
//!
//! `Image` is the working representation for pictures, gradient components,
//! multiplier fields, and every other per-pixel quantity in the crate.
//! Intensities are stored as `f64` in row-major order; the nominal pixel
//! range is [0, 255] but values are unconstrained until export, where they
//! are clamped and quantized.

use crate::error::{Error, Result};

/// A row-major grid of finite real values.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image from row-major data, validating shape and finiteness.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height * width != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} image needs {} samples, got {}",
                height,
                width,
                height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "image data contains non-finite values".into(),
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// True when the image has the same shape as `other`.
    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.data.iter()
    }

    /// Elementwise a*x + b*y over two same-shaped images.
    pub fn lin_comb(a: f64, x: &Image, b: f64, y: &Image) -> Image {
        debug_assert!(x.same_shape(y));
        let data = x
            .data
            .iter()
            .zip(&y.data)
            .map(|(&xv, &yv)| a * xv + b * yv)
            .collect();
        Image {
            height: x.height,
            width: x.width,
            data,
        }
    }

    pub fn scale(&self, a: f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| a * v).collect(),
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    pub fn norm_l2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn norm_l1(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum::<f64>()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Clamps to [0, 255] without quantizing; used at export boundaries.
    pub fn clamped(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| v.clamp(0.0, 255.0)).collect(),
        }
    }

    /// Rounds into 8-bit samples, clamping to [0, 255].
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| v.clamp(0.0, 255.0).round() as u8)
            .collect()
    }

    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} image needs {} bytes, got {}",
                height,
                width,
                height * width,
                bytes.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data: bytes.iter().map(|&b| b as f64).collect(),
        })
    }
}

/// Dot product of two same-length slices, summed sequentially so results do
/// not depend on any parallel schedule.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm_l2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}
