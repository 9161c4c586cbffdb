//! Linear HDR and 8-bit LDR image buffers.

use crate::error::{Error, Result};
use crate::real::Real;

/// Row-major RGB image of linear radiance; row 0 is the top of the frame.
#[derive(Clone, Debug, PartialEq)]
pub struct HdrImage<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Real> HdrImage<T> {
    pub fn new(width: usize, height: usize) -> Self {
        HdrImage { width, height, data: vec![T::zero(); width * height * 3] }
    }

    pub fn filled(width: usize, height: usize, rgb: [T; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn from_data(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::DimensionMismatch {
                expected: format!("{} scalars", width * height * 3),
                actual: format!("{}", data.len()),
            });
        }
        Ok(HdrImage { width, height, data })
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [T; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [T; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn cast<U: Real>(&self) -> HdrImage<U> {
        HdrImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn same_size(&self, other: &HdrImage<T>) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.width, self.height),
                actual: format!("{}x{}", other.width, other.height),
            });
        }
        Ok(())
    }

    /// Pixel-wise sum.
    pub fn add(&self, other: &HdrImage<T>) -> Result<HdrImage<T>> {
        self.same_size(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Ok(HdrImage { width: self.width, height: self.height, data })
    }

    pub fn max_abs_diff(&self, other: &HdrImage<T>) -> Result<T> {
        self.same_size(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    /// Applies `f` to every channel value.
    pub fn map(&self, f: impl Fn(T) -> T) -> HdrImage<T> {
        HdrImage { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Quantizes values in [0, 1] to 8 bits (values outside are clamped).
    pub fn to_ldr(&self) -> LdrImage {
        let data = self
            .data
            .iter()
            .map(|&v| {
                let v = v.as_f64();
                let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
                (v * 255.0).round() as u8
            })
            .collect();
        LdrImage { width: self.width, height: self.height, data }
    }
}

/// 8-bit RGB image, row-major, row 0 on top.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LdrImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}
