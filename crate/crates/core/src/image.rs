//! Three-channel floating point images.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// An RGB image stored as interleaved, row-major floats.
///
/// Values are nominally in `[0, 1]`. Buffers decoded from 8/16-bit sources
/// are always in range; buffers produced by a LUT may leave it (training
/// needs the raw values) and are clamped when quantized for export.
/// Every value is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer<T = f32> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::Shape(format!("image must be at least 1x1, got {width}x{height}")));
    }
    Ok(())
}

impl<T: Real> ImageBuffer<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "{width}x{height} RGB image needs {} values, got {}",
                width * height * 3,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("image data"));
        }
        Ok(Self { width, height, data })
    }

    /// Internal constructor for buffers whose values are finite by construction.
    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), width * height * 3);
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self { width, height, data }
    }

    pub fn filled(width: usize, height: usize, rgb: [T; 3]) -> Result<Self> {
        check_dims(width, height)?;
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, data)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [T; 3]) -> Result<Self> {
        check_dims(width, height)?;
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    /// Normalizes 8-bit samples by 255.
    pub fn from_u8(width: usize, height: usize, samples: &[u8]) -> Result<Self> {
        Self::from_quantized(width, height, samples.iter().map(|&v| v as f64), 255.0, samples.len())
    }

    /// Normalizes 16-bit samples by 65535.
    pub fn from_u16(width: usize, height: usize, samples: &[u16]) -> Result<Self> {
        Self::from_quantized(width, height, samples.iter().map(|&v| v as f64), 65535.0, samples.len())
    }

    fn from_quantized(
        width: usize,
        height: usize,
        samples: impl Iterator<Item = f64>,
        max: f64,
        len: usize,
    ) -> Result<Self> {
        check_dims(width, height)?;
        if len != width * height * 3 {
            return Err(Error::Shape(format!(
                "{width}x{height} RGB image needs {} samples, got {len}",
                width * height * 3
            )));
        }
        let data = samples.map(|v| T::of((v / max).clamp(0.0, 1.0))).collect();
        Ok(Self::from_raw(width, height, data))
    }

    /// Clamps to `[0, 1]` and quantizes with round-half-up.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v, 255.0) as u8).collect()
    }

    pub fn to_u16(&self) -> Vec<u16> {
        self.data.iter().map(|&v| quantize(v, 65535.0) as u16).collect()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn same_dims(&self, other: &Self) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch(self.width, self.height, other.width, other.height));
        }
        Ok(())
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [T; 3] {
        let o = (y * self.width + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [T; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    pub fn clamped(&self) -> Self {
        let data = self.data.iter().map(|v| v.max(T::zero()).min(T::one())).collect();
        Self::from_raw(self.width, self.height, data)
    }

    pub fn flipped_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(self.width * 3) {
            for px in row.chunks_exact(3).rev() {
                data.extend_from_slice(px);
            }
        }
        Self::from_raw(self.width, self.height, data)
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        check_dims(width, height)?;
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::Shape(format!(
                "crop {width}x{height}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height * 3);
        for y in y0..y0 + height {
            let start = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[start..start + width * 3]);
        }
        Ok(Self::from_raw(width, height, data))
    }

    pub fn cast<U: Real>(&self) -> ImageBuffer<U> {
        let data = self.data.iter().map(|v| U::of(v.to_f64_lossless())).collect();
        ImageBuffer::from_raw(self.width, self.height, data)
    }
}

fn quantize<T: Real>(v: T, max: f64) -> f64 {
    (v.to_f64_lossless().clamp(0.0, 1.0) * max + 0.5).floor().min(max)
}
