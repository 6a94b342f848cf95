use crate::error::{Error, Result};

/// Square grayscale raster, row-major, gray levels nominally in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    side: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(side: usize, pixels: Vec<f64>) -> Result<Self> {
        if side == 0 {
            return Err(Error::InvalidArgument("image side must be positive".into()));
        }
        if pixels.len() != side * side {
            return Err(Error::DimensionMismatch {
                context: "image pixels",
                expected: side * side,
                actual: pixels.len(),
            });
        }
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("image contains non-finite pixels".into()));
        }
        Ok(Self { side, pixels })
    }

    /// Wraps a flattened vector whose length is a perfect square.
    pub fn from_flat(pixels: Vec<f64>) -> Result<Self> {
        let side = (pixels.len() as f64).sqrt().round() as usize;
        Self::new(side, pixels)
    }

    pub fn filled(side: usize, value: f64) -> Self {
        Self {
            side,
            pixels: vec![value; side * side],
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.side + col]
    }

    /// Pixels clipped to `[0, 255]` and rounded, for export.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|p| p.clamp(0.0, 255.0).round() as u8)
            .collect()
    }
}

/// Observed data `z`; values are not clipped.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    values: Vec<f64>,
}

impl Measurement {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("measurement contains non-finite values".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl From<Image> for Measurement {
    fn from(img: Image) -> Self {
        Self { values: img.pixels }
    }
}
