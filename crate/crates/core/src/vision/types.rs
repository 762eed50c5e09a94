use crate::numcore::Tensor;
use crate::{Error, Result};

/// Single-channel image with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl GrayImage {
    /// Builds an image, clamping every pixel into `[0, 1]` (NaN becomes 0).
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension(format!("image size {height}x{width}")));
        }
        if pixels.len() != height * width {
            return Err(Error::Dimension(format!(
                "{height}x{width} image needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        let pixels = pixels
            .into_iter()
            .map(|p| if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) })
            .collect();
        Ok(GrayImage {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    pub fn full_box(&self) -> BoundingBox {
        BoundingBox::new(0, self.height - 1, 0, self.width - 1).expect("non-empty image")
    }

    /// `[1, H, W]` tensor view for the network input.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, self.height, self.width], self.pixels.clone()).expect("image shape")
    }

    /// 8-bit quantisation used by the file formats.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels.iter().map(|&p| (p * 255.0).round() as u8).collect()
    }

    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }
}

/// Normalised heat-map; values are in `[0, 1]` when built from nonnegative
/// activations.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl HeatMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width || values.is_empty() {
            return Err(Error::Dimension(format!(
                "{height}x{width} heat-map with {} values",
                values.len()
            )));
        }
        Ok(HeatMap {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }
}

/// Per-cell {0,1} mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width || bits.is_empty() {
            return Err(Error::Dimension(format!(
                "{height}x{width} mask with {} cells",
                bits.len()
            )));
        }
        Ok(BinaryMask {
            height,
            width,
            bits,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.bits[row * self.width + col] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Set cells as `(row, col)` in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i / w, i % w))
    }

    /// `true` iff every set cell of `self` is set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.bits.len() == other.bits.len() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Nearest-neighbour resampling to `height x width`.
    pub fn resize_nearest(&self, height: usize, width: usize) -> BinaryMask {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let mut bits = Vec::with_capacity(height * width);
        for r in 0..height {
            let sr = ((r as f64 + 0.5) * self.height as f64 / height as f64).floor() as usize;
            let sr = sr.min(self.height - 1);
            for c in 0..width {
                let sc = ((c as f64 + 0.5) * self.width as f64 / width as f64).floor() as usize;
                bits.push(self.get(sr, sc.min(self.width - 1)));
            }
        }
        BinaryMask {
            height,
            width,
            bits,
        }
    }

    /// Mask as an image of 0.0 / 1.0 pixels.
    pub fn to_image(&self) -> GrayImage {
        let px = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        GrayImage::new(self.height, self.width, px).expect("mask shape")
    }

    /// Threshold an image at 0.5 (`>= 0.5` is set).
    pub fn from_image(img: &GrayImage) -> BinaryMask {
        BinaryMask {
            height: img.height(),
            width: img.width(),
            bits: img.pixels().iter().map(|&p| p >= 0.5).collect(),
        }
    }
}

/// Inclusive axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoundingBox {
    pub row_min: usize,
    pub row_max: usize,
    pub col_min: usize,
    pub col_max: usize,
}

impl BoundingBox {
    pub fn new(row_min: usize, row_max: usize, col_min: usize, col_max: usize) -> Result<Self> {
        if row_min > row_max || col_min > col_max {
            return Err(Error::Range(format!(
                "inverted box rows {row_min}..={row_max}, cols {col_min}..={col_max}"
            )));
        }
        Ok(BoundingBox {
            row_min,
            row_max,
            col_min,
            col_max,
        })
    }

    pub fn height(&self) -> usize {
        self.row_max - self.row_min + 1
    }

    pub fn width(&self) -> usize {
        self.col_max - self.col_min + 1
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row_min..=self.row_max).contains(&row) && (self.col_min..=self.col_max).contains(&col)
    }

    pub fn fits_within(&self, height: usize, width: usize) -> bool {
        self.row_max < height && self.col_max < width
    }

    /// Maps a box given on a `from` grid onto the `to` grid covering the
    /// same extent: cell `r` of `from` spans rows `[r*H/h, (r+1)*H/h)`.
    pub fn scale(&self, from: (usize, usize), to: (usize, usize)) -> BoundingBox {
        let (h, w) = from;
        let (hh, ww) = to;
        let lo = |v: usize, n: usize, nn: usize| v * nn / n;
        let hi = |v: usize, n: usize, nn: usize| ((v + 1) * nn).div_ceil(n).clamp(1, nn) - 1;
        BoundingBox {
            row_min: lo(self.row_min, h, hh),
            row_max: hi(self.row_max, h, hh),
            col_min: lo(self.col_min, w, ww),
            col_max: hi(self.col_max, w, ww),
        }
    }
}
