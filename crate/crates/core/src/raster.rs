//! Raster containers shared by every pipeline stage.
//!
//! All grids are row-major with index `y * width + x`; coordinates are
//! zero-based with `x` growing rightwards and `y` downwards.

use serde::{Deserialize, Serialize};

/// 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<[u8; 3]>,
}

impl RgbImage {
    /// Solid-color image.
    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![color; width * height],
        }
    }

    /// Builds an image from row-major pixel data. Panics if the length
    /// does not match `width * height`.
    pub fn from_pixels(width: usize, height: usize, data: Vec<[u8; 3]>) -> Self {
        assert_eq!(data.len(), width * height, "pixel count mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        self.data[y * self.width + x]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, px: [u8; 3]) {
        self.data[y * self.width + x] = px;
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.data
    }

    /// Copies the `w x h` window with top-left corner `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> RgbImage {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop out of bounds");
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        RgbImage::from_pixels(w, h, data)
    }

    /// Writes `src` into this image with top-left corner `(x0, y0)`.
    pub fn blit(&mut self, src: &RgbImage, x0: usize, y0: usize) {
        assert!(x0 + src.width <= self.width && y0 + src.height <= self.height);
        for y in 0..src.height {
            let dst_row = (y0 + y) * self.width + x0;
            let src_row = y * src.width;
            self.data[dst_row..dst_row + src.width]
                .copy_from_slice(&src.data[src_row..src_row + src.width]);
        }
    }

    /// Single channel (0 = red, 1 = green, 2 = blue) as a grayscale image.
    pub fn channel(&self, c: usize) -> GrayImage {
        assert!(c < 3);
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|px| px[c] as f64).collect(),
        }
    }
}

/// Grayscale image with real-valued intensities.
///
/// Pipeline stages keep intensities on the 0–255 scale but intermediate
/// results (filter responses, optical densities) may be signed or exceed
/// that range; nothing in this type clamps.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "pixel count mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Sample with replicated (clamped) boundaries; `x`/`y` may be negative
    /// or past the far edge.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.data[cy * self.width + cx]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
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

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> GrayImage {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop out of bounds");
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        GrayImage::from_data(w, h, data)
    }
}

/// 2D boolean grid; the currency of thresholding and morphology.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self::filled(width, height, false)
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            bits: vec![value; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width * height, "bit count mismatch");
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Out-of-image pixels read as background.
    #[inline]
    pub fn get_or_false(&self, x: isize, y: isize) -> bool {
        if x < 0 || y < 0 || x >= self.width as isize || y >= self.height as isize {
            false
        } else {
            self.bits[y as usize * self.width + x as usize]
        }
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_true(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Coordinates of all true pixels in raster order.
    pub fn true_pixels(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    out.push((x, y));
                }
            }
        }
        out
    }

    /// Pixelwise AND; dimensions must match.
    pub fn and(&self, other: &BinaryMask) -> BinaryMask {
        assert_eq!((self.width, self.height), (other.width, other.height));
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| a && b)
                .collect(),
        }
    }

    /// Pixelwise OR; dimensions must match.
    pub fn or(&self, other: &BinaryMask) -> BinaryMask {
        assert_eq!((self.width, self.height), (other.width, other.height));
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| a || b)
                .collect(),
        }
    }

    /// True iff every true pixel of `self` is true in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        assert_eq!((self.width, self.height), (other.width, other.height));
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Grayscale view with false -> 0 and true -> 255.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.bits.iter().map(|&b| if b { 255.0 } else { 0.0 }).collect(),
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> BinaryMask {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop out of bounds");
        let mut bits = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            bits.extend_from_slice(&self.bits[y * self.width + x0..y * self.width + x0 + w]);
        }
        BinaryMask::from_bits(w, h, bits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_and_blit_round_trip() {
        let mut img = RgbImage::filled(6, 4, [1, 2, 3]);
        img.set_pixel(3, 2, [9, 9, 9]);
        let crop = img.crop(2, 1, 3, 2);
        assert_eq!(crop.pixel(1, 1), [9, 9, 9]);
        let mut back = RgbImage::filled(6, 4, [0, 0, 0]);
        back.blit(&crop, 2, 1);
        assert_eq!(back.pixel(3, 2), [9, 9, 9]);
    }

    #[test]
    fn clamped_sampling_replicates_edges() {
        let g = GrayImage::from_data(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(g.get_clamped(-5, 0), 1.0);
        assert_eq!(g.get_clamped(3, 3), 4.0);
    }

    #[test]
    fn mask_set_operations() {
        let mut a = BinaryMask::empty(3, 1);
        a.set(0, 0, true);
        a.set(1, 0, true);
        let mut b = BinaryMask::empty(3, 1);
        b.set(1, 0, true);
        b.set(2, 0, true);
        assert_eq!(a.and(&b).count_true(), 1);
        assert_eq!(a.or(&b).count_true(), 3);
        assert!(b.and(&a).is_subset_of(&a));
    }
}
