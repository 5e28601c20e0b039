//! Local binary patterns and the completed (sign/magnitude/center) variant.
//!
//! A code compares the center pixel against `P` neighbors sampled with
//! bilinear interpolation on a radius-`R` circle, counter-clockwise from
//! angle 0 (neighbor p sits at `(x + R cos a, y - R sin a)`, `a = 2 pi p / P`).
//! The comparison `s(x)` maps `x >= 0` to 1, so a constant patch codes to
//! all ones. Interpolated samples carry rounding noise of a few ulps, so
//! differences within [`TIE_EPS`] count as ties and code as 1.

use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::raster::{BinaryMask, GrayImage};

/// Comparison slack on the 0-255 intensity scale; exact ties must survive
/// bilinear-interpolation rounding.
pub const TIE_EPS: f64 = 1e-7;

/// Histogram of LBP codes over a region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LbpHistogram {
    /// Neighbor count.
    pub points: u32,
    /// Sampling radius in pixels.
    pub radius: f64,
    /// One bin per code, `2^points` total.
    pub bins: Vec<u64>,
    /// Number of region pixels whose whole neighborhood fit in-image.
    pub coded_pixels: u64,
}

impl LbpHistogram {
    /// Bin counts normalized to unit sum; all zeros when nothing was coded.
    pub fn normalized(&self) -> Vec<f64> {
        let total: u64 = self.bins.iter().sum();
        if total == 0 {
            return vec![0.0; self.bins.len()];
        }
        self.bins.iter().map(|&b| b as f64 / total as f64).collect()
    }
}

/// Sign/magnitude/center descriptor of a textured region.
#[derive(Debug, Clone, PartialEq)]
pub struct ClbpDescriptor {
    pub sign_hist: LbpHistogram,
    pub magnitude_hist: LbpHistogram,
    /// Counts of center pixels below/at-or-above the region mean.
    pub center_hist: [u64; 2],
    /// Concatenation of the three histograms, each L1-normalized to unit
    /// sum.
    pub feature_vector: Vec<f64>,
}

fn check_lbp_args(points: u32) {
    assert!((1..=16).contains(&points), "LBP neighbor count must be in 1..=16");
}

fn neighborhood_fits(img: &GrayImage, x: f64, y: f64, radius: f64) -> bool {
    let eps = 1e-9;
    x - radius >= -eps
        && y - radius >= -eps
        && x + radius <= img.width() as f64 - 1.0 + eps
        && y + radius <= img.height() as f64 - 1.0 + eps
}

fn bilinear(img: &GrayImage, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (xi, yi) = (x0 as isize, y0 as isize);
    (1.0 - fx) * (1.0 - fy) * img.get_clamped(xi, yi)
        + fx * (1.0 - fy) * img.get_clamped(xi + 1, yi)
        + (1.0 - fx) * fy * img.get_clamped(xi, yi + 1)
        + fx * fy * img.get_clamped(xi + 1, yi + 1)
}

fn neighbor_values(img: &GrayImage, cx: usize, cy: usize, points: u32, radius: f64) -> Vec<f64> {
    (0..points)
        .map(|p| {
            let angle = 2.0 * std::f64::consts::PI * p as f64 / points as f64;
            let sx = cx as f64 + radius * angle.cos();
            let sy = cy as f64 - radius * angle.sin();
            bilinear(img, sx, sy)
        })
        .collect()
}

/// LBP code of the pixel at `center`; the neighborhood circle must fit
/// inside the image.
pub fn lbp_code(
    img: &GrayImage,
    center: (usize, usize),
    points: u32,
    radius: f64,
) -> Result<u32, FeatureError> {
    check_lbp_args(points);
    assert!(radius > 0.0, "radius must be positive");
    let (cx, cy) = center;
    if cx >= img.width()
        || cy >= img.height()
        || !neighborhood_fits(img, cx as f64, cy as f64, radius)
    {
        return Err(FeatureError::OutOfBounds {
            x: cx as f64,
            y: cy as f64,
            radius,
        });
    }
    let gc = img.get(cx, cy);
    let mut code = 0u32;
    for (p, gp) in neighbor_values(img, cx, cy, points, radius).into_iter().enumerate() {
        if gp - gc >= -TIE_EPS {
            code |= 1 << p;
        }
    }
    Ok(code)
}

/// Histogram of codes over the region pixels whose neighborhoods fit
/// in-image.
pub fn lbp_histogram(
    img: &GrayImage,
    region: &BinaryMask,
    points: u32,
    radius: f64,
) -> Result<LbpHistogram, FeatureError> {
    check_lbp_args(points);
    if region.is_empty() {
        return Err(FeatureError::EmptyRegion);
    }
    let mut bins = vec![0u64; 1 << points];
    let mut coded = 0u64;
    for (x, y) in region.true_pixels() {
        if !neighborhood_fits(img, x as f64, y as f64, radius) {
            continue;
        }
        let code = lbp_code(img, (x, y), points, radius)?;
        bins[code as usize] += 1;
        coded += 1;
    }
    Ok(LbpHistogram {
        points,
        radius,
        bins,
        coded_pixels: coded,
    })
}

/// Completed LBP descriptor: the sign component is the plain LBP
/// histogram; the magnitude component thresholds `|g_p - g_c|` against the
/// mean absolute difference over the region; the center component
/// thresholds `g_c` against the region mean intensity.
pub fn clbp_descriptor(
    img: &GrayImage,
    region: &BinaryMask,
    points: u32,
    radius: f64,
) -> Result<ClbpDescriptor, FeatureError> {
    check_lbp_args(points);
    if region.is_empty() {
        return Err(FeatureError::EmptyRegion);
    }
    let coded: Vec<(usize, usize)> = region
        .true_pixels()
        .into_iter()
        .filter(|&(x, y)| neighborhood_fits(img, x as f64, y as f64, radius))
        .collect();
    if coded.is_empty() {
        // Nothing to describe: the region hugs the border too tightly.
        return Err(FeatureError::EmptyRegion);
    }

    let region_mean = {
        let px = region.true_pixels();
        px.iter().map(|&(x, y)| img.get(x, y)).sum::<f64>() / px.len() as f64
    };

    // Mean absolute neighbor difference over all (pixel, neighbor) pairs.
    let mut abs_sum = 0.0;
    let mut abs_n = 0usize;
    for &(x, y) in &coded {
        let gc = img.get(x, y);
        for gp in neighbor_values(img, x, y, points, radius) {
            abs_sum += (gp - gc).abs();
            abs_n += 1;
        }
    }
    let mean_abs = abs_sum / abs_n as f64;

    let mut sign_bins = vec![0u64; 1 << points];
    let mut mag_bins = vec![0u64; 1 << points];
    let mut center_hist = [0u64; 2];
    for &(x, y) in &coded {
        let gc = img.get(x, y);
        let mut sign_code = 0u32;
        let mut mag_code = 0u32;
        for (p, gp) in neighbor_values(img, x, y, points, radius).into_iter().enumerate() {
            if gp - gc >= -TIE_EPS {
                sign_code |= 1 << p;
            }
            if (gp - gc).abs() - mean_abs >= -TIE_EPS {
                mag_code |= 1 << p;
            }
        }
        sign_bins[sign_code as usize] += 1;
        mag_bins[mag_code as usize] += 1;
        center_hist[usize::from(gc - region_mean >= -TIE_EPS)] += 1;
    }

    let sign_hist = LbpHistogram {
        points,
        radius,
        bins: sign_bins,
        coded_pixels: coded.len() as u64,
    };
    let magnitude_hist = LbpHistogram {
        points,
        radius,
        bins: mag_bins,
        coded_pixels: coded.len() as u64,
    };
    let center_total = (center_hist[0] + center_hist[1]) as f64;
    let mut feature_vector = sign_hist.normalized();
    feature_vector.extend(magnitude_hist.normalized());
    feature_vector.push(center_hist[0] as f64 / center_total);
    feature_vector.push(center_hist[1] as f64 / center_total);

    Ok(ClbpDescriptor {
        sign_hist,
        magnitude_hist,
        center_hist,
        feature_vector,
    })
}
