//! Scalar-field filtering primitives.
//!
//! All filters replicate boundary pixels, preserve image dimensions, and
//! return finite outputs for finite inputs. Gaussian kernels are truncated
//! at radius `ceil(3 * sigma)` and renormalized to unit sum.

use serde::{Deserialize, Serialize};

use crate::raster::{BinaryMask, GrayImage};

/// Parameters of the edge-preserving diffusion filter.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DiffusionParams {
    /// Number of explicit time steps.
    pub iterations: usize,
    /// Gradient scale K (intensity units); larger diffuses across
    /// stronger edges.
    pub kappa: f64,
    /// Step size lambda in (0, 0.25] for the 4-neighbor explicit scheme.
    pub rate: f64,
}

impl DiffusionParams {
    pub fn new(iterations: usize, kappa: f64, rate: f64) -> Self {
        assert!(kappa > 0.0, "kappa must be positive");
        assert!(rate > 0.0 && rate <= 0.25, "rate must lie in (0, 0.25]");
        Self {
            iterations,
            kappa,
            rate,
        }
    }
}

impl Default for DiffusionParams {
    fn default() -> Self {
        Self {
            iterations: 10,
            kappa: 15.0,
            rate: 0.2,
        }
    }
}

/// Standard deviations of the two Gaussians in a difference-of-Gaussians
/// filter; `sigma1 < sigma2`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DogParams {
    pub sigma1: f64,
    pub sigma2: f64,
}

impl DogParams {
    pub fn new(sigma1: f64, sigma2: f64) -> Self {
        assert!(sigma1 > 0.0 && sigma1 < sigma2, "need 0 < sigma1 < sigma2");
        Self { sigma1, sigma2 }
    }
}

impl Default for DogParams {
    fn default() -> Self {
        Self {
            sigma1: 4.0,
            sigma2: 10.0,
        }
    }
}

/// Edge-preserving smoothing by explicit iteration of the diffusion
/// equation with conductance `c = exp(-(|grad I| / kappa)^2)` evaluated on
/// 4-neighbor differences.
///
/// The flux form conserves the image sum: each inter-pixel flux enters one
/// pixel and leaves the other, and replicated boundaries carry no flux.
pub fn anisotropic_diffusion(img: &GrayImage, p: &DiffusionParams) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let mut cur = img.clone();
    let inv_k2 = 1.0 / (p.kappa * p.kappa);
    for _ in 0..p.iterations {
        let mut next = cur.clone();
        for y in 0..h {
            for x in 0..w {
                let c = cur.get(x, y);
                let mut delta = 0.0;
                for (dx, dy) in [(0isize, -1isize), (0, 1), (-1, 0), (1, 0)] {
                    let d = cur.get_clamped(x as isize + dx, y as isize + dy) - c;
                    delta += (-(d * d) * inv_k2).exp() * d;
                }
                next.set(x, y, c + p.rate * delta);
            }
        }
        cur = next;
    }
    cur
}

/// Normalized 1-D Gaussian kernel of radius `ceil(3 * sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    assert!(sigma > 0.0, "sigma must be positive");
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64 * i as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }
    kernel
}

/// Gaussian smoothing as two separable 1-D passes with replicated borders.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (w, h) = (img.width(), img.height());

    let mut horiz = GrayImage::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &k) in kernel.iter().enumerate() {
                acc += k * img.get_clamped(x as isize + i as isize - radius, y as isize);
            }
            horiz.set(x, y, acc);
        }
    }
    let mut out = GrayImage::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &k) in kernel.iter().enumerate() {
                acc += k * horiz.get_clamped(x as isize, y as isize + i as isize - radius);
            }
            out.set(x, y, acc);
        }
    }
    out
}

/// 4-neighbor Laplacian stencil with replicated borders.
pub fn laplacian(img: &GrayImage) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let mut out = GrayImage::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            let v = img.get_clamped(xi - 1, yi)
                + img.get_clamped(xi + 1, yi)
                + img.get_clamped(xi, yi - 1)
                + img.get_clamped(xi, yi + 1)
                - 4.0 * img.get(x, y);
            out.set(x, y, v);
        }
    }
    out
}

/// Laplacian of the Gaussian-smoothed image; intensity edges show up as
/// zero crossings of the response.
pub fn log_filter(img: &GrayImage, sigma: f64) -> GrayImage {
    laplacian(&gaussian_blur(img, sigma))
}

/// Difference of Gaussians: `blur(sigma1) - blur(sigma2)`, pixelwise.
pub fn dog_filter(img: &GrayImage, p: &DogParams) -> GrayImage {
    let a = gaussian_blur(img, p.sigma1);
    let b = gaussian_blur(img, p.sigma2);
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x - y)
        .collect();
    GrayImage::from_data(img.width(), img.height(), data)
}

/// Joint spatial/range-weighted average with per-pixel renormalization.
/// Window radius is `ceil(3 * sigma_space)`; samples replicate at borders.
pub fn bilateral_filter(img: &GrayImage, sigma_space: f64, sigma_range: f64) -> GrayImage {
    assert!(sigma_space > 0.0 && sigma_range > 0.0, "sigmas must be positive");
    let radius = (3.0 * sigma_space).ceil() as isize;
    let inv_2ss = 1.0 / (2.0 * sigma_space * sigma_space);
    let inv_2sr = 1.0 / (2.0 * sigma_range * sigma_range);
    let (w, h) = (img.width(), img.height());
    let mut out = GrayImage::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let center = img.get(x, y);
            let mut num = 0.0;
            let mut den = 0.0;
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let v = img.get_clamped(x as isize + dx, y as isize + dy);
                    let ds = (dx * dx + dy * dy) as f64;
                    let dr = v - center;
                    let weight = (-ds * inv_2ss - dr * dr * inv_2sr).exp();
                    num += weight * v;
                    den += weight;
                }
            }
            out.set(x, y, num / den);
        }
    }
    out
}

/// Power-law intensity mapping `out = 255 * (in / 255)^gamma` for inputs
/// on the 0-255 scale (clamped into range before the power).
pub fn gamma_correct(img: &GrayImage, gamma: f64) -> GrayImage {
    assert!(gamma > 0.0, "gamma must be positive");
    img.map(|v| 255.0 * (v.clamp(0.0, 255.0) / 255.0).powf(gamma))
}

/// Binary mask of pixels strictly above `t`.
pub fn threshold(img: &GrayImage, t: f64) -> BinaryMask {
    let bits = img.data().iter().map(|&v| v > t).collect();
    BinaryMask::from_bits(img.width(), img.height(), bits)
}

/// Linear min-max rescale onto [0, 255]; a constant image maps to all
/// zeros.
pub fn rescale_to_255(img: &GrayImage) -> GrayImage {
    let (lo, hi) = img.min_max();
    if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
        return GrayImage::zeros(img.width(), img.height());
    }
    let scale = 255.0 / (hi - lo);
    img.map(|v| (v - lo) * scale)
}
