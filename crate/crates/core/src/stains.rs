//! H&E stain separation via optical-density color deconvolution.
//!
//! An RGB pixel is mapped to optical density per channel (Beer-Lambert),
//! then the per-stain concentrations are the solution of the 3x3 linear
//! system whose columns are the stain absorbance vectors. The pipeline
//! only consumes the hematoxylin channel, rescaled so nuclei come out
//! dark on a bright background.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{GrayImage, RgbImage};

#[derive(Debug, Error, PartialEq)]
pub enum StainError {
    /// Stain vectors are linearly dependent; the deconvolution system
    /// has no unique solution.
    #[error("stain matrix is singular (|det| < {0:e})")]
    SingularStainMatrix(f64),
}

/// Determinant magnitude below which the stain matrix is treated as singular.
pub const SINGULARITY_TOL: f64 = 1e-9;

/// Absorbance directions of the two stains plus a residual axis.
///
/// Each vector is a unit 3-vector in optical-density space. Columns of the
/// deconvolution matrix are `[hematoxylin, eosin, residual]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StainMatrix {
    pub hematoxylin: [f64; 3],
    pub eosin: [f64; 3],
    pub residual: [f64; 3],
}

impl Default for StainMatrix {
    fn default() -> Self {
        Self::from_stain_vectors([0.650, 0.704, 0.286], [0.072, 0.990, 0.105])
    }
}

impl StainMatrix {
    /// Normalizes both stain vectors and fills the residual axis with their
    /// normalized cross product.
    pub fn from_stain_vectors(hematoxylin: [f64; 3], eosin: [f64; 3]) -> Self {
        let h = normalize(hematoxylin);
        let e = normalize(eosin);
        let r = normalize(cross(h, e));
        Self {
            hematoxylin: h,
            eosin: e,
            residual: r,
        }
    }

    /// Inverse of the column matrix `[h e r]`, or an error when the vectors
    /// are not linearly independent.
    pub fn inverse(&self) -> Result<InverseStainMatrix, StainError> {
        // Column matrix m[row][col].
        let m = [
            [self.hematoxylin[0], self.eosin[0], self.residual[0]],
            [self.hematoxylin[1], self.eosin[1], self.residual[1]],
            [self.hematoxylin[2], self.eosin[2], self.residual[2]],
        ];
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        if det.abs() < SINGULARITY_TOL {
            return Err(StainError::SingularStainMatrix(SINGULARITY_TOL));
        }
        let inv_det = 1.0 / det;
        let mut inv = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                let (r1, r2) = ((r + 1) % 3, (r + 2) % 3);
                let (c1, c2) = ((c + 1) % 3, (c + 2) % 3);
                // Transposed cofactor.
                inv[c][r] = (m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]) * inv_det;
            }
        }
        Ok(InverseStainMatrix { rows: inv })
    }

    /// Reconstructs an OD vector from concentrations, `od = M * conc`.
    pub fn reconstruct_od(&self, conc: [f64; 3]) -> [f64; 3] {
        let mut od = [0.0; 3];
        for ch in 0..3 {
            od[ch] = self.hematoxylin[ch] * conc[0]
                + self.eosin[ch] * conc[1]
                + self.residual[ch] * conc[2];
        }
        od
    }
}

/// Precomputed inverse of a stain matrix.
#[derive(Debug, Clone, Copy)]
pub struct InverseStainMatrix {
    rows: [[f64; 3]; 3],
}

impl InverseStainMatrix {
    /// Concentrations `(h, e, residual)` for one OD vector, unclamped.
    pub fn concentrations(&self, od: [f64; 3]) -> [f64; 3] {
        let mut c = [0.0; 3];
        for (i, row) in self.rows.iter().enumerate() {
            c[i] = row[0] * od[0] + row[1] * od[1] + row[2] * od[2];
        }
        c
    }
}

/// Per-channel optical density: `OD_c = -log10((v + 1) / (background + 1))`.
///
/// The +1 offset keeps the transform finite at v = 0. Requires
/// `background > 0` (255 for standard 8-bit scans).
pub fn rgb_to_optical_density(img: &RgbImage, background: f64) -> Vec<[f64; 3]> {
    assert!(background > 0.0, "background intensity must be positive");
    img.pixels()
        .iter()
        .map(|px| pixel_optical_density(*px, background))
        .collect()
}

/// Optical density of a single pixel.
pub fn pixel_optical_density(px: [u8; 3], background: f64) -> [f64; 3] {
    let denom = background + 1.0;
    let mut od = [0.0; 3];
    for ch in 0..3 {
        od[ch] = -((px[ch] as f64 + 1.0) / denom).log10();
    }
    od
}

/// Options for [`separate_hematoxylin`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SeparationOptions {
    /// Background intensity for the OD transform.
    pub background: f64,
    /// Concentration mapped to full scale; larger values clamp.
    pub max_concentration: f64,
    /// When true (default), concentration 0 maps to 255 and
    /// `max_concentration` to 0, so nuclei appear dark.
    pub dark_nuclei: bool,
}

impl Default for SeparationOptions {
    fn default() -> Self {
        Self {
            background: 255.0,
            max_concentration: 1.5,
            dark_nuclei: true,
        }
    }
}

/// Hematoxylin channel of a stained RGB image as a 0-255 grayscale image.
///
/// Concentrations are clamped below at zero; the output polarity follows
/// `opts.dark_nuclei`.
pub fn separate_hematoxylin(
    img: &RgbImage,
    stains: &StainMatrix,
    opts: &SeparationOptions,
) -> Result<GrayImage, StainError> {
    let inv = stains.inverse()?;
    let data = img
        .pixels()
        .iter()
        .map(|px| {
            let od = pixel_optical_density(*px, opts.background);
            let h = inv.concentrations(od)[0].max(0.0);
            let frac = (h / opts.max_concentration).clamp(0.0, 1.0);
            if opts.dark_nuclei {
                255.0 * (1.0 - frac)
            } else {
                255.0 * frac
            }
        })
        .collect();
    Ok(GrayImage::from_data(img.width(), img.height(), data))
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    assert!(n > 0.0, "stain vector must be nonzero");
    [v[0] / n, v[1] / n, v[2] / n]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
