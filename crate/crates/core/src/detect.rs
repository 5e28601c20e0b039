//! Nucleus-center detection: preprocessing to a binary edge image, then
//! morphology plus difference-of-Gaussians blob detection.
//!
//! The chain mirrors the first segmentation level: hematoxylin channel ->
//! edge-preserving diffusion -> Laplacian-of-Gaussian -> threshold gives
//! the edge image; closing, hole filling, and an erosion sized to a
//! healthy nucleus leave one blob per nucleus cluster, whose DoG maxima
//! mark nucleus centers. Detected centers seed the level-set stage.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filters::{
    anisotropic_diffusion, dog_filter, log_filter, rescale_to_255, threshold, DiffusionParams,
    DogParams,
};
use crate::morphology::{
    close, connected_components, dilate, erode, fill_holes, Connectivity, StructuringElement,
};
use crate::raster::{BinaryMask, GrayImage, RgbImage};
use crate::stains::{separate_hematoxylin, SeparationOptions, StainError, StainMatrix};

#[derive(Debug, Error, PartialEq)]
pub enum DetectError {
    #[error("image has no pixels")]
    InvalidImage,
    #[error(transparent)]
    Stain(#[from] StainError),
}

/// Preprocessing parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub stains: StainMatrix,
    pub separation: SeparationOptions,
    pub diffusion: DiffusionParams,
    /// Smoothing sigma of the edge extractor.
    pub log_sigma: f64,
    /// Binarization threshold on the signed response; pixels above it are
    /// edges. Zero keeps every positive response including the faint tail
    /// of the truncated kernel.
    pub log_threshold: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            stains: StainMatrix::default(),
            separation: SeparationOptions::default(),
            diffusion: DiffusionParams::default(),
            log_sigma: 2.0,
            log_threshold: 0.0,
        }
    }
}

/// Center-detection parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CenterConfig {
    /// Closing element radius that joins nearby edge fragments into
    /// cluster outlines.
    pub close_radius: u32,
    /// Erosion element radius, sized to a healthy nucleus; removes
    /// isolated healthy-scale objects and shrinks clusters toward their
    /// centers.
    pub healthy_radius: u32,
    pub dog: DogParams,
    /// Threshold on the DoG response after min-max rescale to [0, 255].
    pub dog_threshold: f64,
    /// Blobs below this pixel count are discarded as noise.
    pub min_seed_area: usize,
    /// Dilation radius used when rasterizing seeds into the initial
    /// contour; defaults to the healthy radius.
    pub seed_radius: u32,
}

impl Default for CenterConfig {
    fn default() -> Self {
        Self {
            close_radius: 3,
            healthy_radius: 6,
            dog: DogParams::default(),
            dog_threshold: 200.0,
            min_seed_area: 2,
            seed_radius: 6,
        }
    }
}

/// Intermediate products of preprocessing, all sized like the input.
#[derive(Debug, Clone)]
pub struct PreprocessOutput {
    pub h_channel: GrayImage,
    pub diffused: GrayImage,
    pub edge_binary: BinaryMask,
}

/// One candidate nucleus center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NucleusSeed {
    /// Blob centroid, `(x, y)`.
    pub center: (f64, f64),
    pub source_blob_area: usize,
}

/// Stain separation, diffusion, and edge binarization.
pub fn preprocess(img: &RgbImage, cfg: &PreprocessConfig) -> Result<PreprocessOutput, DetectError> {
    if img.width() == 0 || img.height() == 0 {
        return Err(DetectError::InvalidImage);
    }
    let h_channel = separate_hematoxylin(img, &cfg.stains, &cfg.separation)?;
    let diffused = anisotropic_diffusion(&h_channel, &cfg.diffusion);
    let edge_binary = threshold(&log_filter(&diffused, cfg.log_sigma), cfg.log_threshold);
    Ok(PreprocessOutput {
        h_channel,
        diffused,
        edge_binary,
    })
}

/// Filled cluster mask derived from the edge image; the domain initial
/// contours are confined to.
pub fn cluster_mask(pre: &PreprocessOutput, cfg: &CenterConfig) -> BinaryMask {
    fill_holes(&close(
        &pre.edge_binary,
        &StructuringElement::disk(cfg.close_radius),
    ))
}

/// Runs close -> fill -> erode on the edge image, then thresholds the
/// rescaled DoG response of the blob image; each surviving blob's centroid
/// becomes a seed.
pub fn detect_centers(pre: &PreprocessOutput, cfg: &CenterConfig) -> Vec<NucleusSeed> {
    let eroded = erode(
        &cluster_mask(pre, cfg),
        &StructuringElement::disk(cfg.healthy_radius),
    );
    let response = rescale_to_255(&dog_filter(&eroded.to_gray(), &cfg.dog));
    let blobs = threshold(&response, cfg.dog_threshold);
    connected_components(&blobs, Connectivity::Eight)
        .into_iter()
        .filter(|c| c.pixel_count >= cfg.min_seed_area)
        .map(|c| NucleusSeed {
            center: c.centroid,
            source_blob_area: c.pixel_count,
        })
        .collect()
}

/// Rasterizes seeds, dilates them, confines them to the filled cluster
/// mask, and closes/fills the product into the initial level-set region.
pub fn build_initial_contour(
    seeds: &[NucleusSeed],
    pre: &PreprocessOutput,
    cfg: &CenterConfig,
) -> BinaryMask {
    let (w, h) = (pre.edge_binary.width(), pre.edge_binary.height());
    let mut points = BinaryMask::empty(w, h);
    for seed in seeds {
        let x = seed.center.0.round().clamp(0.0, w as f64 - 1.0) as usize;
        let y = seed.center.1.round().clamp(0.0, h as f64 - 1.0) as usize;
        points.set(x, y, true);
    }
    let dilated = dilate(&points, &StructuringElement::disk(cfg.seed_radius));
    let confined = dilated.and(&cluster_mask(pre, cfg));
    fill_holes(&close(
        &confined,
        &StructuringElement::disk(cfg.close_radius),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// RGB value whose optical density points along the default
    /// hematoxylin vector with the given concentration.
    fn hematoxylin_rgb(conc: f64) -> [u8; 3] {
        let h = StainMatrix::default().hematoxylin;
        let mut px = [0u8; 3];
        for c in 0..3 {
            px[c] = (256.0 * 10f64.powf(-conc * h[c]) - 1.0).round() as u8;
        }
        px
    }

    fn disk_slide(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> RgbImage {
        let nucleus = hematoxylin_rgb(1.0);
        let mut img = RgbImage::filled(w, h, [255, 255, 255]);
        for y in 0..h {
            for x in 0..w {
                if (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r {
                    img.set_pixel(x, y, nucleus);
                }
            }
        }
        img
    }

    #[test]
    fn uniform_image_has_no_edges() {
        // Eosin-pink background only: the H channel is flat.
        let img = RgbImage::filled(40, 40, [240, 140, 230]);
        let pre = preprocess(&img, &PreprocessConfig::default()).unwrap();
        assert!(pre.edge_binary.is_empty());
        assert_eq!(pre.h_channel.width(), 40);
        assert_eq!(pre.diffused.height(), 40);
    }

    #[test]
    fn zero_size_image_is_invalid() {
        let img = RgbImage::filled(0, 0, [0, 0, 0]);
        assert!(matches!(
            preprocess(&img, &PreprocessConfig::default()),
            Err(DetectError::InvalidImage)
        ));
    }

    #[test]
    fn disk_produces_edge_ring_near_boundary() {
        let (cx, cy, r) = (40.0, 40.0, 14.0);
        let img = disk_slide(80, 80, cx, cy, r);
        // A tighter sigma narrows the response lobe, and the threshold
        // sits below the ~18 peak but above the 4-px-inside shoulder, so
        // the ring hugs the true boundary.
        let cfg = PreprocessConfig {
            log_sigma: 1.5,
            log_threshold: 12.0,
            ..Default::default()
        };
        let pre = preprocess(&img, &cfg).unwrap();
        assert!(!pre.edge_binary.is_empty());
        for (x, y) in pre.edge_binary.true_pixels() {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            assert!((d - r).abs() <= 3.0, "edge pixel ({x},{y}) at distance {d}");
        }
        // The ring closes: filling it covers the disk center.
        let filled = cluster_mask(&pre, &CenterConfig::default());
        assert!(filled.get(cx as usize, cy as usize));
    }

    #[test]
    fn empty_edges_give_no_seeds() {
        let img = RgbImage::filled(50, 50, [250, 250, 250]);
        let pre = preprocess(&img, &PreprocessConfig::default()).unwrap();
        assert!(detect_centers(&pre, &CenterConfig::default()).is_empty());
    }

    #[test]
    fn single_disk_yields_one_centered_seed() {
        let (cx, cy) = (48.0, 48.0);
        let img = disk_slide(96, 96, cx, cy, 14.0);
        let pre = preprocess(&img, &PreprocessConfig::default()).unwrap();
        let seeds = detect_centers(&pre, &CenterConfig::default());
        assert_eq!(seeds.len(), 1);
        let (sx, sy) = seeds[0].center;
        let dist = ((sx - cx).powi(2) + (sy - cy).powi(2)).sqrt();
        assert!(dist <= 3.0, "seed at ({sx:.1},{sy:.1}), {dist:.2} px off");
    }

    #[test]
    fn two_disks_yield_two_seeds() {
        let centers = [(45.0, 60.0), (105.0, 60.0)];
        let mut img = disk_slide(150, 120, centers[0].0, centers[0].1, 14.0);
        let nucleus = hematoxylin_rgb(1.0);
        for y in 0..120 {
            for x in 0..150 {
                if (x as f64 - centers[1].0).powi(2) + (y as f64 - centers[1].1).powi(2) <= 196.0 {
                    img.set_pixel(x, y, nucleus);
                }
            }
        }
        let pre = preprocess(&img, &PreprocessConfig::default()).unwrap();
        let cfg = CenterConfig::default();
        let seeds = detect_centers(&pre, &cfg);
        assert_eq!(seeds.len(), 2);
        for (cx, cy) in centers {
            let best = seeds
                .iter()
                .map(|s| ((s.center.0 - cx).powi(2) + (s.center.1 - cy).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(best <= 3.0, "no seed within 3 px of ({cx},{cy})");
        }
        // Each centroid sits in the eroded morphology mask.
        let eroded = erode(
            &cluster_mask(&pre, &cfg),
            &StructuringElement::disk(cfg.healthy_radius),
        );
        for s in &seeds {
            assert!(eroded.get(s.center.0.round() as usize, s.center.1.round() as usize));
        }
    }

    #[test]
    fn no_seeds_build_empty_contour() {
        let img = RgbImage::filled(40, 40, [250, 250, 250]);
        let pre = preprocess(&img, &PreprocessConfig::default()).unwrap();
        let initial = build_initial_contour(&[], &pre, &CenterConfig::default());
        assert!(initial.is_empty());
    }

    #[test]
    fn contour_stays_inside_filled_cluster_mask() {
        let img = disk_slide(96, 96, 48.0, 48.0, 14.0);
        let pre = preprocess(&img, &PreprocessConfig::default()).unwrap();
        let cfg = CenterConfig::default();
        let seeds = detect_centers(&pre, &cfg);
        let initial = build_initial_contour(&seeds, &pre, &cfg);
        assert!(!initial.is_empty());
        assert!(initial.is_subset_of(&cluster_mask(&pre, &cfg)));
        // And the region is inside the true disk's filled neighborhood.
        for (x, y) in initial.true_pixels() {
            let d = ((x as f64 - 48.0).powi(2) + (y as f64 - 48.0).powi(2)).sqrt();
            assert!(d <= 14.0 + 1.0, "contour pixel ({x},{y}) outside the disk");
        }
    }

    #[test]
    fn seed_outside_cluster_mask_contributes_nothing() {
        let img = disk_slide(96, 96, 48.0, 48.0, 14.0);
        let pre = preprocess(&img, &PreprocessConfig::default()).unwrap();
        let cfg = CenterConfig::default();
        let far_seed = NucleusSeed {
            center: (5.0, 5.0),
            source_blob_area: 10,
        };
        let initial = build_initial_contour(&[far_seed], &pre, &cfg);
        assert!(initial.is_empty());
    }

    #[test]
    fn nearby_seeds_merge_into_one_region() {
        let img = disk_slide(96, 96, 48.0, 48.0, 14.0);
        let pre = preprocess(&img, &PreprocessConfig::default()).unwrap();
        let cfg = CenterConfig::default();
        let seeds = [
            NucleusSeed {
                center: (45.0, 48.0),
                source_blob_area: 5,
            },
            NucleusSeed {
                center: (51.0, 48.0),
                source_blob_area: 5,
            },
        ];
        let initial = build_initial_contour(&seeds, &pre, &cfg);
        let comps = connected_components(&initial, Connectivity::Eight);
        assert_eq!(comps.len(), 1, "overlapping dilations must merge");
    }
}

