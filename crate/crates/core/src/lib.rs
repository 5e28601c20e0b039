//! Detection, segmentation, and pleomorphism scoring of cell nuclei in
//! stained breast-tissue images.
//!
//! The pipeline runs in three stages:
//!
//! 1. **Preprocessing** ([`stains`], [`filters`]): unmix the hematoxylin
//!    channel from an RGB image, denoise it with edge-preserving diffusion,
//!    and binarize edges with a Laplacian-of-Gaussian filter.
//! 2. **Segmentation** ([`detect`], [`levelset`]): locate nucleus centers
//!    with morphology plus difference-of-Gaussians blob detection, build an
//!    initial contour per nucleus, and evolve it to the nucleus boundary
//!    with distance-regularized level sets.
//! 3. **Scoring** ([`features`], [`scoring`]): extract area, mean intensity,
//!    circularity, and nucleoli counts per nucleus, then map population
//!    fractions onto 1–3 criterion scores and an overall slide score.
//!
//! [`pipeline`] ties the stages together for batch processing and carries
//! the serializable configuration and report types used by the CLI.

pub mod detect;
pub mod features;
pub mod filters;
pub mod levelset;
pub mod morphology;
pub mod pipeline;
pub mod raster;
pub mod scoring;
pub mod stains;
pub mod synth;

pub use raster::{BinaryMask, GrayImage, RgbImage};
