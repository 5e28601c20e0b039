//! Deterministic synthetic slides: dark hematoxylin-toned ellipses on a
//! pale background, with exact ground truth for centers and areas.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::raster::RgbImage;
use crate::stains::StainMatrix;

/// RGB value whose optical density equals `conc` times the default
/// hematoxylin vector (pure-stain pixel under the Beer-Lambert model).
pub fn hematoxylin_rgb(conc: f64) -> [u8; 3] {
    let h = StainMatrix::default().hematoxylin;
    let mut px = [0u8; 3];
    for c in 0..3 {
        px[c] = (256.0 * 10f64.powf(-conc * h[c]) - 1.0).round().clamp(0.0, 255.0) as u8;
    }
    px
}

/// Ground truth for one painted nucleus.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedNucleus {
    pub center: (f64, f64),
    /// Painted pixel count.
    pub area: usize,
    /// Semi-axes `(a, b)` of the ellipse.
    pub semi_axes: (f64, f64),
    /// Rotation of the major axis, radians.
    pub angle: f64,
    /// Hematoxylin concentration used for the fill color.
    pub concentration: f64,
}

/// Layout parameters of a generated slide.
#[derive(Debug, Clone)]
pub struct SlideSpec {
    pub width: usize,
    pub height: usize,
    pub count: usize,
    /// Semi-axis range; both axes drawn independently.
    pub axis_range: (f64, f64),
    /// Minimum free space between ellipse bounding circles.
    pub min_gap: f64,
    /// Hematoxylin concentration range of the fills.
    pub concentration_range: (f64, f64),
    /// Extra clearance kept around the image border and the two central
    /// quartering lines so no nucleus straddles a cut.
    pub cut_margin: f64,
    pub background: [u8; 3],
}

impl Default for SlideSpec {
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
            count: 30,
            axis_range: (13.0, 19.0),
            min_gap: 6.0,
            concentration_range: (0.9, 1.3),
            cut_margin: 4.0,
            background: [245, 225, 240],
        }
    }
}

/// Generates a slide and its ground truth; identical seeds give identical
/// slides.
///
/// Panics if the requested count cannot be placed (the rejection sampler
/// gives up after a fixed budget).
pub fn synthetic_slide(spec: &SlideSpec, seed: u64) -> (RgbImage, Vec<PlantedNucleus>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = RgbImage::filled(spec.width, spec.height, spec.background);
    let mut planted: Vec<PlantedNucleus> = Vec::new();

    let max_axis = spec.axis_range.1;
    let margin = max_axis + spec.cut_margin;
    let (w, h) = (spec.width as f64, spec.height as f64);
    let mut attempts = 0usize;
    while planted.len() < spec.count {
        attempts += 1;
        assert!(
            attempts < 200_000,
            "could not place {} nuclei on {}x{}",
            spec.count,
            spec.width,
            spec.height
        );
        let a = rng.gen_range(spec.axis_range.0..=spec.axis_range.1);
        let b = rng.gen_range(spec.axis_range.0..=spec.axis_range.1);
        let angle = rng.gen_range(0.0..std::f64::consts::PI);
        let cx = rng.gen_range(margin..w - margin);
        let cy = rng.gen_range(margin..h - margin);
        // Keep clear of the quartering cuts.
        let (half_w, half_h) = ((spec.width / 2) as f64, (spec.height / 2) as f64);
        if (cx - half_w).abs() < margin || (cy - half_h).abs() < margin {
            continue;
        }
        let reach = a.max(b);
        let clash = planted.iter().any(|p| {
            let d = ((p.center.0 - cx).powi(2) + (p.center.1 - cy).powi(2)).sqrt();
            d < reach + p.semi_axes.0.max(p.semi_axes.1) + spec.min_gap
        });
        if clash {
            continue;
        }
        let conc = rng.gen_range(spec.concentration_range.0..=spec.concentration_range.1);
        let area = paint_ellipse(&mut img, cx, cy, a, b, angle, hematoxylin_rgb(conc));
        planted.push(PlantedNucleus {
            center: (cx, cy),
            area,
            semi_axes: (a, b),
            angle,
            concentration: conc,
        });
    }
    (img, planted)
}

/// Fills a rotated ellipse and returns the painted pixel count.
pub fn paint_ellipse(
    img: &mut RgbImage,
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    angle: f64,
    color: [u8; 3],
) -> usize {
    let (sin, cos) = angle.sin_cos();
    let reach = a.max(b).ceil() as isize;
    let mut painted = 0usize;
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let x = cx.round() as isize + dx;
            let y = cy.round() as isize + dy;
            if x < 0 || y < 0 || x >= img.width() as isize || y >= img.height() as isize {
                continue;
            }
            let fx = x as f64 - cx;
            let fy = y as f64 - cy;
            let u = (fx * cos + fy * sin) / a;
            let v = (-fx * sin + fy * cos) / b;
            if u * u + v * v <= 1.0 {
                img.set_pixel(x as usize, y as usize, color);
                painted += 1;
            }
        }
    }
    painted
}
