//! File I/O: raster images, ground-truth CSVs, and output artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nucleograde_core::pipeline::SlideReport;
use nucleograde_core::scoring::Score;
use nucleograde_core::RgbImage;

/// Extensions accepted as slide images.
const IMAGE_EXTENSIONS: [&str; 3] = ["png", "tif", "tiff"];

/// All slide images in a directory, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir)
        .with_context(|| format!("cannot read input directory {}", dir.display()))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    Ok(paths)
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)
        .with_context(|| format!("cannot decode image {}", path.display()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| [p[0], p[1], p[2]]).collect();
    Ok(RgbImage::from_pixels(w, h, data))
}

pub fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    let mut out = image::RgbImage::new(img.width() as u32, img.height() as u32);
    for (x, y, px) in out.enumerate_pixels_mut() {
        let [r, g, b] = img.pixel(x as usize, y as usize);
        *px = image::Rgb([r, g, b]);
    }
    out.save(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// Writes the per-nucleus label image as 16-bit grayscale PNG.
pub fn save_labels(labels: &[u32], width: usize, height: usize, path: &Path) -> Result<()> {
    let mut out = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(width as u32, height as u32);
    for (x, y, px) in out.enumerate_pixels_mut() {
        let l = labels[y as usize * width + x as usize];
        *px = image::Luma([l.min(u16::MAX as u32) as u16]);
    }
    out.save(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// Input image with all nucleus boundaries in green and centroids in red.
pub fn render_overlay(img: &RgbImage, report: &SlideReport) -> RgbImage {
    let mut out = img.clone();
    for quarter in &report.quarters {
        for nucleus in &quarter.nuclei {
            for &(x, y) in &nucleus.polygon {
                out.set_pixel(x, y, [0, 220, 0]);
            }
            let (cx, cy) = nucleus.centroid;
            let (cx, cy) = (cx.round() as usize, cy.round() as usize);
            if cx < out.width() && cy < out.height() {
                out.set_pixel(cx, cy, [230, 30, 30]);
            }
        }
    }
    out
}

/// Ground-truth nucleus centers keyed by image id (file stem).
pub fn read_centers_csv(path: &Path) -> Result<BTreeMap<String, Vec<(f64, f64)>>> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("cannot read centers CSV {}", path.display()))?;
    expect_headers(&mut reader, &["image", "x", "y"], path)?;
    let mut out: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let image = field(&record, 0, path)?.to_string();
        let x: f64 = field(&record, 1, path)?.parse()?;
        let y: f64 = field(&record, 2, path)?.parse()?;
        out.entry(image).or_default().push((x, y));
    }
    Ok(out)
}

/// Ground-truth slide scores keyed by image id.
pub fn read_scores_csv(path: &Path) -> Result<BTreeMap<String, Score>> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("cannot read scores CSV {}", path.display()))?;
    expect_headers(&mut reader, &["image", "score"], path)?;
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let image = field(&record, 0, path)?.to_string();
        let raw: u8 = field(&record, 1, path)?.parse()?;
        let score = Score::try_from(raw).map_err(|e| anyhow::anyhow!(e))?;
        out.insert(image, score);
    }
    Ok(out)
}

/// Nucleoli annotations: (image_path, x, y, label) with label 1 for
/// nucleolus and 2 for non-nucleolus.
pub fn read_annotations_csv(path: &Path) -> Result<Vec<(PathBuf, f64, f64, i32)>> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("cannot read annotations CSV {}", path.display()))?;
    expect_headers(&mut reader, &["image_path", "x", "y", "label"], path)?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        out.push((
            PathBuf::from(field(&record, 0, path)?),
            field(&record, 1, path)?.parse()?,
            field(&record, 2, path)?.parse()?,
            field(&record, 3, path)?.parse()?,
        ));
    }
    Ok(out)
}

/// Writes detected seeds as `image_id,x,y` rows.
pub fn write_seeds_csv(path: &Path, rows: &[(String, f64, f64)]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("cannot write seeds CSV {}", path.display()))?;
    writer.write_record(["image_id", "x", "y"])?;
    for (image, x, y) in rows {
        writer.write_record([image.as_str(), &x.to_string(), &y.to_string()])?;
    }
    writer.flush()?;
    Ok(())
}

fn expect_headers(
    reader: &mut csv::Reader<std::fs::File>,
    expected: &[&str],
    path: &Path,
) -> Result<()> {
    let headers = reader.headers()?;
    let got: Vec<String> = headers.iter().map(|h| h.trim().to_lowercase()).collect();
    if got != expected {
        bail!(
            "{}: expected header {:?}, got {:?}",
            path.display(),
            expected,
            got
        );
    }
    Ok(())
}

fn field<'a>(record: &'a csv::StringRecord, idx: usize, path: &Path) -> Result<&'a str> {
    record
        .get(idx)
        .map(str::trim)
        .with_context(|| format!("{}: missing column {idx}", path.display()))
}

/// File stem used as the image id in reports and ground truth.
pub fn image_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}
