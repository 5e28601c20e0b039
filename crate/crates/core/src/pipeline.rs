//! Batch orchestration: configuration, 20X quartering, the per-quarter
//! pipeline, ground-truth evaluation, and the JSON report schema.
//!
//! Reports are deterministic: collections keep insertion order, nothing
//! timestamps, and float formatting is the shortest round-trip form, so
//! identical inputs and config produce byte-identical JSON.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::detect::{
    build_initial_contour, detect_centers, preprocess, CenterConfig, DetectError, NucleusSeed,
    PreprocessConfig,
};
use crate::features::{
    detect_nucleoli, region_circularity, region_mean_intensity, trace_boundary, LinearSvmModel,
    NucleoliConfig, NucleusFeatures,
};
use crate::levelset::{segment_nuclei, DrlseParams, SegmentOptions};
use crate::morphology::{connected_components_with_labels, Connectivity};
use crate::raster::{BinaryMask, RgbImage};
use crate::scoring::{
    baseline_from_features, flag_nucleus, precision_recall_f, quarter_score, score_criteria,
    slide_score, CriterionScores, EvalCounts, NormalBaseline, NucleusFlags, Score, ScoringConfig,
    ScoringError,
};
use crate::stains::{SeparationOptions, StainMatrix};

/// Report schema identifier.
pub const REPORT_SCHEMA: &str = "nucleograde/1";

/// How recall is computed in every metrics block.
pub const RECALL_DEFINITION: &str = "recall = tp / (tp + fn)";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("image must be at least 2x2 to quarter, got {width}x{height}")]
    ImageTooSmall { width: usize, height: usize },
    #[error("stage {stage}: {message}")]
    Stage {
        stage: &'static str,
        message: String,
    },
    #[error("missing ground truth: {0}")]
    MissingGroundTruth(String),
}

impl From<DetectError> for PipelineError {
    fn from(e: DetectError) -> Self {
        PipelineError::Stage {
            stage: "preprocess",
            message: e.to_string(),
        }
    }
}

/// Every tunable of the pipeline, serializable as one TOML document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub stains: StainMatrix,
    pub separation: SeparationOptions,
    pub diffusion: crate::filters::DiffusionParams,
    /// Edge-extraction smoothing sigma.
    pub log_sigma: f64,
    /// Edge binarization threshold on the signed response.
    pub log_threshold: f64,
    pub centers: CenterConfig,
    pub drlse: DrlseParams,
    pub segment: SegmentOptions,
    pub nucleoli: NucleoliConfig,
    /// Path to a trained nucleoli classifier; without it every nucleolus
    /// count is zero and the nucleoli criterion stays at 1.
    pub nucleoli_model: Option<PathBuf>,
    pub scoring: ScoringConfig,
    pub baseline: NormalBaseline,
    /// Optional CSV of healthy-nucleus centers; when present the baseline
    /// is measured from them instead of the fixed values above.
    pub healthy_annotations: Option<PathBuf>,
    /// Center-matching radius for evaluation, pixels.
    pub match_radius: f64,
    /// Worker threads for batch processing; 0 picks the rayon default.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stains: StainMatrix::default(),
            separation: SeparationOptions::default(),
            diffusion: crate::filters::DiffusionParams::default(),
            log_sigma: 2.0,
            log_threshold: 0.0,
            centers: CenterConfig::default(),
            drlse: DrlseParams::default(),
            segment: SegmentOptions::default(),
            nucleoli: NucleoliConfig::default(),
            nucleoli_model: None,
            scoring: ScoringConfig::default(),
            baseline: NormalBaseline::default(),
            healthy_annotations: None,
            match_radius: 8.0,
            workers: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Rejects values that violate stage invariants.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |msg: String| Err(PipelineError::Config(msg));
        if self.diffusion.kappa <= 0.0 {
            return fail("diffusion.kappa must be positive".into());
        }
        if !(0.0..=0.25).contains(&self.diffusion.rate) || self.diffusion.rate == 0.0 {
            return fail(format!(
                "diffusion.rate must lie in (0, 0.25], got {}",
                self.diffusion.rate
            ));
        }
        if self.log_sigma <= 0.0 {
            return fail("log_sigma must be positive".into());
        }
        let dog = &self.centers.dog;
        if !(dog.sigma1 > 0.0 && dog.sigma1 < dog.sigma2) {
            return fail(format!(
                "centers.dog needs 0 < sigma1 < sigma2, got {} and {}",
                dog.sigma1, dog.sigma2
            ));
        }
        if self.centers.close_radius < 1 || self.centers.healthy_radius < 1 || self.centers.seed_radius < 1
        {
            return fail("morphology radii must be at least 1".into());
        }
        if self.drlse.mu <= 0.0 || self.drlse.mu * self.drlse.dt >= 0.25 {
            return fail(format!(
                "drlse needs mu > 0 and mu * dt < 0.25, got mu {} dt {}",
                self.drlse.mu, self.drlse.dt
            ));
        }
        if self.drlse.epsilon <= 0.0 {
            return fail("drlse.epsilon must be positive".into());
        }
        if self.segment.edge_sigma <= 0.0 {
            return fail("segment.edge_sigma must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.segment.collision_overlap) {
            return fail("segment.collision_overlap must lie in [0, 1]".into());
        }
        if self.nucleoli.gamma <= 0.0
            || self.nucleoli.bilateral_sigma_space <= 0.0
            || self.nucleoli.bilateral_sigma_range <= 0.0
        {
            return fail("nucleoli filter parameters must be positive".into());
        }
        if !(1..=16).contains(&self.nucleoli.lbp_points) {
            return fail("nucleoli.lbp_points must lie in 1..=16".into());
        }
        if self.nucleoli.train_patch_radius <= 0.0 || self.nucleoli.svm_c <= 0.0 {
            return fail("nucleoli training parameters must be positive".into());
        }
        if self.baseline.normal_area <= 0.0
            || self.baseline.normal_mean_intensity <= 0.0
            || self.baseline.normal_circularity <= 0.0
            || self.baseline.normal_nucleoli < 0.0
        {
            return fail("baseline features must be positive (nucleoli >= 0)".into());
        }
        if self.match_radius <= 0.0 {
            return fail("match_radius must be positive".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML form, for report provenance.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_toml().as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn preprocess_config(&self) -> PreprocessConfig {
        PreprocessConfig {
            stains: self.stains,
            separation: self.separation,
            diffusion: self.diffusion,
            log_sigma: self.log_sigma,
            log_threshold: self.log_threshold,
        }
    }
}

/// One quadrant of a slide image.
#[derive(Debug, Clone)]
pub struct Quarter {
    pub image: RgbImage,
    /// `(x, y, w, h)` of this quadrant in the parent image.
    pub region: (usize, usize, usize, usize),
}

/// Splits at `floor(w/2)`, `floor(h/2)`; odd remainders go to the right
/// and bottom quadrants. Order: top-left, top-right, bottom-left,
/// bottom-right.
pub fn quarter_image(img: &RgbImage) -> Result<[Quarter; 4], PipelineError> {
    let (w, h) = (img.width(), img.height());
    if w < 2 || h < 2 {
        return Err(PipelineError::ImageTooSmall {
            width: w,
            height: h,
        });
    }
    let (hw, hh) = (w / 2, h / 2);
    let regions = [
        (0, 0, hw, hh),
        (hw, 0, w - hw, hh),
        (0, hh, hw, h - hh),
        (hw, hh, w - hw, h - hh),
    ];
    Ok(regions.map(|(x, y, qw, qh)| Quarter {
        image: img.crop(x, y, qw, qh),
        region: (x, y, qw, qh),
    }))
}

/// One segmented nucleus in the report; coordinates are absolute in the
/// parent image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NucleusRecord {
    pub centroid: (f64, f64),
    pub area: usize,
    pub mean_intensity: f64,
    pub circularity: f64,
    pub nucleoli_count: usize,
    pub flags: NucleusFlags,
    /// Closed outer-boundary polygon (pixel centers).
    pub polygon: Vec<(usize, usize)>,
}

/// Result of running the pipeline on one (quarter) image.
#[derive(Debug, Clone)]
pub struct QuarterOutcome {
    pub seeds: Vec<NucleusSeed>,
    pub nuclei: Vec<NucleusRecord>,
    /// Boundary masks parallel to `nuclei`, in image-local coordinates.
    pub masks: Vec<BinaryMask>,
    pub criteria: Option<CriterionScores>,
    pub quarter_score: Option<Score>,
    pub notes: Vec<String>,
}

/// Full pipeline on a single image: preprocess, detect centers, build the
/// initial contour, evolve boundaries, extract features, score.
///
/// Per-nucleus failures become notes rather than aborting the image; a
/// quarter without nuclei skips scoring with a note.
pub fn run_pipeline(
    img: &RgbImage,
    cfg: &PipelineConfig,
    baseline: &NormalBaseline,
    nucleoli_model: Option<&LinearSvmModel>,
) -> Result<QuarterOutcome, PipelineError> {
    let mut notes = Vec::new();
    let pre = preprocess(img, &cfg.preprocess_config())?;
    let seeds = detect_centers(&pre, &cfg.centers);
    let initial = build_initial_contour(&seeds, &pre, &cfg.centers);
    let segmented = segment_nuclei(&initial, &pre.diffused, &cfg.drlse, &cfg.segment);
    for failure in &segmented.failures {
        notes.push(format!(
            "levelset: component {} failed: {}",
            failure.component_label, failure.error
        ));
    }

    let mut nuclei = Vec::new();
    let mut masks = Vec::new();
    for mask in segmented.nuclei {
        // The evolution may shed debris speckles; the nucleus is the
        // largest connected piece.
        let mask = largest_component(&mask);
        let area = mask.count_true();
        if area == 0 {
            continue;
        }
        let mean_intensity = match region_mean_intensity(&pre.diffused, &mask) {
            Ok(v) => v,
            Err(e) => {
                notes.push(format!("features: mean intensity failed: {e}"));
                continue;
            }
        };
        let circularity = match region_circularity(&mask) {
            Ok(v) => v,
            Err(e) => {
                notes.push(format!("features: circularity failed: {e}"));
                continue;
            }
        };
        let nucleoli_count = match nucleoli_model {
            Some(model) => match detect_nucleoli(img, &mask, model, &cfg.nucleoli) {
                Ok(n) => n,
                Err(e) => {
                    notes.push(format!("features: nucleoli detection failed: {e}"));
                    0
                }
            },
            None => 0,
        };
        let features = NucleusFeatures {
            area,
            mean_intensity,
            circularity,
            nucleoli_count,
        };
        let flags = flag_nucleus(&features, baseline, &cfg.scoring);
        let centroid = mask_centroid(&mask);
        let mut polygon = trace_boundary(&mask);
        if polygon.len() > 1 {
            polygon.pop(); // drop the repeated closing vertex
        }
        nuclei.push(NucleusRecord {
            centroid,
            area,
            mean_intensity,
            circularity,
            nucleoli_count,
            flags,
            polygon,
        });
        masks.push(mask);
    }

    let features: Vec<NucleusFeatures> = nuclei
        .iter()
        .map(|n| NucleusFeatures {
            area: n.area,
            mean_intensity: n.mean_intensity,
            circularity: n.circularity,
            nucleoli_count: n.nucleoli_count,
        })
        .collect();
    let (criteria, quarter) = match score_criteria(&features, baseline, &cfg.scoring) {
        Ok(c) => {
            let q = quarter_score(&c);
            (Some(c), Some(q))
        }
        Err(ScoringError::EmptyPopulation) => {
            notes.push("scoring: skipped (empty population)".into());
            (None, None)
        }
        Err(e) => {
            return Err(PipelineError::Stage {
                stage: "scoring",
                message: e.to_string(),
            })
        }
    };

    Ok(QuarterOutcome {
        seeds,
        nuclei,
        masks,
        criteria,
        quarter_score: quarter,
        notes,
    })
}

fn largest_component(mask: &BinaryMask) -> BinaryMask {
    let (comps, labels) = connected_components_with_labels(mask, Connectivity::Eight);
    match comps.iter().max_by_key(|c| c.pixel_count) {
        None => mask.clone(),
        Some(best) => {
            let bits = labels.iter().map(|&l| l == best.label).collect();
            BinaryMask::from_bits(mask.width(), mask.height(), bits)
        }
    }
}

fn mask_centroid(mask: &BinaryMask) -> (f64, f64) {
    let px = mask.true_pixels();
    let n = px.len().max(1) as f64;
    let sx: f64 = px.iter().map(|&(x, _)| x as f64).sum();
    let sy: f64 = px.iter().map(|&(_, y)| y as f64).sum();
    (sx / n, sy / n)
}

/// Per-quarter section of the report; nucleus coordinates are absolute.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuarterReport {
    pub index: usize,
    pub region: (usize, usize, usize, usize),
    pub seeds: Vec<(f64, f64)>,
    pub nuclei: Vec<NucleusRecord>,
    pub criteria: Option<CriterionScores>,
    pub quarter_score: Option<Score>,
    pub notes: Vec<String>,
}

/// Detection-evaluation block of the report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub counts: EvalCounts,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub f_defined: bool,
    pub recall_definition: String,
}

/// Full per-slide report, serialized as versioned JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlideReport {
    pub schema: String,
    pub image: String,
    pub config_hash: String,
    pub baseline: NormalBaseline,
    pub quarters: Vec<QuarterReport>,
    pub slide_score: Option<Score>,
    pub detection: Option<DetectionMetrics>,
    pub notes: Vec<String>,
}

impl SlideReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// All detected nucleus centroids in absolute coordinates.
    pub fn all_centroids(&self) -> Vec<(f64, f64)> {
        self.quarters
            .iter()
            .flat_map(|q| q.nuclei.iter().map(|n| n.centroid))
            .collect()
    }
}

/// Analysis products of one slide: the report plus a label image (one
/// integer label per nucleus, 0 background) for export.
#[derive(Debug, Clone)]
pub struct SlideAnalysis {
    pub report: SlideReport,
    pub label_width: usize,
    pub label_height: usize,
    pub labels: Vec<u32>,
}

/// Quarters the slide, runs the pipeline on each quadrant, aggregates the
/// slide score, and assembles the label image.
///
/// Quarters that scored contribute their score; unscored (empty) quarters
/// count as 1 for the slide aggregation. A slide where no quarter scored
/// has no slide score.
pub fn process_slide(
    image_id: &str,
    img: &RgbImage,
    cfg: &PipelineConfig,
    baseline: &NormalBaseline,
    nucleoli_model: Option<&LinearSvmModel>,
) -> Result<SlideAnalysis, PipelineError> {
    let quarters = quarter_image(img)?;
    let mut reports = Vec::with_capacity(4);
    let mut labels = vec![0u32; img.width() * img.height()];
    let mut next_label = 1u32;
    let mut notes = Vec::new();
    let mut quarter_scores = Vec::with_capacity(4);
    let mut any_scored = false;

    for (index, quarter) in quarters.iter().enumerate() {
        let outcome = run_pipeline(&quarter.image, cfg, baseline, nucleoli_model)?;
        let (ox, oy, _, _) = quarter.region;
        for mask in &outcome.masks {
            for (x, y) in mask.true_pixels() {
                labels[(oy + y) * img.width() + (ox + x)] = next_label;
            }
            next_label += 1;
        }
        let nuclei = outcome
            .nuclei
            .into_iter()
            .map(|mut n| {
                n.centroid = (n.centroid.0 + ox as f64, n.centroid.1 + oy as f64);
                n.polygon = n
                    .polygon
                    .into_iter()
                    .map(|(x, y)| (x + ox, y + oy))
                    .collect();
                n
            })
            .collect();
        let seeds = outcome
            .seeds
            .iter()
            .map(|s| (s.center.0 + ox as f64, s.center.1 + oy as f64))
            .collect();
        match outcome.quarter_score {
            Some(q) => {
                any_scored = true;
                quarter_scores.push(q);
            }
            None => quarter_scores.push(Score::One),
        }
        reports.push(QuarterReport {
            index,
            region: quarter.region,
            seeds,
            nuclei,
            criteria: outcome.criteria,
            quarter_score: outcome.quarter_score,
            notes: outcome.notes,
        });
    }

    let slide = if any_scored {
        Some(slide_score(&quarter_scores).map_err(|e| PipelineError::Stage {
            stage: "scoring",
            message: e.to_string(),
        })?)
    } else {
        notes.push("slide score unavailable: no quarter produced nuclei".into());
        None
    };

    Ok(SlideAnalysis {
        report: SlideReport {
            schema: REPORT_SCHEMA.into(),
            image: image_id.into(),
            config_hash: cfg.hash(),
            baseline: *baseline,
            quarters: reports,
            slide_score: slide,
            detection: None,
            notes,
        },
        label_width: img.width(),
        label_height: img.height(),
        labels,
    })
}

/// Greedy nearest-first one-to-one matching of predicted to ground-truth
/// centers within `match_radius`; tn is 0 by construction (detection has
/// no countable negatives).
pub fn evaluate_centers(
    predictions: &[(f64, f64)],
    truth: &[(f64, f64)],
    match_radius: f64,
) -> EvalCounts {
    let mut pairs = Vec::new();
    for (pi, p) in predictions.iter().enumerate() {
        for (ti, t) in truth.iter().enumerate() {
            let d = ((p.0 - t.0).powi(2) + (p.1 - t.1).powi(2)).sqrt();
            if d <= match_radius {
                pairs.push((d, pi, ti));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pred_used = vec![false; predictions.len()];
    let mut truth_used = vec![false; truth.len()];
    let mut tp = 0u64;
    for (_, pi, ti) in pairs {
        if !pred_used[pi] && !truth_used[ti] {
            pred_used[pi] = true;
            truth_used[ti] = true;
            tp += 1;
        }
    }
    EvalCounts {
        true_positives: tp,
        false_positives: predictions.len() as u64 - tp,
        true_negatives: 0,
        false_negatives: truth.len() as u64 - tp,
    }
}

/// Builds the detection-metrics block from match counts.
pub fn detection_metrics(counts: EvalCounts) -> DetectionMetrics {
    match precision_recall_f(&counts) {
        Ok(prf) => DetectionMetrics {
            counts,
            precision: prf.precision,
            recall: prf.recall,
            f_measure: prf.f_measure,
            f_defined: prf.f_defined,
            recall_definition: RECALL_DEFINITION.into(),
        },
        Err(_) => DetectionMetrics {
            counts,
            precision: 0.0,
            recall: 0.0,
            f_measure: 0.0,
            f_defined: false,
            recall_definition: RECALL_DEFINITION.into(),
        },
    }
}

/// Segments annotated healthy nuclei with the same pipeline and returns
/// their features; feed the (possibly pooled) result to
/// [`baseline_from_features`].
pub fn measure_baseline_features(
    healthy_centers: &[(f64, f64)],
    img: &RgbImage,
    cfg: &PipelineConfig,
    nucleoli_model: Option<&LinearSvmModel>,
) -> Result<Vec<NucleusFeatures>, PipelineError> {
    if healthy_centers.is_empty() {
        return Err(PipelineError::Stage {
            stage: "baseline",
            message: ScoringError::EmptyAnnotation.to_string(),
        });
    }
    let pre = preprocess(img, &cfg.preprocess_config())?;
    let seeds: Vec<NucleusSeed> = healthy_centers
        .iter()
        .map(|&(x, y)| NucleusSeed {
            center: (x, y),
            source_blob_area: 1,
        })
        .collect();
    let initial = build_initial_contour(&seeds, &pre, &cfg.centers);
    let segmented = segment_nuclei(&initial, &pre.diffused, &cfg.drlse, &cfg.segment);
    let mut features = Vec::new();
    for mask in &segmented.nuclei {
        let mask = largest_component(mask);
        let area = mask.count_true();
        if area == 0 {
            continue;
        }
        let (Ok(mean_intensity), Ok(circularity)) = (
            region_mean_intensity(&pre.diffused, &mask),
            region_circularity(&mask),
        ) else {
            continue;
        };
        let nucleoli_count = nucleoli_model
            .and_then(|m| detect_nucleoli(img, &mask, m, &cfg.nucleoli).ok())
            .unwrap_or(0);
        features.push(NucleusFeatures {
            area,
            mean_intensity,
            circularity,
            nucleoli_count,
        });
    }
    Ok(features)
}

/// Measures the normal baseline by segmenting annotated healthy nuclei
/// with the same pipeline and taking feature medians.
pub fn measure_baseline(
    healthy_centers: &[(f64, f64)],
    img: &RgbImage,
    cfg: &PipelineConfig,
    nucleoli_model: Option<&LinearSvmModel>,
) -> Result<NormalBaseline, PipelineError> {
    let features = measure_baseline_features(healthy_centers, img, cfg, nucleoli_model)?;
    baseline_from_features(&features).map_err(|e| PipelineError::Stage {
        stage: "baseline",
        message: format!("no annotated healthy nucleus could be segmented ({e})"),
    })
}
