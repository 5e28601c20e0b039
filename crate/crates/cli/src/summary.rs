//! Batch summary assembled after all images are processed.

use std::collections::BTreeMap;

use serde::Serialize;

use nucleograde_core::pipeline::{SlideReport, RECALL_DEFINITION};
use nucleograde_core::scoring::{
    accuracy, confusion_matrix, precision_recall_f, EvalCounts, Score,
};

/// Per-image result of a batch run.
pub enum ImageOutcome {
    Done {
        image: String,
        nuclei: usize,
        seeds: Vec<(f64, f64)>,
        report: Box<SlideReport>,
    },
    Failed {
        image: String,
        message: String,
    },
}

#[derive(Serialize)]
pub struct Summary {
    pub schema: String,
    pub images: Vec<ImageSummary>,
    pub detection: Option<DetectionSummary>,
    pub scores: Option<ScoreSummary>,
    pub recall_definition: String,
}

#[derive(Serialize)]
pub struct ImageSummary {
    pub image: String,
    pub status: String,
    pub nuclei: usize,
    pub slide_score: Option<Score>,
    pub gt_slide_score: Option<Score>,
    pub detection: Option<EvalCounts>,
    pub error: Option<String>,
}

/// Detection metrics pooled over every image that had ground truth.
#[derive(Serialize)]
pub struct DetectionSummary {
    pub counts: EvalCounts,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub f_defined: bool,
}

/// Slide-score agreement against ground truth.
#[derive(Serialize)]
pub struct ScoreSummary {
    pub confusion: [[u64; 3]; 3],
    pub total: u64,
    pub overall_accuracy: f64,
    pub per_class_accuracy: [f64; 3],
    /// Images that had a ground-truth score but no predicted one.
    pub unscored: Vec<String>,
}

pub fn build_summary(
    outcomes: &[ImageOutcome],
    gt_scores: Option<&BTreeMap<String, Score>>,
) -> Summary {
    let mut images = Vec::new();
    let mut pooled = EvalCounts::default();
    let mut have_detection = false;
    let mut pred_scores = Vec::new();
    let mut truth_scores = Vec::new();
    let mut unscored = Vec::new();

    let mut sorted: Vec<&ImageOutcome> = outcomes.iter().collect();
    sorted.sort_by_key(|o| match o {
        ImageOutcome::Done { image, .. } | ImageOutcome::Failed { image, .. } => image.clone(),
    });

    for outcome in sorted {
        match outcome {
            ImageOutcome::Done {
                image,
                nuclei,
                report,
                ..
            } => {
                let gt_score = gt_scores.and_then(|m| m.get(image)).copied();
                if let Some(d) = &report.detection {
                    have_detection = true;
                    pooled.true_positives += d.counts.true_positives;
                    pooled.false_positives += d.counts.false_positives;
                    pooled.false_negatives += d.counts.false_negatives;
                }
                if let Some(truth) = gt_score {
                    match report.slide_score {
                        Some(pred) => {
                            pred_scores.push(pred);
                            truth_scores.push(truth);
                        }
                        None => unscored.push(image.clone()),
                    }
                }
                images.push(ImageSummary {
                    image: image.clone(),
                    status: "ok".into(),
                    nuclei: *nuclei,
                    slide_score: report.slide_score,
                    gt_slide_score: gt_score,
                    detection: report.detection.as_ref().map(|d| d.counts),
                    error: None,
                });
            }
            ImageOutcome::Failed { image, message } => {
                images.push(ImageSummary {
                    image: image.clone(),
                    status: "failed".into(),
                    nuclei: 0,
                    slide_score: None,
                    gt_slide_score: gt_scores.and_then(|m| m.get(image)).copied(),
                    detection: None,
                    error: Some(message.clone()),
                });
            }
        }
    }

    let detection = if have_detection {
        Some(match precision_recall_f(&pooled) {
            Ok(prf) => DetectionSummary {
                counts: pooled,
                precision: prf.precision,
                recall: prf.recall,
                f_measure: prf.f_measure,
                f_defined: prf.f_defined,
            },
            Err(_) => DetectionSummary {
                counts: pooled,
                precision: 0.0,
                recall: 0.0,
                f_measure: 0.0,
                f_defined: false,
            },
        })
    } else {
        None
    };

    let scores = if pred_scores.is_empty() {
        None
    } else {
        let m = confusion_matrix(&pred_scores, &truth_scores).expect("lengths match");
        let per_class = Score::ALL.map(|s| accuracy(&m.class_counts(s)).unwrap_or(f64::NAN));
        Some(ScoreSummary {
            confusion: m.cells,
            total: m.total(),
            overall_accuracy: m.overall_accuracy().unwrap_or(f64::NAN),
            per_class_accuracy: per_class,
            unscored,
        })
    };

    Summary {
        schema: "nucleograde-summary/1".into(),
        images,
        detection,
        scores,
        recall_definition: RECALL_DEFINITION.into(),
    }
}
