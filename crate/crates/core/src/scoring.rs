//! Criterion scores, quarter/slide aggregation, and evaluation metrics.
//!
//! Each criterion maps the fraction of abnormal nuclei onto a 1-3 score
//! (bands at 30% and 60%, boundaries inclusive in the lower score). The
//! quarter score is the maximum of the four criterion scores; the slide
//! score escalates to the worst quarter.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::NucleusFeatures;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoringError {
    #[error("fraction {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("no nuclei to score")]
    EmptyPopulation,
    #[error("slide score needs exactly 4 quarters, got {0}")]
    WrongQuarterCount(usize),
    #[error("all evaluation counts are zero")]
    EmptyCounts,
    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),
    #[error("prediction and truth lengths differ: {pred} vs {truth}")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("no healthy-nucleus annotations")]
    EmptyAnnotation,
}

/// Criterion or slide score on the three-level scale.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(into = "u8", try_from = "u8")]
pub enum Score {
    One = 1,
    Two = 2,
    Three = 3,
}

impl Score {
    pub const ALL: [Score; 3] = [Score::One, Score::Two, Score::Three];

    pub fn value(self) -> u8 {
        self as u8
    }
}

impl From<Score> for u8 {
    fn from(s: Score) -> u8 {
        s as u8
    }
}

impl TryFrom<u8> for Score {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Score::One),
            2 => Ok(Score::Two),
            3 => Ok(Score::Three),
            other => Err(format!("score must be 1, 2, or 3, got {other}")),
        }
    }
}

/// Reference features measured from pathologist-confirmed healthy nuclei.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalBaseline {
    pub normal_area: f64,
    pub normal_mean_intensity: f64,
    pub normal_circularity: f64,
    /// Typically 0: healthy chromatin conceals nucleoli.
    pub normal_nucleoli: f64,
}

impl Default for NormalBaseline {
    fn default() -> Self {
        // A healthy epithelial nucleus at 20X: radius ~6 px, mid-gray in
        // the hematoxylin channel, near-circular contour.
        Self {
            normal_area: 113.0,
            normal_mean_intensity: 150.0,
            normal_circularity: 13.0,
            normal_nucleoli: 0.0,
        }
    }
}

/// Margins that keep measurement noise from flipping comparisons against
/// the baseline.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScoringConfig {
    /// A nucleus counts as chromatin-dense when its mean intensity is at
    /// least this many units below the baseline (darker = denser).
    pub chromatin_margin: f64,
    /// A contour counts as irregular when circularity exceeds baseline
    /// times (1 + this ratio).
    pub contour_margin_ratio: f64,
    /// Coefficient of variation of areas above which sizes count as
    /// irregular (escalates anisonucleosis to 3).
    pub anisonucleosis_cv3: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            chromatin_margin: 10.0,
            contour_margin_ratio: 0.15,
            anisonucleosis_cv3: 0.5,
        }
    }
}

/// Per-criterion scores of one quarter image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriterionScores {
    pub anisonucleosis: Score,
    pub chromatin: Score,
    pub contour: Score,
    pub nucleoli: Score,
}

/// Which criteria one nucleus counts toward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NucleusFlags {
    pub chromatin_dense: bool,
    pub contour_irregular: bool,
    pub nucleoli_revealed: bool,
    pub area_over_2x: bool,
    pub area_over_3x: bool,
}

/// Flags one nucleus against the baseline.
pub fn flag_nucleus(
    f: &NucleusFeatures,
    base: &NormalBaseline,
    cfg: &ScoringConfig,
) -> NucleusFlags {
    NucleusFlags {
        chromatin_dense: f.mean_intensity < base.normal_mean_intensity - cfg.chromatin_margin,
        contour_irregular: f.circularity
            > base.normal_circularity * (1.0 + cfg.contour_margin_ratio),
        nucleoli_revealed: f.nucleoli_count >= 1,
        area_over_2x: f.area as f64 > 2.0 * base.normal_area,
        area_over_3x: f.area as f64 > 3.0 * base.normal_area,
    }
}

/// 1 for fractions up to 30%, 2 up to 60%, 3 above (boundaries inclusive
/// in the lower score).
pub fn score_fraction(frac: f64) -> Result<Score, ScoringError> {
    if !(0.0..=1.0).contains(&frac) {
        return Err(ScoringError::OutOfRange(frac));
    }
    Ok(if frac <= 0.30 {
        Score::One
    } else if frac <= 0.60 {
        Score::Two
    } else {
        Score::Three
    })
}

fn score_flag_fraction(
    nuclei: &[NucleusFeatures],
    base: &NormalBaseline,
    cfg: &ScoringConfig,
    pick: impl Fn(&NucleusFlags) -> bool,
) -> Result<Score, ScoringError> {
    if nuclei.is_empty() {
        return Err(ScoringError::EmptyPopulation);
    }
    let hits = nuclei
        .iter()
        .filter(|f| pick(&flag_nucleus(f, base, cfg)))
        .count();
    score_fraction(hits as f64 / nuclei.len() as f64)
}

/// Fraction of nuclei darker than baseline by the chromatin margin.
pub fn score_chromatin(
    nuclei: &[NucleusFeatures],
    base: &NormalBaseline,
    cfg: &ScoringConfig,
) -> Result<Score, ScoringError> {
    score_flag_fraction(nuclei, base, cfg, |f| f.chromatin_dense)
}

/// Fraction of nuclei with contours more irregular than baseline.
pub fn score_contour(
    nuclei: &[NucleusFeatures],
    base: &NormalBaseline,
    cfg: &ScoringConfig,
) -> Result<Score, ScoringError> {
    score_flag_fraction(nuclei, base, cfg, |f| f.contour_irregular)
}

/// Fraction of nuclei with at least one revealed nucleolus.
pub fn score_nucleoli(
    nuclei: &[NucleusFeatures],
    base: &NormalBaseline,
    cfg: &ScoringConfig,
) -> Result<Score, ScoringError> {
    score_flag_fraction(nuclei, base, cfg, |f| f.nucleoli_revealed)
}

/// Size-variation criterion. Escalation wins when conditions overlap:
/// 3 when area variation exceeds the configured coefficient or any area
/// tops 3x baseline; otherwise 1 when every contour is regular and no
/// area tops 2x baseline; 2 for everything in between.
pub fn score_anisonucleosis(
    nuclei: &[NucleusFeatures],
    base: &NormalBaseline,
    cfg: &ScoringConfig,
) -> Result<Score, ScoringError> {
    if nuclei.is_empty() {
        return Err(ScoringError::EmptyPopulation);
    }
    let areas: Vec<f64> = nuclei.iter().map(|f| f.area as f64).collect();
    let mean = areas.iter().sum::<f64>() / areas.len() as f64;
    let var = areas.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / areas.len() as f64;
    let cv = if mean > 0.0 { var.sqrt() / mean } else { 0.0 };

    let flags: Vec<NucleusFlags> = nuclei
        .iter()
        .map(|f| flag_nucleus(f, base, cfg))
        .collect();
    if cv > cfg.anisonucleosis_cv3 || flags.iter().any(|f| f.area_over_3x) {
        return Ok(Score::Three);
    }
    let all_regular = flags.iter().all(|f| !f.contour_irregular);
    let none_over_2x = flags.iter().all(|f| !f.area_over_2x);
    if all_regular && none_over_2x {
        Ok(Score::One)
    } else {
        Ok(Score::Two)
    }
}

/// Scores all four criteria at once.
pub fn score_criteria(
    nuclei: &[NucleusFeatures],
    base: &NormalBaseline,
    cfg: &ScoringConfig,
) -> Result<CriterionScores, ScoringError> {
    Ok(CriterionScores {
        anisonucleosis: score_anisonucleosis(nuclei, base, cfg)?,
        chromatin: score_chromatin(nuclei, base, cfg)?,
        contour: score_contour(nuclei, base, cfg)?,
        nucleoli: score_nucleoli(nuclei, base, cfg)?,
    })
}

/// General score of a quarter: the worst criterion.
pub fn quarter_score(cs: &CriterionScores) -> Score {
    cs.anisonucleosis
        .max(cs.chromatin)
        .max(cs.contour)
        .max(cs.nucleoli)
}

/// Slide score from exactly four quarter scores: 3 if any quarter is 3,
/// else 2 if any is 2, else 1.
pub fn slide_score(quarters: &[Score]) -> Result<Score, ScoringError> {
    if quarters.len() != 4 {
        return Err(ScoringError::WrongQuarterCount(quarters.len()));
    }
    Ok(*quarters.iter().max().expect("nonempty"))
}

/// Detection/classification tallies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub true_positives: u64,
    pub false_positives: u64,
    pub true_negatives: u64,
    pub false_negatives: u64,
}

impl EvalCounts {
    pub fn total(&self) -> u64 {
        self.true_positives + self.false_positives + self.true_negatives + self.false_negatives
    }
}

/// `(tp + tn) / (tp + tn + fp + fn)`.
pub fn accuracy(c: &EvalCounts) -> Result<f64, ScoringError> {
    if c.total() == 0 {
        return Err(ScoringError::EmptyCounts);
    }
    Ok((c.true_positives + c.true_negatives) as f64 / c.total() as f64)
}

/// Precision/recall/F-measure triple; `f_defined` is false when both
/// precision and recall are zero and the F-measure is reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecallF {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub f_defined: bool,
}

/// Standard precision `tp/(tp+fp)`, recall `tp/(tp+fn)`, and their
/// harmonic mean.
pub fn precision_recall_f(c: &EvalCounts) -> Result<PrecisionRecallF, ScoringError> {
    if c.true_positives + c.false_positives == 0 {
        return Err(ScoringError::UndefinedMetric("precision: tp + fp = 0"));
    }
    if c.true_positives + c.false_negatives == 0 {
        return Err(ScoringError::UndefinedMetric("recall: tp + fn = 0"));
    }
    let precision = c.true_positives as f64 / (c.true_positives + c.false_positives) as f64;
    let recall = c.true_positives as f64 / (c.true_positives + c.false_negatives) as f64;
    let (f_measure, f_defined) = if precision + recall > 0.0 {
        (2.0 * precision * recall / (precision + recall), true)
    } else {
        (0.0, false)
    };
    Ok(PrecisionRecallF {
        precision,
        recall,
        f_measure,
        f_defined,
    })
}

/// 3x3 confusion matrix over slide scores; `cells[i][j]` counts items of
/// true score i+1 predicted as j+1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix3 {
    pub cells: [[u64; 3]; 3],
}

impl ConfusionMatrix3 {
    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum()
    }

    pub fn diagonal(&self) -> u64 {
        (0..3).map(|i| self.cells[i][i]).sum()
    }

    /// Fraction of correctly scored items.
    pub fn overall_accuracy(&self) -> Result<f64, ScoringError> {
        accuracy(&EvalCounts {
            true_positives: self.diagonal(),
            false_positives: self.total() - self.diagonal(),
            true_negatives: 0,
            false_negatives: 0,
        })
    }

    /// One-vs-rest counts for a single score class.
    pub fn class_counts(&self, class: Score) -> EvalCounts {
        let k = (class.value() - 1) as usize;
        let tp = self.cells[k][k];
        let fn_: u64 = (0..3).filter(|&j| j != k).map(|j| self.cells[k][j]).sum();
        let fp: u64 = (0..3).filter(|&i| i != k).map(|i| self.cells[i][k]).sum();
        let tn = self.total() - tp - fn_ - fp;
        EvalCounts {
            true_positives: tp,
            false_positives: fp,
            true_negatives: tn,
            false_negatives: fn_,
        }
    }
}

/// Tallies predictions against ground truth.
pub fn confusion_matrix(pred: &[Score], truth: &[Score]) -> Result<ConfusionMatrix3, ScoringError> {
    if pred.len() != truth.len() {
        return Err(ScoringError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    let mut cells = [[0u64; 3]; 3];
    for (&p, &t) in pred.iter().zip(truth) {
        cells[(t.value() - 1) as usize][(p.value() - 1) as usize] += 1;
    }
    Ok(ConfusionMatrix3 { cells })
}

/// Median-aggregated baseline from segmented healthy-nucleus features.
/// The pipeline-level wrapper that segments annotated nuclei lives in the
/// pipeline module.
pub fn baseline_from_features(features: &[NucleusFeatures]) -> Result<NormalBaseline, ScoringError> {
    if features.is_empty() {
        return Err(ScoringError::EmptyAnnotation);
    }
    let median = |mut v: Vec<f64>| -> f64 {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / 2.0
        }
    };
    Ok(NormalBaseline {
        normal_area: median(features.iter().map(|f| f.area as f64).collect()),
        normal_mean_intensity: median(features.iter().map(|f| f.mean_intensity).collect()),
        normal_circularity: median(features.iter().map(|f| f.circularity).collect()),
        normal_nucleoli: median(features.iter().map(|f| f.nucleoli_count as f64).collect()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn nucleus(area: usize, intensity: f64, circ: f64, nucleoli: usize) -> NucleusFeatures {
        NucleusFeatures {
            area,
            mean_intensity: intensity,
            circularity: circ,
            nucleoli_count: nucleoli,
        }
    }

    fn baseline() -> NormalBaseline {
        NormalBaseline {
            normal_area: 100.0,
            normal_mean_intensity: 150.0,
            normal_circularity: 13.0,
            normal_nucleoli: 0.0,
        }
    }

    #[test]
    fn fraction_bands() {
        assert_eq!(score_fraction(0.25).unwrap(), Score::One);
        assert_eq!(score_fraction(0.45).unwrap(), Score::Two);
        assert_eq!(score_fraction(0.75).unwrap(), Score::Three);
        // Boundaries land in the lower score.
        assert_eq!(score_fraction(0.30).unwrap(), Score::One);
        assert_eq!(score_fraction(0.60).unwrap(), Score::Two);
        assert!(matches!(score_fraction(-0.01), Err(ScoringError::OutOfRange(_))));
        assert!(matches!(score_fraction(1.01), Err(ScoringError::OutOfRange(_))));
    }

    #[test]
    fn chromatin_scores() {
        let cfg = ScoringConfig::default();
        let base = baseline();
        let at_baseline = vec![nucleus(100, 150.0, 13.0, 0); 10];
        assert_eq!(score_chromatin(&at_baseline, &base, &cfg).unwrap(), Score::One);

        let darker = vec![nucleus(100, 100.0, 13.0, 0); 10];
        assert_eq!(score_chromatin(&darker, &base, &cfg).unwrap(), Score::Three);

        // 9 of 20 darker -> 0.45 -> 2.
        let mut mixed = vec![nucleus(100, 150.0, 13.0, 0); 11];
        mixed.extend(vec![nucleus(100, 120.0, 13.0, 0); 9]);
        assert_eq!(score_chromatin(&mixed, &base, &cfg).unwrap(), Score::Two);

        assert!(matches!(
            score_chromatin(&[], &base, &cfg),
            Err(ScoringError::EmptyPopulation)
        ));
    }

    #[test]
    fn contour_scores() {
        let cfg = ScoringConfig::default();
        let base = baseline();
        let circular = vec![nucleus(100, 150.0, 12.6, 0); 10];
        assert_eq!(score_contour(&circular, &base, &cfg).unwrap(), Score::One);

        let elongated = vec![nucleus(100, 150.0, 27.0, 0); 10];
        assert_eq!(score_contour(&elongated, &base, &cfg).unwrap(), Score::Three);

        // 13 of 20 irregular -> 0.65 -> 3.
        let mut mixed = vec![nucleus(100, 150.0, 12.6, 0); 7];
        mixed.extend(vec![nucleus(100, 150.0, 20.0, 0); 13]);
        assert_eq!(score_contour(&mixed, &base, &cfg).unwrap(), Score::Three);
    }

    #[test]
    fn nucleoli_scores() {
        let cfg = ScoringConfig::default();
        let base = baseline();
        let bare = vec![nucleus(100, 150.0, 13.0, 0); 10];
        assert_eq!(score_nucleoli(&bare, &base, &cfg).unwrap(), Score::One);

        let revealed = vec![nucleus(100, 150.0, 13.0, 2); 10];
        assert_eq!(score_nucleoli(&revealed, &base, &cfg).unwrap(), Score::Three);

        // 7 of 20 -> 0.35 -> 2.
        let mut mixed = vec![nucleus(100, 150.0, 13.0, 0); 13];
        mixed.extend(vec![nucleus(100, 150.0, 13.0, 1); 7]);
        assert_eq!(score_nucleoli(&mixed, &base, &cfg).unwrap(), Score::Two);
    }

    #[test]
    fn anisonucleosis_scores() {
        let cfg = ScoringConfig::default();
        let base = baseline();
        let uniform = vec![nucleus(100, 150.0, 12.6, 0); 10];
        assert_eq!(score_anisonucleosis(&uniform, &base, &cfg).unwrap(), Score::One);

        // One nucleus at 3.5x baseline escalates to 3.
        let mut with_giant = vec![nucleus(100, 150.0, 12.6, 0); 9];
        with_giant.push(nucleus(350, 150.0, 12.6, 0));
        assert_eq!(score_anisonucleosis(&with_giant, &base, &cfg).unwrap(), Score::Three);

        // Max area 2.5x, low variation, regular contours: fits neither
        // case 1 nor case 3.
        let moderate = vec![nucleus(250, 150.0, 12.6, 0); 10];
        assert_eq!(score_anisonucleosis(&moderate, &base, &cfg).unwrap(), Score::Two);

        // High coefficient of variation alone escalates.
        let mut varied = vec![nucleus(20, 150.0, 12.6, 0); 5];
        varied.extend(vec![nucleus(200, 150.0, 12.6, 0); 5]);
        assert_eq!(score_anisonucleosis(&varied, &base, &cfg).unwrap(), Score::Three);
    }

    #[test]
    fn quarter_score_is_max() {
        let cs = |a, c, k, n| CriterionScores {
            anisonucleosis: a,
            chromatin: c,
            contour: k,
            nucleoli: n,
        };
        use Score::*;
        assert_eq!(quarter_score(&cs(One, One, One, One)), One);
        assert_eq!(quarter_score(&cs(One, Two, One, One)), Two);
        assert_eq!(quarter_score(&cs(Two, Three, One, Two)), Three);
    }

    #[test]
    fn slide_score_rule() {
        use Score::*;
        assert_eq!(slide_score(&[One, One, One, One]).unwrap(), One);
        assert_eq!(slide_score(&[One, Two, One, One]).unwrap(), Two);
        assert_eq!(slide_score(&[Two, Three, One, Two]).unwrap(), Three);
        assert!(matches!(
            slide_score(&[One, One, One]),
            Err(ScoringError::WrongQuarterCount(3))
        ));
    }

    #[test]
    fn slide_score_equals_max_over_all_81_combinations() {
        for a in Score::ALL {
            for b in Score::ALL {
                for c in Score::ALL {
                    for d in Score::ALL {
                        let q = [a, b, c, d];
                        let want = q.iter().copied().max().unwrap();
                        assert_eq!(slide_score(&q).unwrap(), want, "{q:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn accuracy_examples() {
        let c = |tp, tn, fp, fn_| EvalCounts {
            true_positives: tp,
            true_negatives: tn,
            false_positives: fp,
            false_negatives: fn_,
        };
        assert_eq!(accuracy(&c(1, 1, 0, 0)).unwrap(), 1.0);
        assert_eq!(accuracy(&c(0, 0, 1, 1)).unwrap(), 0.0);
        let fixture = accuracy(&c(31, 0, 3, 0)).unwrap();
        assert!((fixture - 31.0 / 34.0).abs() < 1e-12);
        assert!((fixture - 0.9118).abs() < 1e-4);
        assert!(matches!(accuracy(&c(0, 0, 0, 0)), Err(ScoringError::EmptyCounts)));
    }

    #[test]
    fn precision_recall_f_examples() {
        let c = |tp, fp, fn_| EvalCounts {
            true_positives: tp,
            false_positives: fp,
            true_negatives: 0,
            false_negatives: fn_,
        };
        let perfect = precision_recall_f(&c(10, 0, 0)).unwrap();
        assert_eq!((perfect.precision, perfect.recall, perfect.f_measure), (1.0, 1.0, 1.0));

        let zero = precision_recall_f(&c(0, 5, 5)).unwrap();
        assert_eq!((zero.precision, zero.recall, zero.f_measure), (0.0, 0.0, 0.0));
        assert!(!zero.f_defined);

        let mixed = precision_recall_f(&c(8, 2, 4)).unwrap();
        assert!((mixed.precision - 0.8).abs() < 1e-4);
        assert!((mixed.recall - 0.6667).abs() < 1e-4);
        assert!((mixed.f_measure - 0.7273).abs() < 1e-4);

        assert!(matches!(
            precision_recall_f(&c(0, 0, 5)),
            Err(ScoringError::UndefinedMetric(_))
        ));
    }

    #[test]
    fn confusion_matrix_diagonal_and_empty() {
        use Score::*;
        let pred = [One, Two, Three, Two];
        let m = confusion_matrix(&pred, &pred).unwrap();
        assert_eq!(m.cells, [[1, 0, 0], [0, 2, 0], [0, 0, 1]]);
        let empty = confusion_matrix(&[], &[]).unwrap();
        assert_eq!(empty.total(), 0);
        assert!(matches!(
            confusion_matrix(&pred, &pred[..3]),
            Err(ScoringError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn score_fixture_reproduces_expected_matrix() {
        // 34 slides: 4 of score 1 all correct; 18 of 20 score-2 correct
        // with 2 read as 3; 9 of 10 score-3 correct with 1 read as 2.
        use Score::*;
        let mut truth = Vec::new();
        let mut pred = Vec::new();
        truth.extend([One; 4]);
        pred.extend([One; 4]);
        truth.extend([Two; 20]);
        pred.extend([Two; 18]);
        pred.extend([Three; 2]);
        truth.extend([Three; 10]);
        pred.extend([Three; 9]);
        pred.extend([Two; 1]);
        let m = confusion_matrix(&pred, &truth).unwrap();
        assert_eq!(m.cells, [[4, 0, 0], [0, 18, 2], [0, 1, 9]]);
        assert_eq!(m.total(), 34);
        let acc = m.overall_accuracy().unwrap();
        assert!((acc - 31.0 / 34.0).abs() < 1e-12);
        // Per-class one-vs-rest accuracies.
        assert_eq!(accuracy(&m.class_counts(One)).unwrap(), 1.0);
        assert!((accuracy(&m.class_counts(Two)).unwrap() - 31.0 / 34.0).abs() < 1e-12);
        assert!((accuracy(&m.class_counts(Three)).unwrap() - 31.0 / 34.0).abs() < 1e-12);
    }

    #[test]
    fn baseline_median_aggregation() {
        let single = [nucleus(120, 140.0, 13.5, 1)];
        let b = baseline_from_features(&single).unwrap();
        assert_eq!(b.normal_area, 120.0);
        assert_eq!(b.normal_mean_intensity, 140.0);
        assert_eq!(b.normal_circularity, 13.5);
        assert_eq!(b.normal_nucleoli, 1.0);

        // Median is robust to the 400-area outlier.
        let three = [
            nucleus(100, 150.0, 13.0, 0),
            nucleus(120, 152.0, 12.8, 0),
            nucleus(400, 149.0, 13.2, 0),
        ];
        assert_eq!(baseline_from_features(&three).unwrap().normal_area, 120.0);

        assert!(matches!(
            baseline_from_features(&[]),
            Err(ScoringError::EmptyAnnotation)
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn score_fraction_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(score_fraction(lo).unwrap() <= score_fraction(hi).unwrap());
        }

        #[test]
        fn metrics_stay_in_unit_interval(tp in 0u64..50, fp in 0u64..50, tn in 0u64..50, fn_ in 0u64..50) {
            let c = EvalCounts {
                true_positives: tp,
                false_positives: fp,
                true_negatives: tn,
                false_negatives: fn_,
            };
            if c.total() > 0 {
                let a = accuracy(&c).unwrap();
                prop_assert!((0.0..=1.0).contains(&a));
            }
            if tp + fp > 0 && tp + fn_ > 0 {
                let prf = precision_recall_f(&c).unwrap();
                prop_assert!((0.0..=1.0).contains(&prf.precision));
                prop_assert!((0.0..=1.0).contains(&prf.recall));
                prop_assert!((0.0..=1.0).contains(&prf.f_measure));
            }
        }

        #[test]
        fn confusion_total_matches_input_length(len in 0usize..40, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let rand_scores = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<Score> {
                (0..len).map(|_| Score::ALL[rng.gen_range(0..3)]).collect()
            };
            let pred = rand_scores(&mut rng);
            let truth = rand_scores(&mut rng);
            let m = confusion_matrix(&pred, &truth).unwrap();
            prop_assert!(m.total() as usize == len);
            for (i, t) in Score::ALL.iter().enumerate() {
                let row: u64 = m.cells[i].iter().sum();
                prop_assert!(row as usize == truth.iter().filter(|&&s| s == *t).count());
            }
        }
    }
}
