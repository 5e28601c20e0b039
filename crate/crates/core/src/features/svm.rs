//! Linear soft-margin SVM trained in the primal by deterministic
//! full-batch subgradient descent.
//!
//! The objective is `0.5 |w|^2 + c_reg * sum_i hinge(1 - y_i (w.x_i + b))`.
//! Descent runs a fixed schedule (10,000 steps, step size `1/(c_reg * t)`),
//! evaluates the objective each step, and returns the best iterate, so
//! training is reproducible bit for bit for fixed inputs.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SvmError {
    #[error("training needs at least one sample of each class")]
    DegenerateLabels,
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("model io: {0}")]
    Io(#[from] std::io::Error),
    #[error("model parse: {0}")]
    Parse(String),
}

/// Hyperplane classifier `sign(w.x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvmModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub positive_label: i32,
    pub negative_label: i32,
}

/// Trained model plus the best-so-far objective recorded at fixed
/// checkpoints (non-increasing by construction of the best-iterate rule).
#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub model: LinearSvmModel,
    pub objective_checkpoints: Vec<f64>,
}

const ITERATIONS: usize = 10_000;
const CHECKPOINT_EVERY: usize = 1_000;

fn objective(samples: &[Vec<f64>], ys: &[f64], c_reg: f64, w: &[f64], b: f64) -> f64 {
    let reg: f64 = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    let hinge: f64 = samples
        .iter()
        .zip(ys)
        .map(|(x, &y)| {
            let margin = 1.0 - y * (dot(w, x) + b);
            margin.max(0.0)
        })
        .sum();
    reg + c_reg * hinge
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Trains on binary-labeled samples; `positive_label` picks which of the
/// two label values maps to the positive side of the hyperplane.
pub fn svm_train(
    samples: &[Vec<f64>],
    labels: &[i32],
    positive_label: i32,
    c_reg: f64,
) -> Result<TrainingOutcome, SvmError> {
    assert!(c_reg > 0.0, "c_reg must be positive");
    assert_eq!(samples.len(), labels.len(), "one label per sample");
    let dim = samples.first().map(|s| s.len()).unwrap_or(0);
    if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
        return Err(SvmError::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    let negative_label = match labels.iter().find(|&&l| l != positive_label) {
        Some(&l) => l,
        None => return Err(SvmError::DegenerateLabels),
    };
    if !labels.iter().any(|&l| l == positive_label)
        || labels.iter().any(|&l| l != positive_label && l != negative_label)
    {
        return Err(SvmError::DegenerateLabels);
    }
    let ys: Vec<f64> = labels
        .iter()
        .map(|&l| if l == positive_label { 1.0 } else { -1.0 })
        .collect();

    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut best_w = w.clone();
    let mut best_b = b;
    let mut best_obj = objective(samples, &ys, c_reg, &w, b);
    let mut checkpoints = Vec::with_capacity(ITERATIONS / CHECKPOINT_EVERY);

    let mut grad_w = vec![0.0; dim];
    for t in 1..=ITERATIONS {
        grad_w.copy_from_slice(&w);
        let mut grad_b = 0.0;
        for (x, &y) in samples.iter().zip(&ys) {
            if y * (dot(&w, x) + b) < 1.0 {
                for (g, &xi) in grad_w.iter_mut().zip(x) {
                    *g -= c_reg * y * xi;
                }
                grad_b -= c_reg * y;
            }
        }
        let step = 1.0 / (c_reg * t as f64);
        for (wi, g) in w.iter_mut().zip(&grad_w) {
            *wi -= step * g;
        }
        b -= step * grad_b;

        let obj = objective(samples, &ys, c_reg, &w, b);
        if obj < best_obj {
            best_obj = obj;
            best_w.copy_from_slice(&w);
            best_b = b;
        }
        if t % CHECKPOINT_EVERY == 0 {
            checkpoints.push(best_obj);
        }
    }

    Ok(TrainingOutcome {
        model: LinearSvmModel {
            weights: best_w,
            bias: best_b,
            positive_label,
            negative_label,
        },
        objective_checkpoints: checkpoints,
    })
}

/// Signed distance proxy `w.x + b`.
pub fn decision_value(model: &LinearSvmModel, x: &[f64]) -> Result<f64, SvmError> {
    if x.len() != model.weights.len() {
        return Err(SvmError::DimensionMismatch {
            expected: model.weights.len(),
            got: x.len(),
        });
    }
    Ok(dot(&model.weights, x) + model.bias)
}

/// Predicted label; the positive label wins ties (`w.x + b >= 0`).
pub fn svm_predict(model: &LinearSvmModel, x: &[f64]) -> Result<i32, SvmError> {
    Ok(if decision_value(model, x)? >= 0.0 {
        model.positive_label
    } else {
        model.negative_label
    })
}

const MODEL_MAGIC: &str = "NGSVM1";

/// Serializes a model to the versioned plain-text format:
/// magic, dimension, weights, bias, labels — one line each.
pub fn save_model(model: &LinearSvmModel) -> String {
    assert!(
        model.weights.iter().all(|w| w.is_finite()) && model.bias.is_finite(),
        "model must be finite"
    );
    let mut out = String::new();
    writeln!(out, "{MODEL_MAGIC}").unwrap();
    writeln!(out, "{}", model.weights.len()).unwrap();
    let joined: Vec<String> = model.weights.iter().map(|w| w.to_string()).collect();
    writeln!(out, "{}", joined.join(" ")).unwrap();
    writeln!(out, "{}", model.bias).unwrap();
    writeln!(out, "{} {}", model.positive_label, model.negative_label).unwrap();
    out
}

pub fn load_model(text: &str) -> Result<LinearSvmModel, SvmError> {
    let mut lines = text.lines();
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| SvmError::Parse(format!("missing {what} line")))
    };
    let magic = next("magic")?;
    if magic.trim() != MODEL_MAGIC {
        return Err(SvmError::Parse(format!("bad magic {magic:?}")));
    }
    let dim: usize = next("dimension")?
        .trim()
        .parse()
        .map_err(|e| SvmError::Parse(format!("dimension: {e}")))?;
    let weights: Vec<f64> = next("weights")?
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| SvmError::Parse(format!("weight {t:?}: {e}"))))
        .collect::<Result<_, _>>()?;
    if weights.len() != dim {
        return Err(SvmError::Parse(format!(
            "expected {dim} weights, found {}",
            weights.len()
        )));
    }
    let bias: f64 = next("bias")?
        .trim()
        .parse()
        .map_err(|e| SvmError::Parse(format!("bias: {e}")))?;
    let labels_line = next("labels")?;
    let mut labels = labels_line.split_whitespace();
    let positive_label: i32 = labels
        .next()
        .ok_or_else(|| SvmError::Parse("missing positive label".into()))?
        .parse()
        .map_err(|e| SvmError::Parse(format!("positive label: {e}")))?;
    let negative_label: i32 = labels
        .next()
        .ok_or_else(|| SvmError::Parse("missing negative label".into()))?
        .parse()
        .map_err(|e| SvmError::Parse(format!("negative label: {e}")))?;
    Ok(LinearSvmModel {
        weights,
        bias,
        positive_label,
        negative_label,
    })
}

pub fn save_model_to_path(model: &LinearSvmModel, path: &Path) -> Result<(), SvmError> {
    std::fs::write(path, save_model(model))?;
    Ok(())
}

pub fn load_model_from_path(path: &Path) -> Result<LinearSvmModel, SvmError> {
    load_model(&std::fs::read_to_string(path)?)
}
