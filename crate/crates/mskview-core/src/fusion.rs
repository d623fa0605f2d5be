//! Decision-level fusion: a logistic regression over the three per-view
//! probabilities of one task, fit by Newton's method on the mean log-loss
//! with an L2 penalty on the view weights (the intercept is unpenalized).

use crate::exam_store::Exam;
use crate::nn::sigmoid;
use crate::preprocess::StandardizerModel;
use crate::types::{PerPlane, Plane, Task};
use crate::view_net::{predict_view, ViewModel, ViewNetError};
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::Path;
use thiserror::Error;

pub const FUSION_FORMAT_VERSION: u32 = 1;

const MAX_NEWTON_ITERATIONS: usize = 1000;
const GRADIENT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("SingleClassSplit: {context}")]
    SingleClassSplit { context: String },
    #[error("NonConvergence: Newton solve did not converge within {iterations} iterations (is l2_lambda zero on separable data?)")]
    NonConvergence { iterations: usize },
    #[error("TaskMismatch: fusion model is for {expected}, got {got}")]
    TaskMismatch { expected: Task, got: Task },
    #[error("LengthMismatch: {features} feature rows vs {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("InvalidInput: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    ViewNet(#[from] ViewNetError),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed fusion model at {path}: {reason}")]
    MalformedModel { path: String, reason: String },
}

/// The three per-view probabilities of one exam for one task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewProbTriple {
    pub axial: f64,
    pub coronal: f64,
    pub sagittal: f64,
}

impl ViewProbTriple {
    /// Fixed feature order: axial, coronal, sagittal.
    pub fn as_array(&self) -> [f64; 3] {
        [self.axial, self.coronal, self.sagittal]
    }

    pub fn get(&self, plane: Plane) -> f64 {
        match plane {
            Plane::Axial => self.axial,
            Plane::Coronal => self.coronal,
            Plane::Sagittal => self.sagittal,
        }
    }
}

/// What the fusion inputs are. Only probability-space features exist today;
/// the field is persisted so a future logit-space variant stays
/// distinguishable on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSpace {
    Probability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub task: Task,
    /// View weights in axial, coronal, sagittal order.
    pub weights: [f64; 3],
    pub bias: f64,
    pub l2_lambda: f64,
    pub feature_space: FeatureSpace,
    pub n_train: usize,
}

impl FusionModel {
    /// Fused probability for one exam's view-probability triple.
    pub fn fuse(&self, probs: &ViewProbTriple) -> f64 {
        let x = probs.as_array();
        let logit = self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias;
        sigmoid(logit)
    }
}

/// Mean log-loss plus the L2 penalty, the quantity Newton minimizes.
#[cfg(test)]
fn objective(features: &[ViewProbTriple], labels: &[bool], params: &[f64; 4], lambda: f64) -> f64 {
    let n = features.len() as f64;
    let mut loss = 0.0;
    for (f, &y) in features.iter().zip(labels) {
        let x = f.as_array();
        let logit = params[0] * x[0] + params[1] * x[1] + params[2] * x[2] + params[3];
        // numerically stable log(1+e^z) - y*z
        loss += logit.max(0.0) - if y { logit } else { 0.0 } + (-logit.abs()).exp().ln_1p();
    }
    loss / n + lambda * (params[0].powi(2) + params[1].powi(2) + params[2].powi(2))
}

/// Solve `a * x = rhs` for a small symmetric system by Gaussian elimination
/// with partial pivoting. `None` when the system is (near-)singular.
fn solve4(mut a: [[f64; 4]; 4], mut rhs: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let pivot_row = (col..4)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot_row][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot_row);
        rhs.swap(col, pivot_row);
        for row in col + 1..4 {
            let factor = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= factor * a[col][k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let mut v = rhs[row];
        for k in row + 1..4 {
            v -= a[row][k] * x[k];
        }
        x[row] = v / a[row][row];
    }
    Some(x)
}

/// Fit the fusion logistic regression. The objective is the mean log-loss,
/// so a dataset repeated k times yields identical parameters.
pub fn fit_fusion(
    task: Task,
    features: &[ViewProbTriple],
    labels: &[bool],
    l2_lambda: f64,
) -> Result<FusionModel, FusionError> {
    if features.len() != labels.len() {
        return Err(FusionError::LengthMismatch {
            features: features.len(),
            labels: labels.len(),
        });
    }
    if features.is_empty() {
        return Err(FusionError::InvalidInput("no training rows".into()));
    }
    if !(l2_lambda >= 0.0 && l2_lambda.is_finite()) {
        return Err(FusionError::InvalidInput(format!(
            "l2_lambda must be non-negative and finite, got {l2_lambda}"
        )));
    }
    for f in features {
        for v in f.as_array() {
            if !(0.0..=1.0).contains(&v) {
                return Err(FusionError::InvalidInput(format!(
                    "view probability {v} outside [0, 1]"
                )));
            }
        }
    }
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err(FusionError::SingleClassSplit {
            context: format!(
                "fusion fit needs both classes for {task}: {pos}/{} positive",
                labels.len()
            ),
        });
    }

    let n = features.len() as f64;
    // params: axial, coronal, sagittal weights, then intercept
    let mut params = [0.0f64; 4];
    for _ in 0..MAX_NEWTON_ITERATIONS {
        let mut grad = [0.0f64; 4];
        let mut hess = [[0.0f64; 4]; 4];
        for (f, &y) in features.iter().zip(labels) {
            let x3 = f.as_array();
            let x = [x3[0], x3[1], x3[2], 1.0];
            let logit = (0..4).map(|j| params[j] * x[j]).sum::<f64>();
            let p = sigmoid(logit);
            let residual = p - if y { 1.0 } else { 0.0 };
            let s = p * (1.0 - p);
            for j in 0..4 {
                grad[j] += residual * x[j] / n;
                for k in 0..4 {
                    hess[j][k] += s * x[j] * x[k] / n;
                }
            }
        }
        for j in 0..3 {
            grad[j] += 2.0 * l2_lambda * params[j];
            hess[j][j] += 2.0 * l2_lambda;
        }
        if grad.iter().all(|g| g.abs() < GRADIENT_TOLERANCE) {
            return Ok(FusionModel {
                task,
                weights: [params[0], params[1], params[2]],
                bias: params[3],
                l2_lambda,
                feature_space: FeatureSpace::Probability,
                n_train: features.len(),
            });
        }
        let step = solve4(hess, grad).ok_or(FusionError::NonConvergence {
            iterations: MAX_NEWTON_ITERATIONS,
        })?;
        for j in 0..4 {
            params[j] -= step[j];
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(FusionError::NonConvergence {
                iterations: MAX_NEWTON_ITERATIONS,
            });
        }
    }
    Err(FusionError::NonConvergence {
        iterations: MAX_NEWTON_ITERATIONS,
    })
}

/// Run all three view models on one exam and fuse the probabilities.
pub fn predict_exam(
    view_models: &PerPlane<ViewModel>,
    standardizers: &PerPlane<StandardizerModel>,
    fusion: &FusionModel,
    exam: &Exam,
) -> Result<(ViewProbTriple, f64), FusionError> {
    for plane in Plane::ALL {
        let model = view_models.get(plane);
        if model.task != fusion.task {
            return Err(FusionError::TaskMismatch {
                expected: fusion.task,
                got: model.task,
            });
        }
    }
    let prob = |plane: Plane| -> Result<f64, FusionError> {
        Ok(predict_view(
            view_models.get(plane),
            exam.volume(plane),
            standardizers.get(plane),
        )?)
    };
    let triple = ViewProbTriple {
        axial: prob(Plane::Axial)?,
        coronal: prob(Plane::Coronal)?,
        sagittal: prob(Plane::Sagittal)?,
    };
    let fused = fusion.fuse(&triple);
    Ok((triple, fused))
}

#[derive(Debug, Serialize, Deserialize)]
struct PersistedFusion {
    format_version: u32,
    #[serde(flatten)]
    model: FusionModel,
}

pub fn save_fusion(model: &FusionModel, path: &Path) -> Result<(), FusionError> {
    let persisted = PersistedFusion {
        format_version: FUSION_FORMAT_VERSION,
        model: model.clone(),
    };
    crate::io_util::write_json(path, &persisted).map_err(|e| FusionError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_fusion(path: &Path) -> Result<FusionModel, FusionError> {
    let mut text = String::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| FusionError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
    let persisted: PersistedFusion =
        serde_json::from_str(&text).map_err(|e| FusionError::MalformedModel {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
    if persisted.format_version != FUSION_FORMAT_VERSION {
        return Err(FusionError::MalformedModel {
            path: path.display().to_string(),
            reason: format!("unsupported format_version {}", persisted.format_version),
        });
    }
    Ok(persisted.model)
}
