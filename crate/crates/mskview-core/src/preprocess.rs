//! Intensity standardization and per-slice model-input preparation.
//!
//! Standardization is two-stage percentile-landmark matching, fitted per
//! plane on the training cohort: the fit stage averages each training
//! volume's foreground percentile intensities into a standard scale, and the
//! apply stage piecewise-linearly maps a volume's own landmarks onto that
//! scale. Background voxels (intensity 0, the zero-padded region of the
//! native arrays) are left untouched.

use crate::exam_store::SliceStack;
use crate::types::Plane;
use ndarray::{Array3, ArrayView2};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const STANDARDIZER_FORMAT_VERSION: u32 = 1;

/// Model-input edge length; all backbones consume this via adaptive pooling.
pub const INPUT_SIZE: usize = 224;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("DegenerateHistogram: {0}")]
    DegenerateHistogram(String),
    #[error("PlaneMismatch: model is for {expected}, volume is {got}")]
    PlaneMismatch { expected: Plane, got: Plane },
    #[error("EmptySlice: slice has zero-sized dimensions")]
    EmptySlice,
    #[error("InvalidPercentiles: {0}")]
    InvalidPercentiles(String),
    #[error("EmptyCohort: no training volumes supplied")]
    EmptyCohort,
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed standardizer file at {path}: {reason}")]
    MalformedModel { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitProvenance {
    pub dataset_id: String,
    pub exam_count: usize,
}

/// Learned per-plane standard intensity scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizerModel {
    pub format_version: u32,
    pub plane: Plane,
    /// Probe percentiles, strictly increasing, in [0, 100].
    pub percentiles: Vec<f64>,
    /// Target intensities on the standard scale, strictly increasing.
    pub standard_landmarks: Vec<f64>,
    pub fit_provenance: FitProvenance,
}

impl StandardizerModel {
    pub fn standard_range(&self) -> (f64, f64) {
        (
            self.standard_landmarks[0],
            *self.standard_landmarks.last().unwrap(),
        )
    }

    pub fn save(&self, path: &Path) -> Result<(), PreprocessError> {
        crate::io_util::write_json(path, self).map_err(|e| PreprocessError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self, PreprocessError> {
        let text = std::fs::read_to_string(path).map_err(|e| PreprocessError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let model: StandardizerModel =
            serde_json::from_str(&text).map_err(|e| PreprocessError::MalformedModel {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
        if model.format_version != STANDARDIZER_FORMAT_VERSION {
            return Err(PreprocessError::MalformedModel {
                path: path.display().to_string(),
                reason: format!("unsupported format_version {}", model.format_version),
            });
        }
        Ok(model)
    }
}

/// One slice shaped for the encoder: 3 replicated channels at 224x224.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSlice {
    /// Shape (3, 224, 224), values in [-1, 1].
    pub data: Array3<f64>,
}

/// Deciles plus foreground min/max, the default landmark set.
pub fn default_percentiles() -> Vec<f64> {
    let mut p = vec![0.0];
    p.extend((1..=9).map(|k| k as f64 * 10.0));
    p.push(100.0);
    p
}

fn validate_percentiles(percentiles: &[f64]) -> Result<(), PreprocessError> {
    if percentiles.len() < 2 {
        return Err(PreprocessError::InvalidPercentiles(
            "need at least 2 percentiles".into(),
        ));
    }
    for pair in percentiles.windows(2) {
        if pair[1] <= pair[0] {
            return Err(PreprocessError::InvalidPercentiles(format!(
                "percentiles must be strictly increasing, got {} then {}",
                pair[0], pair[1]
            )));
        }
    }
    if percentiles[0] < 0.0 || *percentiles.last().unwrap() > 100.0 {
        return Err(PreprocessError::InvalidPercentiles(
            "percentiles must lie in [0, 100]".into(),
        ));
    }
    Ok(())
}

/// Linear-interpolation percentile of ascending-sorted `values`.
fn percentile_sorted(values: &[f64], p: f64) -> f64 {
    let n = values.len();
    if n == 1 {
        return values[0];
    }
    let pos = p / 100.0 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    values[lo] * (1.0 - frac) + values[hi] * frac
}

/// Landmarks of one volume's foreground intensity distribution, with exact
/// ties between consecutive landmarks nudged apart.
///
/// Repeated identical slices are counted once: a duplicated slice carries no
/// new information about the intensity distribution, and skipping it keeps
/// predictions exactly invariant under slice duplication.
fn volume_landmarks<T: Copy + Into<f64>>(
    stack: &SliceStack<T>,
    percentiles: &[f64],
) -> Result<Vec<f64>, PreprocessError> {
    let mut seen: std::collections::BTreeSet<Vec<u64>> = std::collections::BTreeSet::new();
    let mut fg: Vec<f64> = Vec::new();
    for slice in stack.data.outer_iter() {
        let values: Vec<f64> = slice.iter().map(|&v| v.into()).collect();
        let key: Vec<u64> = values.iter().map(|v| v.to_bits()).collect();
        if seen.insert(key) {
            fg.extend(values.into_iter().filter(|&v| v > 0.0));
        }
    }
    if fg.is_empty() {
        return Err(PreprocessError::DegenerateHistogram(
            "volume has no foreground voxels".into(),
        ));
    }
    fg.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut landmarks: Vec<f64> = percentiles
        .iter()
        .map(|&p| percentile_sorted(&fg, p))
        .collect();
    if (landmarks[landmarks.len() - 1] - landmarks[0]).abs() < 1e-9 {
        return Err(PreprocessError::DegenerateHistogram(format!(
            "constant foreground intensity {:.3}",
            landmarks[0]
        )));
    }
    // tie-perturbation: interior plateaus become strictly increasing
    for k in 1..landmarks.len() {
        if landmarks[k] <= landmarks[k - 1] {
            landmarks[k] = landmarks[k - 1] + 1e-6;
        }
    }
    Ok(landmarks)
}

/// Fit a per-plane standardizer: the standard scale is the mean over
/// training volumes of each volume's percentile landmarks.
pub fn fit_standardizer<T: Copy + Into<f64>>(
    training_volumes: &[SliceStack<T>],
    plane: Plane,
    percentiles: &[f64],
    dataset_id: &str,
) -> Result<StandardizerModel, PreprocessError> {
    validate_percentiles(percentiles)?;
    if training_volumes.is_empty() {
        return Err(PreprocessError::EmptyCohort);
    }
    let mut mean = vec![0.0; percentiles.len()];
    for stack in training_volumes {
        if stack.plane != plane {
            return Err(PreprocessError::PlaneMismatch {
                expected: plane,
                got: stack.plane,
            });
        }
        let landmarks = volume_landmarks(stack, percentiles)?;
        for (m, l) in mean.iter_mut().zip(&landmarks) {
            *m += l;
        }
    }
    let n = training_volumes.len() as f64;
    for m in &mut mean {
        *m /= n;
    }
    Ok(StandardizerModel {
        format_version: STANDARDIZER_FORMAT_VERSION,
        plane,
        percentiles: percentiles.to_vec(),
        standard_landmarks: mean,
        fit_provenance: FitProvenance {
            dataset_id: dataset_id.to_string(),
            exam_count: training_volumes.len(),
        },
    })
}

/// Monotone piecewise-linear map through the given (source, target) knots,
/// linearly extrapolated at the ends.
fn piecewise_linear(knots_x: &[f64], knots_y: &[f64], v: f64) -> f64 {
    let n = knots_x.len();
    let segment = if v <= knots_x[0] {
        0
    } else if v >= knots_x[n - 1] {
        n - 2
    } else {
        knots_x.partition_point(|&x| x <= v).saturating_sub(1).min(n - 2)
    };
    let (x0, x1) = (knots_x[segment], knots_x[segment + 1]);
    let (y0, y1) = (knots_y[segment], knots_y[segment + 1]);
    y0 + (v - x0) * (y1 - y0) / (x1 - x0)
}

/// Map a volume onto the model's standard scale. Foreground voxels go
/// through the landmark-matching map and are clipped to the standard range;
/// background (0) voxels stay 0.
pub fn apply_standardizer<T: Copy + Into<f64>>(
    model: &StandardizerModel,
    volume: &SliceStack<T>,
) -> Result<SliceStack<f64>, PreprocessError> {
    if volume.plane != model.plane {
        return Err(PreprocessError::PlaneMismatch {
            expected: model.plane,
            got: volume.plane,
        });
    }
    let own = volume_landmarks(volume, &model.percentiles)?;
    let (lo, hi) = model.standard_range();
    let data = volume.data.mapv(|raw| {
        let v: f64 = raw.into();
        if v <= 0.0 {
            0.0
        } else {
            piecewise_linear(&own, &model.standard_landmarks, v).clamp(lo, hi)
        }
    });
    Ok(SliceStack {
        plane: volume.plane,
        data,
    })
}

/// Resize a standardized slice to 224x224, rescale `[lo, hi]` to `[-1, 1]`,
/// and replicate it into 3 identical channels.
pub fn prepare_slice(
    slice: ArrayView2<'_, f64>,
    standard_range: (f64, f64),
) -> Result<PreparedSlice, PreprocessError> {
    let (h, w) = slice.dim();
    if h == 0 || w == 0 {
        return Err(PreprocessError::EmptySlice);
    }
    let (lo, hi) = standard_range;
    if hi <= lo {
        return Err(PreprocessError::InvalidPercentiles(format!(
            "standard range must satisfy lo < hi, got ({lo}, {hi})"
        )));
    }
    let resized = resize_bilinear(slice, INPUT_SIZE, INPUT_SIZE);
    let scale = 2.0 / (hi - lo);
    let mut data = Array3::<f64>::zeros((3, INPUT_SIZE, INPUT_SIZE));
    for y in 0..INPUT_SIZE {
        for x in 0..INPUT_SIZE {
            let v = (((resized[[y, x]] - lo) * scale) - 1.0).clamp(-1.0, 1.0);
            data[[0, y, x]] = v;
            data[[1, y, x]] = v;
            data[[2, y, x]] = v;
        }
    }
    Ok(PreparedSlice { data })
}

/// Bilinear resize with corner alignment, so same-size resize is identity.
fn resize_bilinear(src: ArrayView2<'_, f64>, out_h: usize, out_w: usize) -> ndarray::Array2<f64> {
    let (in_h, in_w) = src.dim();
    let scale_y = if out_h > 1 {
        (in_h - 1) as f64 / (out_h - 1) as f64
    } else {
        0.0
    };
    let scale_x = if out_w > 1 {
        (in_w - 1) as f64 / (out_w - 1) as f64
    } else {
        0.0
    };
    ndarray::Array2::from_shape_fn((out_h, out_w), |(y, x)| {
        let sy = y as f64 * scale_y;
        let sx = x as f64 * scale_x;
        let y0 = sy.floor() as usize;
        let x0 = sx.floor() as usize;
        let y1 = (y0 + 1).min(in_h - 1);
        let x1 = (x0 + 1).min(in_w - 1);
        let fy = sy - y0 as f64;
        let fx = sx - x0 as f64;
        src[[y0, x0]] * (1.0 - fy) * (1.0 - fx)
            + src[[y0, x1]] * (1.0 - fy) * fx
            + src[[y1, x0]] * fy * (1.0 - fx)
            + src[[y1, x1]] * fy * fx
    })
}
