//! Fine-tuning loop for one (plane, task) view model: weighted BCE on
//! exam-level probabilities, Adam with decoupled weight decay, per-exam
//! augmentation, and early stopping on a validation monitor.

use crate::augment::{apply_augmentation, sample_augmentation, AugmentConfig};
use crate::exam_store::{Exam, LabelVector, SliceStack};
use crate::metrics::{roc_auc, ScoredSet};
use crate::nn::{sigmoid, Cache, GradStore};
use crate::preprocess::{apply_standardizer, PreparedSlice, StandardizerModel};
use crate::types::{Plane, Task};
use crate::view_net::{aggregate_with, prepare_stack, Aggregation, ViewModel, ViewNetError};
use ndarray::{Array1, Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("EmptySplit: {0} split has no exams")]
    EmptySplit(&'static str),
    #[error("SingleClassSplit: {context}")]
    SingleClassSplit { context: String },
    #[error("NonFiniteLoss: loss became non-finite on exam {exam_id}")]
    NonFiniteLoss { exam_id: String },
    #[error("PlaneMismatch: expected {expected}, exam {exam_id} volume is {got}")]
    PlaneMismatch {
        expected: Plane,
        got: Plane,
        exam_id: String,
    },
    #[error("MissingLabel: no label row for exam {exam_id}")]
    MissingLabel { exam_id: String },
    #[error(transparent)]
    ViewNet(#[from] ViewNetError),
    #[error("preprocessing failed: {0}")]
    Preprocess(#[from] crate::preprocess::PreprocessError),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One plane volume with the binary label of the task being trained.
#[derive(Debug, Clone)]
pub struct LabeledVolume {
    pub exam_id: String,
    pub volume: SliceStack<u8>,
    pub label: bool,
}

/// Pull one plane out of a set of exams and pair it with one task's labels.
pub fn labeled_volumes(
    exams: &[Exam],
    labels: &BTreeMap<String, LabelVector>,
    plane: Plane,
    task: Task,
) -> Result<Vec<LabeledVolume>, TrainerError> {
    exams
        .iter()
        .map(|exam| {
            let label = labels
                .get(&exam.exam_id)
                .ok_or_else(|| TrainerError::MissingLabel {
                    exam_id: exam.exam_id.clone(),
                })?
                .get(task);
            Ok(LabeledVolume {
                exam_id: exam.exam_id.clone(),
                volume: exam.volume(plane).clone(),
                label,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PosWeightMode {
    /// Positive and negative terms weighted equally.
    None,
    /// Positive term weighted by `n_negative / n_positive` of the train split.
    InversePrevalence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Monitor {
    ValidAuc,
    ValidLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Consecutive non-improving epochs tolerated before stopping.
    pub early_stop_patience: usize,
    /// Exams per optimizer step (gradients are averaged within a batch).
    pub batch_size: usize,
    pub pos_weight_mode: PosWeightMode,
    pub augment: AugmentConfig,
    pub monitor: Monitor,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            weight_decay: 0.1,
            max_epochs: 50,
            early_stop_patience: 5,
            batch_size: 1,
            pos_weight_mode: PosWeightMode::None,
            augment: AugmentConfig::default(),
            monitor: Monitor::ValidAuc,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainerError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainerError::InvalidConfig(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(TrainerError::InvalidConfig(format!(
                "weight_decay must be non-negative and finite, got {}",
                self.weight_decay
            )));
        }
        if self.max_epochs == 0 {
            return Err(TrainerError::InvalidConfig("max_epochs must be >= 1".into()));
        }
        if self.early_stop_patience == 0 {
            return Err(TrainerError::InvalidConfig(
                "early_stop_patience must be >= 1".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(TrainerError::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// One row of the training history. Epochs are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub valid_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Epoch whose weights the returned model carries (1-based).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn write_csv(&self, path: &Path) -> Result<(), TrainerError> {
        let mut out = String::from("epoch,train_loss,valid_loss,valid_auc\n");
        for r in &self.records {
            let auc = r.valid_auc.map(|a| a.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.epoch, r.train_loss, r.valid_loss, auc
            ));
        }
        crate::io_util::atomic_write(path, out.as_bytes()).map_err(|e| TrainerError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }
}

/// Early-stopping bookkeeping; larger monitored values are better.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best_value: Option<f64>,
    best_epoch: usize,
    stall: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub should_stop: bool,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best_value: None,
            best_epoch: 0,
            stall: 0,
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_value(&self) -> Option<f64> {
        self.best_value
    }

    /// Record one epoch's monitored value. Only strict improvement resets
    /// the stall counter.
    pub fn observe(&mut self, epoch: usize, value: f64) -> StopDecision {
        match self.best_value {
            Some(best) if value <= best => {
                self.stall += 1;
                StopDecision {
                    improved: false,
                    should_stop: self.stall >= self.patience,
                }
            }
            _ => {
                self.best_value = Some(value);
                self.best_epoch = epoch;
                self.stall = 0;
                StopDecision {
                    improved: true,
                    should_stop: false,
                }
            }
        }
    }
}

/// Binary cross-entropy with the positive term scaled by `pos_weight`.
/// The probability is clamped away from 0 and 1 before the logs.
pub fn weighted_bce(prob: f64, label: bool, pos_weight: f64) -> f64 {
    let p = prob.clamp(1e-7, 1.0 - 1e-7);
    if label {
        -pos_weight * p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// `n_negative / n_positive` under inverse-prevalence mode, 1.0 otherwise.
pub fn compute_pos_weight(labels: &[bool], mode: PosWeightMode) -> Result<f64, TrainerError> {
    match mode {
        PosWeightMode::None => Ok(1.0),
        PosWeightMode::InversePrevalence => {
            let pos = labels.iter().filter(|&&l| l).count();
            let neg = labels.len() - pos;
            if pos == 0 || neg == 0 {
                return Err(TrainerError::SingleClassSplit {
                    context: format!(
                        "pos_weight needs both classes in train: {pos} positive, {neg} negative"
                    ),
                });
            }
            Ok(neg as f64 / pos as f64)
        }
    }
}

/// Gradient of one exam's head parameters.
#[derive(Debug, Clone)]
pub struct HeadGrad {
    pub weight: Array1<f64>,
    pub bias: f64,
}

impl HeadGrad {
    fn zeros(dim: usize) -> Self {
        HeadGrad {
            weight: Array1::zeros(dim),
            bias: 0.0,
        }
    }
}

/// Loss of one exam at the current weights (no gradients, no augmentation).
pub fn exam_loss(model: &ViewModel, prepared: &[PreparedSlice], label: bool, pos_weight: f64) -> f64 {
    let logit = crate::view_net::logit_from_prepared(model, prepared);
    weighted_bce(sigmoid(logit), label, pos_weight)
}

/// Loss plus gradients of the weighted BCE for one exam. Under max
/// aggregation, gradients flow only through the arg-max slice of each
/// feature dimension.
pub fn exam_gradients(
    model: &ViewModel,
    prepared: &[PreparedSlice],
    label: bool,
    pos_weight: f64,
) -> (f64, GradStore, HeadGrad) {
    assert!(!prepared.is_empty(), "need at least one slice");
    let forward: Vec<(Array1<f64>, Cache)> = prepared
        .par_iter()
        .map(|slice| {
            let (out, cache) = model.encoder.forward(&slice.data);
            let c = out.dim().0;
            (out.into_shape(c).expect("encoder output is (C,1,1)"), cache)
        })
        .collect();

    let n = forward.len();
    let d = model.feature_dim;
    let mut features = Array2::zeros((n, d));
    for (i, (row, _)) in forward.iter().enumerate() {
        features.row_mut(i).assign(row);
    }
    let agg = aggregate_with(features.view(), model.aggregation);
    let logit = model.head.logit(&agg);
    let prob = sigmoid(logit);
    let loss = weighted_bce(prob, label, pos_weight);

    let y = if label { 1.0 } else { 0.0 };
    let dlogit = pos_weight * y * (prob - 1.0) + (1.0 - y) * prob;
    let head_grad = HeadGrad {
        weight: &agg * dlogit,
        bias: dlogit,
    };

    // route the aggregated-feature gradient back to slices
    let mut slice_grads = Array2::<f64>::zeros((n, d));
    match model.aggregation {
        Aggregation::Max => {
            for j in 0..d {
                let s = (0..n)
                    .find(|&s| features[[s, j]] == agg[j])
                    .expect("max value came from some slice");
                slice_grads[[s, j]] = dlogit * model.head.weight[j];
            }
        }
        Aggregation::Mean => {
            let per = 1.0 / n as f64;
            for s in 0..n {
                for j in 0..d {
                    slice_grads[[s, j]] = dlogit * model.head.weight[j] * per;
                }
            }
        }
    }

    let active: Vec<(usize, Array3<f64>)> = (0..n)
        .filter(|&s| slice_grads.row(s).iter().any(|&g| g != 0.0))
        .map(|s| {
            let g = slice_grads
                .row(s)
                .to_owned()
                .into_shape((d, 1, 1))
                .expect("feature gradient reshapes to (D,1,1)");
            (s, g)
        })
        .collect();
    let contributions: Vec<GradStore> = active
        .par_iter()
        .map(|(s, g)| {
            let mut store = GradStore::zeros_like(&model.encoder);
            model.encoder.backward(&forward[*s].1, g, &mut store);
            store
        })
        .collect();
    let mut grads = GradStore::zeros_like(&model.encoder);
    for c in &contributions {
        grads.add(c);
    }
    (loss, grads, head_grad)
}

fn scale_grads(grads: &mut GradStore, head: &mut HeadGrad, factor: f64) {
    for g in &mut grads.convs {
        g.weight *= factor;
        g.bias *= factor;
    }
    head.weight *= factor;
    head.bias *= factor;
}

fn apply_step(model: &mut ViewModel, optimizer: &mut crate::nn::Adam, grads: &GradStore, head: &HeadGrad) {
    let mut params: Vec<&mut [f64]> = Vec::new();
    let mut grad_slices: Vec<&[f64]> = Vec::new();
    let convs = model.encoder.convs_mut();
    for (conv, g) in convs.into_iter().zip(&grads.convs) {
        let crate::nn::Conv2d { weight, bias, .. } = conv;
        params.push(weight.as_slice_mut().unwrap());
        grad_slices.push(g.weight.as_slice().unwrap());
        params.push(bias.as_slice_mut().unwrap());
        grad_slices.push(g.bias.as_slice().unwrap());
    }
    params.push(model.head.weight.as_slice_mut().unwrap());
    grad_slices.push(head.weight.as_slice().unwrap());
    params.push(std::slice::from_mut(&mut model.head.bias));
    grad_slices.push(std::slice::from_ref(&head.bias));
    optimizer.step(&mut params, &grad_slices);
}

fn check_planes(
    samples: &[LabeledVolume],
    expected: Plane,
) -> Result<(), TrainerError> {
    for s in samples {
        if s.volume.plane != expected {
            return Err(TrainerError::PlaneMismatch {
                expected,
                got: s.volume.plane,
                exam_id: s.exam_id.clone(),
            });
        }
    }
    Ok(())
}

/// Fine-tune `model` on `train`, monitoring `valid` after each epoch, and
/// return the weights of the best epoch together with the full history.
pub fn train_view_model(
    mut model: ViewModel,
    train: &[LabeledVolume],
    valid: &[LabeledVolume],
    standardizer: &StandardizerModel,
    config: &TrainConfig,
) -> Result<(ViewModel, TrainHistory), TrainerError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainerError::EmptySplit("train"));
    }
    if valid.is_empty() {
        return Err(TrainerError::EmptySplit("valid"));
    }
    check_planes(train, model.plane)?;
    check_planes(valid, model.plane)?;
    if standardizer.plane != model.plane {
        return Err(ViewNetError::PlaneMismatch {
            expected: model.plane,
            got: standardizer.plane,
        }
        .into());
    }
    if config.monitor == Monitor::ValidAuc {
        let pos = valid.iter().filter(|s| s.label).count();
        if pos == 0 || pos == valid.len() {
            return Err(TrainerError::SingleClassSplit {
                context: format!(
                    "monitoring valid AUC needs both classes: {pos}/{} positive",
                    valid.len()
                ),
            });
        }
    }
    let train_labels: Vec<bool> = train.iter().map(|s| s.label).collect();
    let pos_weight = compute_pos_weight(&train_labels, config.pos_weight_mode)?;

    // intensity standardization is augmentation-independent, so do it once
    let standardized_train: Vec<SliceStack<f64>> = train
        .iter()
        .map(|s| apply_standardizer(standardizer, &s.volume))
        .collect::<Result<_, _>>()?;
    let standardized_valid: Vec<SliceStack<f64>> = valid
        .iter()
        .map(|s| apply_standardizer(standardizer, &s.volume))
        .collect::<Result<_, _>>()?;
    let range = standardizer.standard_range();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = crate::nn::Adam::new(config.learning_rate, config.weight_decay);
    let mut stopper = EarlyStopper::new(config.early_stop_patience);
    let mut records = Vec::new();
    let mut stopped_early = false;
    let mut best_weights = (model.encoder.clone(), model.head.clone());

    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = GradStore::zeros_like(&model.encoder);
            let mut head_grad = HeadGrad::zeros(model.feature_dim);
            for &idx in batch {
                let sample = &train[idx];
                let params = sample_augmentation(&config.augment, &mut rng);
                let augmented = apply_augmentation(&standardized_train[idx], &params);
                let prepared = prepare_stack(&augmented, range)?;
                let (loss, g, hg) = exam_gradients(&model, &prepared, sample.label, pos_weight);
                if !loss.is_finite() {
                    return Err(TrainerError::NonFiniteLoss {
                        exam_id: sample.exam_id.clone(),
                    });
                }
                epoch_loss += loss;
                grads.add(&g);
                head_grad.weight += &hg.weight;
                head_grad.bias += hg.bias;
            }
            scale_grads(&mut grads, &mut head_grad, 1.0 / batch.len() as f64);
            apply_step(&mut model, &mut optimizer, &grads, &head_grad);
        }
        let train_loss = epoch_loss / train.len() as f64;

        let mut valid_loss = 0.0;
        let mut probs = Vec::with_capacity(valid.len());
        for (sample, standardized) in valid.iter().zip(&standardized_valid) {
            let prepared = prepare_stack(standardized, range)?;
            let logit = crate::view_net::logit_from_prepared(&model, &prepared);
            let prob = sigmoid(logit);
            let loss = weighted_bce(prob, sample.label, pos_weight);
            if !loss.is_finite() {
                return Err(TrainerError::NonFiniteLoss {
                    exam_id: sample.exam_id.clone(),
                });
            }
            valid_loss += loss;
            probs.push(prob);
        }
        valid_loss /= valid.len() as f64;
        let valid_auc = ScoredSet::new(probs, valid.iter().map(|s| s.label).collect())
            .ok()
            .and_then(|set| roc_auc(&set).ok());

        records.push(EpochRecord {
            epoch,
            train_loss,
            valid_loss,
            valid_auc,
        });

        let monitored = match config.monitor {
            Monitor::ValidAuc => valid_auc.expect("valid split was checked to have both classes"),
            Monitor::ValidLoss => -valid_loss,
        };
        let decision = stopper.observe(epoch, monitored);
        if decision.improved {
            best_weights = (model.encoder.clone(), model.head.clone());
        }
        if decision.should_stop {
            stopped_early = true;
            break;
        }
    }

    model.encoder = best_weights.0;
    model.head = best_weights.1;
    let best_epoch = stopper.best_epoch();
    let best_record = &records[best_epoch - 1];
    model.provenance.epochs_trained = records.len();
    model.provenance.best_metric = Some(match config.monitor {
        Monitor::ValidAuc => best_record.valid_auc.unwrap(),
        Monitor::ValidLoss => best_record.valid_loss,
    });

    Ok((
        model,
        TrainHistory {
            records,
            best_epoch,
            stopped_early,
        },
    ))
}
