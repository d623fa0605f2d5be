//! Per-(plane, task) classifier: a slice encoder from the backbone registry,
//! permutation-invariant feature aggregation over the slice stack, and a
//! single-logit task head.

use crate::exam_store::SliceStack;
use crate::nn::backbones::{build_encoder, Family};
use crate::nn::{sigmoid, Block, Head};
use crate::preprocess::{apply_standardizer, prepare_slice, PreparedSlice, StandardizerModel};
use crate::types::{Plane, Task};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const WEIGHTS_MAGIC: &[u8; 4] = b"MSKW";

/// Environment variable overriding the pretrained-weights cache directory.
pub const CACHE_ENV_VAR: &str = "MSKVIEW_CACHE";

#[derive(Debug, Error)]
pub enum ViewNetError {
    #[error("UnknownFamily: {0}")]
    UnknownFamily(String),
    #[error("WeightsUnavailable: no pretrained weights for {family} at {path} (set {CACHE_ENV_VAR} to the weight cache)")]
    WeightsUnavailable { family: Family, path: PathBuf },
    #[error("PlaneMismatch: model is for {expected}, input is {got}")]
    PlaneMismatch { expected: Plane, got: Plane },
    #[error("preprocessing failed: {0}")]
    Preprocess(#[from] crate::preprocess::PreprocessError),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint at {path}: {reason}")]
    MalformedCheckpoint { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Init {
    PretrainedImagenet,
    Random { seed: u64 },
}

/// Architecture choice plus initialization source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub family: Family,
    pub init: Init,
}

/// How per-slice features are reduced to one exam-level vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Max,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingProvenance {
    pub config_hash: Option<String>,
    pub epochs_trained: usize,
    pub best_metric: Option<f64>,
}

impl Default for TrainingProvenance {
    fn default() -> Self {
        TrainingProvenance {
            config_hash: None,
            epochs_trained: 0,
            best_metric: None,
        }
    }
}

/// One of the nine (plane, task) models.
#[derive(Debug, Clone)]
pub struct ViewModel {
    pub plane: Plane,
    pub task: Task,
    pub spec: BackboneSpec,
    pub aggregation: Aggregation,
    pub feature_dim: usize,
    pub encoder: Block,
    pub head: Head,
    pub provenance: TrainingProvenance,
}

fn pretrained_weights_path(family: Family) -> PathBuf {
    let cache = std::env::var_os(CACHE_ENV_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            let home = std::env::var_os("HOME").map(PathBuf::from).unwrap_or_default();
            home.join(".cache").join("mskview")
        });
    cache.join(format!("{family}.weights"))
}

/// Construct a model per spec. Pretrained init requires a local weight
/// artifact; nothing is fetched over the network.
pub fn build_view_model(
    spec: BackboneSpec,
    plane: Plane,
    task: Task,
) -> Result<ViewModel, ViewNetError> {
    let seed = match spec.init {
        Init::Random { seed } => seed,
        Init::PretrainedImagenet => 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut encoder, feature_dim) = build_encoder(spec.family, &mut rng);
    let head = Head::new(feature_dim, &mut rng);

    if spec.init == Init::PretrainedImagenet {
        if !spec.family.supports_pretrained() {
            return Err(ViewNetError::UnknownFamily(format!(
                "{} has no pretrained variant",
                spec.family
            )));
        }
        let path = pretrained_weights_path(spec.family);
        if !path.exists() {
            return Err(ViewNetError::WeightsUnavailable {
                family: spec.family,
                path,
            });
        }
        let bytes = std::fs::read(&path).map_err(|e| ViewNetError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        // encoder tensors only; the head is always task-specific
        load_tensors(&path, &bytes, &mut encoder, None)?;
    }

    Ok(ViewModel {
        plane,
        task,
        spec,
        aggregation: Aggregation::Max,
        feature_dim,
        encoder,
        head,
        provenance: TrainingProvenance::default(),
    })
}

/// Encode each prepared slice independently into a `S x feature_dim` matrix.
pub fn encode_slices(model: &ViewModel, prepared: &[PreparedSlice]) -> Array2<f64> {
    assert!(!prepared.is_empty(), "need at least one slice");
    let rows: Vec<Array1<f64>> = prepared
        .par_iter()
        .map(|slice| {
            let out = model.encoder.infer(&slice.data);
            let (c, _, _) = out.dim();
            out.into_shape(c).expect("encoder output is (C,1,1)")
        })
        .collect();
    let mut features = Array2::zeros((rows.len(), model.feature_dim));
    for (i, row) in rows.iter().enumerate() {
        features.row_mut(i).assign(row);
    }
    features
}

/// Element-wise max over slices (the default aggregation).
pub fn aggregate_features(features: ArrayView2<'_, f64>) -> Array1<f64> {
    aggregate_with(features, Aggregation::Max)
}

pub fn aggregate_with(features: ArrayView2<'_, f64>, mode: Aggregation) -> Array1<f64> {
    assert!(features.nrows() >= 1, "need at least one slice row");
    match mode {
        Aggregation::Max => features.fold_axis(Axis(0), f64::NEG_INFINITY, |acc, &v| acc.max(v)),
        Aggregation::Mean => features.mean_axis(Axis(0)).unwrap(),
    }
}

/// Logit for already-prepared slices; shared by inference and training.
pub fn logit_from_prepared(model: &ViewModel, prepared: &[PreparedSlice]) -> f64 {
    let features = encode_slices(model, prepared);
    let agg = aggregate_with(features.view(), model.aggregation);
    model.head.logit(&agg)
}

/// Standardize, prepare, encode, aggregate, and squash one plane volume into
/// a probability. No augmentation runs on this path.
pub fn predict_view(
    model: &ViewModel,
    volume: &SliceStack<u8>,
    standardizer: &StandardizerModel,
) -> Result<f64, ViewNetError> {
    if volume.plane != model.plane {
        return Err(ViewNetError::PlaneMismatch {
            expected: model.plane,
            got: volume.plane,
        });
    }
    if standardizer.plane != model.plane {
        return Err(ViewNetError::PlaneMismatch {
            expected: model.plane,
            got: standardizer.plane,
        });
    }
    let standardized = apply_standardizer(standardizer, volume)?;
    let prepared = prepare_stack(&standardized, standardizer.standard_range())?;
    let logit = logit_from_prepared(model, &prepared);
    assert!(
        logit.abs() < 100.0,
        "logit {logit} out of the bounded range; head weights have diverged"
    );
    Ok(sigmoid(logit))
}

/// Prepare every slice of a standardized stack.
pub fn prepare_stack(
    standardized: &SliceStack<f64>,
    standard_range: (f64, f64),
) -> Result<Vec<PreparedSlice>, ViewNetError> {
    (0..standardized.n_slices())
        .map(|s| {
            prepare_slice(standardized.data.index_axis(Axis(0), s), standard_range)
                .map_err(ViewNetError::from)
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    format_version: u32,
    family: Family,
    plane: Plane,
    task: Task,
    init: Init,
    aggregation: Aggregation,
    feature_dim: usize,
    config_hash: Option<String>,
    epochs_trained: usize,
    best_metric: Option<f64>,
}

fn push_tensor(out: &mut Vec<u8>, dims: &[usize], data: &[f64]) {
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn serialize_weights(encoder: &Block, head: Option<&Head>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&CHECKPOINT_FORMAT_VERSION.to_le_bytes());
    let mut n_tensors = 0u32;
    encoder.visit_convs(&mut |_| n_tensors += 2);
    if head.is_some() {
        n_tensors += 2;
    }
    out.extend_from_slice(&n_tensors.to_le_bytes());
    encoder.visit_convs(&mut |conv| {
        let d = conv.weight.dim();
        push_tensor(&mut out, &[d.0, d.1, d.2, d.3], conv.weight.as_slice().unwrap());
        push_tensor(&mut out, &[conv.bias.len()], conv.bias.as_slice().unwrap());
    });
    if let Some(head) = head {
        push_tensor(&mut out, &[head.weight.len()], head.weight.as_slice().unwrap());
        push_tensor(&mut out, &[1], &[head.bias]);
    }
    out
}

struct TensorReader<'a> {
    path: &'a Path,
    cursor: &'a [u8],
}

impl<'a> TensorReader<'a> {
    fn bad(&self, reason: &str) -> ViewNetError {
        ViewNetError::MalformedCheckpoint {
            path: self.path.display().to_string(),
            reason: reason.to_string(),
        }
    }

    fn next(&mut self, expect_dims: &[usize]) -> Result<Vec<f64>, ViewNetError> {
        let mut take = |n: usize| -> Result<&[u8], ViewNetError> {
            if self.cursor.len() < n {
                return Err(ViewNetError::MalformedCheckpoint {
                    path: self.path.display().to_string(),
                    reason: "truncated tensor data".to_string(),
                });
            }
            let (head, rest) = self.cursor.split_at(n);
            self.cursor = rest;
            Ok(head)
        };
        let ndim = take(1)?[0] as usize;
        if ndim != expect_dims.len() {
            return Err(self.bad(&format!(
                "tensor rank mismatch: file {ndim}, model {}",
                expect_dims.len()
            )));
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let b = take(4)?;
            dims.push(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize);
        }
        if dims != expect_dims {
            return Err(self.bad(&format!(
                "tensor shape mismatch: file {dims:?}, model {expect_dims:?}"
            )));
        }
        let len: usize = dims.iter().product();
        let bytes = take(len * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn load_tensors(
    path: &Path,
    bytes: &[u8],
    encoder: &mut Block,
    head: Option<&mut Head>,
) -> Result<(), ViewNetError> {
    let bad = |reason: &str| ViewNetError::MalformedCheckpoint {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    if bytes.len() < 12 || &bytes[..4] != WEIGHTS_MAGIC {
        return Err(bad("missing weights magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_FORMAT_VERSION {
        return Err(bad(&format!("unsupported weights version {version}")));
    }
    let mut reader = TensorReader {
        path,
        cursor: &bytes[12..],
    };
    let mut result = Ok(());
    encoder.visit_convs_mut(&mut |conv| {
        if result.is_err() {
            return;
        }
        let d = conv.weight.dim();
        match reader.next(&[d.0, d.1, d.2, d.3]) {
            Ok(data) => conv.weight.as_slice_mut().unwrap().copy_from_slice(&data),
            Err(e) => {
                result = Err(e);
                return;
            }
        }
        match reader.next(&[conv.bias.len()]) {
            Ok(data) => conv.bias.as_slice_mut().unwrap().copy_from_slice(&data),
            Err(e) => result = Err(e),
        }
    });
    result?;
    if let Some(head) = head {
        let data = reader.next(&[head.weight.len()])?;
        head.weight.as_slice_mut().unwrap().copy_from_slice(&data);
        head.bias = reader.next(&[1])?[0];
    }
    Ok(())
}

/// Persist a model as `<dir>/manifest.json` + `<dir>/weights.bin`.
pub fn save_checkpoint(model: &ViewModel, dir: &Path) -> Result<(), ViewNetError> {
    let io_err = |path: &Path, e: std::io::Error| ViewNetError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        family: model.spec.family,
        plane: model.plane,
        task: model.task,
        init: model.spec.init,
        aggregation: model.aggregation,
        feature_dim: model.feature_dim,
        config_hash: model.provenance.config_hash.clone(),
        epochs_trained: model.provenance.epochs_trained,
        best_metric: model.provenance.best_metric,
    };
    let manifest_path = dir.join("manifest.json");
    crate::io_util::write_json(&manifest_path, &manifest).map_err(|e| io_err(&manifest_path, e))?;
    let weights_path = dir.join("weights.bin");
    crate::io_util::atomic_write(&weights_path, &serialize_weights(&model.encoder, Some(&model.head)))
        .map_err(|e| io_err(&weights_path, e))
}

/// Rebuild a model from a checkpoint directory.
pub fn load_checkpoint(dir: &Path) -> Result<ViewModel, ViewNetError> {
    let manifest_path = dir.join("manifest.json");
    let mut text = String::new();
    std::fs::File::open(&manifest_path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| ViewNetError::Io {
            path: manifest_path.display().to_string(),
            source: e,
        })?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| ViewNetError::MalformedCheckpoint {
            path: manifest_path.display().to_string(),
            reason: e.to_string(),
        })?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(ViewNetError::MalformedCheckpoint {
            path: manifest_path.display().to_string(),
            reason: format!("unsupported format_version {}", manifest.format_version),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut encoder, feature_dim) = build_encoder(manifest.family, &mut rng);
    if feature_dim != manifest.feature_dim {
        return Err(ViewNetError::MalformedCheckpoint {
            path: manifest_path.display().to_string(),
            reason: format!(
                "feature_dim mismatch: manifest {}, family {}",
                manifest.feature_dim, feature_dim
            ),
        });
    }
    let mut head = Head::new(feature_dim, &mut rng);
    let weights_path = dir.join("weights.bin");
    let bytes = std::fs::read(&weights_path).map_err(|e| ViewNetError::Io {
        path: weights_path.display().to_string(),
        source: e,
    })?;
    load_tensors(&weights_path, &bytes, &mut encoder, Some(&mut head))?;

    Ok(ViewModel {
        plane: manifest.plane,
        task: manifest.task,
        spec: BackboneSpec {
            family: manifest.family,
            init: manifest.init,
        },
        aggregation: manifest.aggregation,
        feature_dim,
        encoder,
        head,
        provenance: TrainingProvenance {
            config_hash: manifest.config_hash,
            epochs_trained: manifest.epochs_trained,
            best_metric: manifest.best_metric,
        },
    })
}
