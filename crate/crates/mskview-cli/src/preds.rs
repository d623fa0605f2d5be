//! Prediction CSV and artifact-sidecar plumbing shared by the subcommands.

use mskview_core::fusion::ViewProbTriple;
use mskview_core::types::Task;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("MalformedCsv: {path}: {reason}")]
    MalformedCsv { path: String, reason: String },
    #[error("MixedTasks: {path} mixes tasks {a} and {b}; one prediction file covers one task")]
    MixedTasks { path: String, a: Task, b: Task },
    #[error("MissingLabel: no label for exam {exam_id} in {path}")]
    MissingLabel { exam_id: String, path: String },
    #[error("MixedConfigHashes: inputs carry differing config hashes {hashes:?}; pass --allow-mixed to override")]
    MixedConfigHashes { hashes: Vec<String> },
    #[error("EmptyInput: {0}")]
    EmptyInput(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One exam's per-view and fused probabilities for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct PredRow {
    pub exam_id: String,
    pub task: Task,
    pub probs: ViewProbTriple,
    pub fused: Option<f64>,
}

pub const PREDS_HEADER: &str = "exam_id,task,p_axial,p_coronal,p_sagittal,p_fused";

/// Sidecar manifest written next to every derived artifact so downstream
/// stages can detect mixed-provenance inputs.
#[derive(Debug, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub config_hash: String,
}

pub fn meta_path(artifact: &Path) -> PathBuf {
    let name = artifact
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "artifact".into());
    artifact.with_file_name(format!("{name}.meta.json"))
}

pub fn write_meta(artifact: &Path, config_hash: &str) -> Result<(), CliError> {
    let path = meta_path(artifact);
    mskview_core::io_util::write_json(
        &path,
        &ArtifactMeta {
            config_hash: config_hash.to_string(),
        },
    )
    .map_err(|e| io_err(&path, e))
}

/// The producing config hash of an artifact, when its sidecar exists.
pub fn read_meta_hash(artifact: &Path) -> Option<String> {
    let text = std::fs::read_to_string(meta_path(artifact)).ok()?;
    serde_json::from_str::<ArtifactMeta>(&text)
        .ok()
        .map(|m| m.config_hash)
}

pub fn write_preds(path: &Path, rows: &[PredRow], config_hash: &str) -> Result<(), CliError> {
    let mut out = String::from(PREDS_HEADER);
    out.push('\n');
    for row in rows {
        let fused = row.fused.map(|f| f.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.exam_id, row.task, row.probs.axial, row.probs.coronal, row.probs.sagittal, fused
        ));
    }
    mskview_core::io_util::atomic_write(path, out.as_bytes()).map_err(|e| io_err(path, e))?;
    write_meta(path, config_hash)
}

pub fn read_preds(path: &Path) -> Result<Vec<PredRow>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let bad = |line_no: usize, reason: String| CliError::MalformedCsv {
        path: path.display().to_string(),
        reason: format!("line {line_no}: {reason}"),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == PREDS_HEADER => {}
        Some((_, header)) => {
            return Err(bad(1, format!("unexpected header {header:?}")));
        }
        None => {
            return Err(bad(1, "empty file".into()));
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(bad(i + 1, format!("expected 6 fields, got {}", fields.len())));
        }
        let task: Task = fields[1].parse().map_err(|e: String| bad(i + 1, e))?;
        let prob = |s: &str, name: &str| -> Result<f64, CliError> {
            let v: f64 = s
                .parse()
                .map_err(|e| bad(i + 1, format!("bad {name}: {e}")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(bad(i + 1, format!("{name} {v} outside [0, 1]")));
            }
            Ok(v)
        };
        let fused = if fields[5].is_empty() {
            None
        } else {
            Some(prob(fields[5], "p_fused")?)
        };
        rows.push(PredRow {
            exam_id: fields[0].to_string(),
            task,
            probs: ViewProbTriple {
                axial: prob(fields[2], "p_axial")?,
                coronal: prob(fields[3], "p_coronal")?,
                sagittal: prob(fields[4], "p_sagittal")?,
            },
            fused,
        });
    }
    if rows.is_empty() {
        return Err(CliError::EmptyInput(format!(
            "{} has no prediction rows",
            path.display()
        )));
    }
    Ok(rows)
}

/// Read a headerless `exam_id,label` CSV with 0/1 labels.
pub fn read_label_csv(path: &Path) -> Result<BTreeMap<String, bool>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (id, label) = line.split_once(',').ok_or_else(|| CliError::MalformedCsv {
            path: path.display().to_string(),
            reason: format!("line {}: expected exam_id,label", i + 1),
        })?;
        let value = match label {
            "0" => false,
            "1" => true,
            other => {
                return Err(CliError::MalformedCsv {
                    path: path.display().to_string(),
                    reason: format!("line {}: label must be 0 or 1, got {other:?}", i + 1),
                })
            }
        };
        out.insert(id.to_string(), value);
    }
    Ok(out)
}
