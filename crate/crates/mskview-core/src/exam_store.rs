//! MRNet-layout dataset handling: loading and validating exams, label CSV
//! ingestion, summary statistics, and a seeded synthetic dataset generator
//! for desk-scale testing.
//!
//! On-disk layout:
//! ```text
//! <root>/<split>/<plane>/<exam_id>.npy      u8 volumes, shape (S, H, W)
//! <root>/<split>-abnormal.csv               headerless "exam_id,label"
//! <root>/<split>-acl.csv
//! <root>/<split>-meniscus.csv
//! ```

use crate::npy::{self, NpyError};
use crate::types::{format_exam_id, PerPlane, PerTask, Plane, Split, Task};
use ndarray::Array3;
use rand::distributions::{Bernoulli, Distribution, Uniform};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExamStoreError {
    #[error("MissingPlane: {plane} volume not found at {path}")]
    MissingPlane { plane: Plane, path: PathBuf },
    #[error("CorruptArray: {plane} volume at {path}: {reason}")]
    CorruptArray {
        plane: Plane,
        path: PathBuf,
        reason: String,
    },
    #[error("EmptyStack: {plane} volume at {path} has zero slices")]
    EmptyStack { plane: Plane, path: PathBuf },
    #[error("LabelMismatch: exam {exam_id} present in {present_in} but missing from {missing_from}")]
    LabelMismatch {
        exam_id: String,
        present_in: String,
        missing_from: String,
    },
    #[error("NonBinaryLabel: {path} line {line}: label {value:?} is not 0 or 1")]
    NonBinaryLabel {
        path: PathBuf,
        line: usize,
        value: String,
    },
    #[error("MalformedLabelRow: {path} line {line}: expected `exam_id,label`")]
    MalformedLabelRow { path: PathBuf, line: usize },
    #[error("InvalidSynthConfig: {0}")]
    InvalidSynthConfig(String),
    #[error("IoFailure at {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_fail(path: &Path, source: io::Error) -> ExamStoreError {
    ExamStoreError::IoFailure {
        path: path.to_path_buf(),
        source,
    }
}

/// One plane's volume: an ordered stack of same-sized 2-D slices.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceStack<T = u8> {
    pub plane: Plane,
    /// Shape (S, H, W).
    pub data: Array3<T>,
}

impl<T> SliceStack<T> {
    pub fn n_slices(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }
}

/// One subject's scan: all three plane-tagged stacks plus the exam id.
#[derive(Debug, Clone, PartialEq)]
pub struct Exam {
    pub exam_id: String,
    pub volumes: BTreeMap<Plane, SliceStack<u8>>,
}

impl Exam {
    pub fn volume(&self, plane: Plane) -> &SliceStack<u8> {
        &self.volumes[&plane]
    }
}

/// Three binary targets per exam.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    pub abnormal: bool,
    pub acl: bool,
    pub meniscus: bool,
}

impl LabelVector {
    pub fn get(&self, task: Task) -> bool {
        match task {
            Task::Abnormal => self.abnormal,
            Task::Acl => self.acl,
            Task::Meniscus => self.meniscus,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceCountStats {
    pub min: usize,
    pub median: f64,
    pub max: usize,
}

/// Summary figures for a labelled exam collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_exams: usize,
    pub n_abnormal: usize,
    pub n_acl: usize,
    pub n_meniscus: usize,
    pub n_both_acl_meniscus: usize,
    /// Per-plane slice-count spread; absent when no volumes were inspected.
    pub per_plane_slices: Option<PerPlane<SliceCountStats>>,
}

/// Controls for the synthetic dataset generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_test: usize,
    /// Square slice edge length in pixels.
    pub image_size: usize,
    /// Inclusive (min, max) slice count per stack.
    pub slices_range: (usize, usize),
    /// Additive lesion intensity per task, in [0, 255].
    pub lesion_contrast: PerTask<u8>,
    /// Planes where each task's lesion is drawn.
    pub visibility: PerTask<Vec<Plane>>,
    /// Per-task positive prevalence. Abnormal is the probability of an
    /// abnormal-only finding; the label itself is the OR of all findings.
    pub prevalence: PerTask<f64>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train: 24,
            n_test: 12,
            image_size: 64,
            slices_range: (6, 10),
            lesion_contrast: PerTask {
                abnormal: 90,
                acl: 110,
                meniscus: 110,
            },
            visibility: PerTask {
                abnormal: Plane::ALL.to_vec(),
                acl: vec![Plane::Sagittal],
                meniscus: vec![Plane::Axial, Plane::Coronal],
            },
            prevalence: PerTask {
                abnormal: 0.3,
                acl: 0.5,
                meniscus: 0.5,
            },
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), ExamStoreError> {
        let bad = |msg: String| Err(ExamStoreError::InvalidSynthConfig(msg));
        if self.n_train == 0 {
            return bad("n_train must be >= 1".into());
        }
        if self.image_size < 8 {
            return bad("image_size must be >= 8".into());
        }
        if self.slices_range.0 < 1 || self.slices_range.0 > self.slices_range.1 {
            return bad(format!("invalid slices_range {:?}", self.slices_range));
        }
        for task in Task::ALL {
            let p = *self.prevalence.get(task);
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("prevalence for {task} must be in [0,1], got {p}"));
            }
            if *self.lesion_contrast.get(task) == 0 {
                return bad(format!("lesion contrast for {task} must be > 0"));
            }
        }
        Ok(())
    }
}

fn volume_path(root: &Path, split: Split, plane: Plane, exam_id: &str) -> PathBuf {
    root.join(split.as_str())
        .join(plane.as_str())
        .join(format!("{exam_id}.npy"))
}

fn labels_path(root: &Path, split: Split, task: Task) -> PathBuf {
    root.join(format!("{}-{}.csv", split.as_str(), task.as_str()))
}

/// Load one exam's three plane volumes.
pub fn load_exam(root: &Path, split: Split, exam_id: &str) -> Result<Exam, ExamStoreError> {
    let mut volumes = BTreeMap::new();
    for plane in Plane::ALL {
        let path = volume_path(root, split, plane, exam_id);
        if !path.exists() {
            return Err(ExamStoreError::MissingPlane { plane, path });
        }
        let data = npy::read_u8(&path).map_err(|e| match e {
            NpyError::Io { source, .. } => io_fail(&path, source),
            other => ExamStoreError::CorruptArray {
                plane,
                path: path.clone(),
                reason: other.to_string(),
            },
        })?;
        if data.dim().0 == 0 {
            return Err(ExamStoreError::EmptyStack { plane, path });
        }
        volumes.insert(plane, SliceStack { plane, data });
    }
    Ok(Exam {
        exam_id: exam_id.to_string(),
        volumes,
    })
}

fn read_task_labels(path: &Path) -> Result<BTreeMap<String, bool>, ExamStoreError> {
    let text = fs::read_to_string(path).map_err(|e| io_fail(path, e))?;
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let (id, value) = line.split_once(',').ok_or(ExamStoreError::MalformedLabelRow {
            path: path.to_path_buf(),
            line: i + 1,
        })?;
        let label = match value.trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(ExamStoreError::NonBinaryLabel {
                    path: path.to_path_buf(),
                    line: i + 1,
                    value: other.to_string(),
                })
            }
        };
        out.insert(id.trim().to_string(), label);
    }
    Ok(out)
}

/// Load the three per-task label CSVs for a split and join them per exam.
pub fn load_labels(
    root: &Path,
    split: Split,
) -> Result<BTreeMap<String, LabelVector>, ExamStoreError> {
    let mut per_task = Vec::new();
    for task in Task::ALL {
        per_task.push((task, read_task_labels(&labels_path(root, split, task))?));
    }
    // every id must appear in all three files
    for (task_a, map_a) in &per_task {
        for (task_b, map_b) in &per_task {
            if let Some(id) = map_a.keys().find(|id| !map_b.contains_key(*id)) {
                return Err(ExamStoreError::LabelMismatch {
                    exam_id: id.clone(),
                    present_in: labels_path(root, split, *task_a).display().to_string(),
                    missing_from: labels_path(root, split, *task_b).display().to_string(),
                });
            }
        }
    }
    let abnormal = &per_task[0].1;
    let acl = &per_task[1].1;
    let meniscus = &per_task[2].1;
    Ok(abnormal
        .iter()
        .map(|(id, &ab)| {
            (
                id.clone(),
                LabelVector {
                    abnormal: ab,
                    acl: acl[id],
                    meniscus: meniscus[id],
                },
            )
        })
        .collect())
}

/// Exam ids present in a split, sorted, independent of filesystem order.
pub fn list_exam_ids(root: &Path, split: Split) -> Result<Vec<String>, ExamStoreError> {
    let dir = root.join(split.as_str()).join(Plane::Axial.as_str());
    let mut ids = Vec::new();
    for entry in fs::read_dir(&dir).map_err(|e| io_fail(&dir, e))? {
        let entry = entry.map_err(|e| io_fail(&dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".npy") {
            ids.push(stem.to_string());
        }
    }
    ids.sort();
    Ok(ids)
}

/// Load every exam of a split in sorted id order.
pub fn load_split_exams(root: &Path, split: Split) -> Result<Vec<Exam>, ExamStoreError> {
    list_exam_ids(root, split)?
        .iter()
        .map(|id| load_exam(root, split, id))
        .collect()
}

/// Exact-count summary of a label map plus slice-count spread of the exams.
pub fn dataset_stats<'a>(
    labels: &BTreeMap<String, LabelVector>,
    exams: impl IntoIterator<Item = &'a Exam>,
) -> DatasetStats {
    let mut stats = DatasetStats {
        n_exams: labels.len(),
        n_abnormal: 0,
        n_acl: 0,
        n_meniscus: 0,
        n_both_acl_meniscus: 0,
        per_plane_slices: None,
    };
    for label in labels.values() {
        stats.n_abnormal += label.abnormal as usize;
        stats.n_acl += label.acl as usize;
        stats.n_meniscus += label.meniscus as usize;
        stats.n_both_acl_meniscus += (label.acl && label.meniscus) as usize;
    }

    let mut counts: PerPlane<Vec<usize>> = PerPlane {
        axial: Vec::new(),
        coronal: Vec::new(),
        sagittal: Vec::new(),
    };
    for exam in exams {
        for plane in Plane::ALL {
            counts.get_mut(plane).push(exam.volume(plane).n_slices());
        }
    }
    if !counts.axial.is_empty() {
        let summarize = |mut v: Vec<usize>| {
            v.sort_unstable();
            let n = v.len();
            let median = if n % 2 == 1 {
                v[n / 2] as f64
            } else {
                (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
            };
            SliceCountStats {
                min: v[0],
                median,
                max: v[n - 1],
            }
        };
        stats.per_plane_slices = Some(PerPlane {
            axial: summarize(counts.axial),
            coronal: summarize(counts.coronal),
            sagittal: summarize(counts.sagittal),
        });
    }
    stats
}

/// Write a split's three label CSVs in MRNet format (sorted by exam id).
pub fn write_labels(
    root: &Path,
    split: Split,
    labels: &BTreeMap<String, LabelVector>,
) -> Result<(), ExamStoreError> {
    for task in Task::ALL {
        let path = labels_path(root, split, task);
        let mut body = String::new();
        for (id, label) in labels {
            body.push_str(&format!("{id},{}\n", label.get(task) as u8));
        }
        crate::io_util::atomic_write(&path, body.as_bytes()).map_err(|e| io_fail(&path, e))?;
    }
    Ok(())
}

struct LesionDraw {
    present: PerTask<bool>,
}

fn sample_split_labels(
    rng: &mut ChaCha8Rng,
    config: &SynthConfig,
    n: usize,
) -> Vec<(LabelVector, LesionDraw)> {
    let bern = |p: f64| Bernoulli::new(p).expect("validated prevalence");
    let acl_d = bern(*config.prevalence.get(Task::Acl));
    let men_d = bern(*config.prevalence.get(Task::Meniscus));
    let extra_d = bern(*config.prevalence.get(Task::Abnormal));

    // redraw the whole split when a strictly-interior-prevalence task comes
    // out single-class; keeps small desk-scale splits usable for AUC
    for _attempt in 0..100 {
        let draws: Vec<(LabelVector, LesionDraw)> = (0..n)
            .map(|_| {
                let acl = acl_d.sample(rng);
                let meniscus = men_d.sample(rng);
                let extra = extra_d.sample(rng);
                (
                    LabelVector {
                        abnormal: acl || meniscus || extra,
                        acl,
                        meniscus,
                    },
                    LesionDraw {
                        present: PerTask {
                            abnormal: extra,
                            acl,
                            meniscus,
                        },
                    },
                )
            })
            .collect();
        if n < 2 {
            return draws;
        }
        let balanced = Task::ALL.iter().all(|&task| {
            let p = effective_prevalence(config, task);
            if p <= 0.0 || p >= 1.0 {
                return true;
            }
            let pos = draws.iter().filter(|(l, _)| l.get(task)).count();
            pos > 0 && pos < n
        });
        if balanced {
            return draws;
        }
    }
    // degenerate prevalences make balance unreachable; accept the last draw
    (0..n)
        .map(|_| {
            let acl = acl_d.sample(rng);
            let meniscus = men_d.sample(rng);
            let extra = extra_d.sample(rng);
            (
                LabelVector {
                    abnormal: acl || meniscus || extra,
                    acl,
                    meniscus,
                },
                LesionDraw {
                    present: PerTask {
                        abnormal: extra,
                        acl,
                        meniscus,
                    },
                },
            )
        })
        .collect()
}

fn effective_prevalence(config: &SynthConfig, task: Task) -> f64 {
    match task {
        Task::Abnormal => {
            let pa = *config.prevalence.get(Task::Acl);
            let pm = *config.prevalence.get(Task::Meniscus);
            let pe = *config.prevalence.get(Task::Abnormal);
            1.0 - (1.0 - pa) * (1.0 - pm) * (1.0 - pe)
        }
        other => *config.prevalence.get(other),
    }
}

/// Per-task in-plane anchor so co-occurring lesions stay distinguishable.
fn lesion_anchor(task: Task) -> (f64, f64) {
    match task {
        Task::Abnormal => (0.0, 0.0),
        Task::Acl => (0.14, -0.14),
        Task::Meniscus => (-0.14, 0.14),
    }
}

fn generate_volume(
    rng: &mut ChaCha8Rng,
    config: &SynthConfig,
    plane: Plane,
    lesions: &LesionDraw,
) -> Array3<u8> {
    let size = config.image_size;
    let n_slices = rng.gen_range(config.slices_range.0..=config.slices_range.1);
    let noise = Normal::new(0.0_f64, 6.0).unwrap();
    let center = (size as f64 - 1.0) / 2.0;
    let fg_radius = 0.45 * size as f64;

    // base anatomy: circular foreground with a radial intensity falloff
    let mut volume = Array3::<f64>::zeros((n_slices, size, size));
    for s in 0..n_slices {
        for y in 0..size {
            for x in 0..size {
                let r = ((y as f64 - center).powi(2) + (x as f64 - center).powi(2)).sqrt();
                if r <= fg_radius {
                    let base = 30.0 + 90.0 * (1.0 - r / fg_radius);
                    volume[[s, y, x]] = (base + noise.sample(rng)).clamp(1.0, 200.0);
                }
            }
        }
    }

    for task in Task::ALL {
        // consume the task's geometry draws even when the lesion is not
        // rendered here, so rng state does not depend on the visibility mask
        let (ay, ax) = lesion_anchor(task);
        let jitter = Uniform::new(-0.05, 0.05);
        let cy = center + (ay + jitter.sample(rng)) * size as f64;
        let cx = center + (ax + jitter.sample(rng)) * size as f64;
        let cs = (n_slices as f64 - 1.0) / 2.0
            + rng.gen_range(-0.2..0.2) * n_slices as f64;
        let ry = rng.gen_range(0.12..0.20) * size as f64;
        let rx = rng.gen_range(0.12..0.20) * size as f64;
        let rs = (rng.gen_range(0.25..0.45) * n_slices as f64).max(1.0);

        let render = *lesions.present.get(task) && config.visibility.get(task).contains(&plane);
        if !render {
            continue;
        }
        let contrast = *config.lesion_contrast.get(task) as f64;
        for s in 0..n_slices {
            for y in 0..size {
                for x in 0..size {
                    if volume[[s, y, x]] == 0.0 {
                        continue; // lesions stay inside the foreground
                    }
                    let d = ((s as f64 - cs) / rs).powi(2)
                        + ((y as f64 - cy) / ry).powi(2)
                        + ((x as f64 - cx) / rx).powi(2);
                    if d <= 1.0 {
                        volume[[s, y, x]] += contrast;
                    }
                }
            }
        }
    }

    volume.mapv(|v| v.round().clamp(0.0, 255.0) as u8)
}

/// Generate an MRNet-layout synthetic dataset under `out_root`, deterministic
/// for a given config, and return the stats of what was written.
pub fn generate_synthetic(
    config: &SynthConfig,
    out_root: &Path,
) -> Result<DatasetStats, ExamStoreError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut all_labels = BTreeMap::new();
    let mut all_exams = Vec::new();
    let splits = [
        (Split::Train, 0usize, config.n_train),
        (Split::Valid, config.n_train, config.n_test),
    ];
    for (split, start, n) in splits {
        let draws = sample_split_labels(&mut rng, config, n);
        let mut split_labels = BTreeMap::new();
        for (i, (label, lesions)) in draws.iter().enumerate() {
            let exam_id = format_exam_id(start + i);
            let mut volumes = BTreeMap::new();
            for plane in Plane::ALL {
                let data = generate_volume(&mut rng, config, plane, lesions);
                let path = volume_path(out_root, split, plane, &exam_id);
                npy::write_u8(&path, &data).map_err(|e| match e {
                    NpyError::Io { path, source } => ExamStoreError::IoFailure {
                        path: PathBuf::from(path),
                        source,
                    },
                    other => io_fail(out_root, io::Error::new(io::ErrorKind::Other, other)),
                })?;
                volumes.insert(plane, SliceStack { plane, data });
            }
            split_labels.insert(exam_id.clone(), *label);
            all_labels.insert(exam_id.clone(), *label);
            all_exams.push(Exam { exam_id, volumes });
        }
        write_labels(out_root, split, &split_labels)?;
    }
    Ok(dataset_stats(&all_labels, all_exams.iter()))
}
