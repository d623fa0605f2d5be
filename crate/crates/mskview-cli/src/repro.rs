//! Self-contained end-to-end driver: synthesize a dataset, standardize,
//! train the nine view models, fit the three fusion models, evaluate on the
//! held-out split, and render a multi-view vs single-view report.

use crate::preds::{write_preds, PredRow};
use mskview_core::augment::AugmentConfig;
use mskview_core::exam_store::{
    generate_synthetic, load_labels, load_split_exams, Exam, LabelVector, SynthConfig,
};
use mskview_core::fusion::{fit_fusion, save_fusion, ViewProbTriple};
use mskview_core::io_util::config_hash;
use mskview_core::metrics::{
    macro_average, render_report, summarize, ClassName, MetricsRow, ReportFormat, ScoredSet,
    ViewMode,
};
use mskview_core::nn::backbones::Family;
use mskview_core::preprocess::{default_percentiles, fit_standardizer, StandardizerModel};
use mskview_core::trainer::{
    labeled_volumes, train_view_model, Monitor, PosWeightMode, TrainConfig,
};
use mskview_core::types::{PerPlane, Plane, Split, Task};
use mskview_core::view_net::{
    build_view_model, predict_view, save_checkpoint, BackboneSpec, Init, ViewModel,
};
use serde::Serialize;
use std::collections::BTreeMap;
use std::error::Error;
use std::path::{Path, PathBuf};

pub const FUSION_L2_LAMBDA: f64 = 1e-3;
pub const DECISION_THRESHOLD: f64 = 0.5;

/// Training settings the driver uses for every view model.
pub fn driver_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-2,
        weight_decay: 1e-4,
        max_epochs: 15,
        early_stop_patience: 5,
        batch_size: 1,
        pos_weight_mode: PosWeightMode::None,
        augment: AugmentConfig::default(),
        monitor: Monitor::ValidLoss,
        seed,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReproOutcome {
    pub report_md: PathBuf,
    pub report_csv: PathBuf,
    pub multiview_average_auc: f64,
    pub best_single_view_average_auc: f64,
    pub best_single_view_plane: Plane,
    pub per_plane_average_auc: PerPlane<f64>,
}

/// Carve an early-stopping holdout out of the generated train split: every
/// fourth exam (by sorted id) is held out.
pub fn carve_holdout(exams: &[Exam]) -> (Vec<Exam>, Vec<Exam>) {
    let mut fit = Vec::new();
    let mut holdout = Vec::new();
    for (i, exam) in exams.iter().enumerate() {
        if i % 4 == 3 {
            holdout.push(exam.clone());
        } else {
            fit.push(exam.clone());
        }
    }
    (fit, holdout)
}

fn view_probs_for(
    exams: &[Exam],
    models: &PerPlane<ViewModel>,
    standardizers: &PerPlane<StandardizerModel>,
) -> Result<Vec<ViewProbTriple>, Box<dyn Error>> {
    exams
        .iter()
        .map(|exam| {
            Ok(ViewProbTriple {
                axial: predict_view(
                    models.get(Plane::Axial),
                    exam.volume(Plane::Axial),
                    standardizers.get(Plane::Axial),
                )?,
                coronal: predict_view(
                    models.get(Plane::Coronal),
                    exam.volume(Plane::Coronal),
                    standardizers.get(Plane::Coronal),
                )?,
                sagittal: predict_view(
                    models.get(Plane::Sagittal),
                    exam.volume(Plane::Sagittal),
                    standardizers.get(Plane::Sagittal),
                )?,
            })
        })
        .collect()
}

fn labels_of(exams: &[Exam], labels: &BTreeMap<String, LabelVector>, task: Task) -> Vec<bool> {
    exams.iter().map(|e| labels[&e.exam_id].get(task)).collect()
}

/// Build the report rows for one model name from per-task test predictions.
/// Returns the rows plus the multiview and per-plane Average AUCs.
pub fn build_report_rows(
    model_name: &str,
    preds: &BTreeMap<Task, Vec<PredRow>>,
    labels: &BTreeMap<String, LabelVector>,
    full_single_view: bool,
) -> Result<(Vec<MetricsRow>, f64, PerPlane<f64>, Plane), Box<dyn Error>> {
    let mut rows = Vec::new();
    let mut multiview_class_rows = Vec::new();
    let mut per_plane_class_rows: PerPlane<Vec<MetricsRow>> = PerPlane {
        axial: Vec::new(),
        coronal: Vec::new(),
        sagittal: Vec::new(),
    };
    for task in Task::ALL {
        let task_preds = preds
            .get(&task)
            .ok_or_else(|| format!("EmptyInput: no predictions for task {task}"))?;
        let task_labels: Vec<bool> = task_preds
            .iter()
            .map(|r| {
                labels
                    .get(&r.exam_id)
                    .map(|l| l.get(task))
                    .ok_or_else(|| format!("MissingLabel: no label for exam {}", r.exam_id))
            })
            .collect::<Result<_, _>>()?;
        let fused: Vec<f64> = task_preds
            .iter()
            .map(|r| {
                r.fused
                    .ok_or_else(|| format!("EmptyInput: no fused probability for {}", r.exam_id))
            })
            .collect::<Result<_, _>>()?;
        let set = ScoredSet::new(fused, task_labels.clone())?;
        multiview_class_rows.push(MetricsRow::from_summary(
            model_name,
            ViewMode::MultiView,
            ClassName::Class(task),
            summarize(&set, DECISION_THRESHOLD)?,
        ));
        for plane in Plane::ALL {
            let scores: Vec<f64> = task_preds.iter().map(|r| r.probs.get(plane)).collect();
            let set = ScoredSet::new(scores, task_labels.clone())?;
            per_plane_class_rows.get_mut(plane).push(MetricsRow::from_summary(
                model_name,
                ViewMode::SingleView(plane),
                ClassName::Class(task),
                summarize(&set, DECISION_THRESHOLD)?,
            ));
        }
    }
    let multiview_average = macro_average(&multiview_class_rows)?;
    let multiview_average_auc = multiview_average.auc;
    rows.extend(multiview_class_rows);
    rows.push(multiview_average);

    let mut per_plane_auc = PerPlane {
        axial: 0.0,
        coronal: 0.0,
        sagittal: 0.0,
    };
    let mut plane_averages = Vec::new();
    for plane in Plane::ALL {
        let avg = macro_average(per_plane_class_rows.get(plane))?;
        *per_plane_auc.get_mut(plane) = avg.auc;
        plane_averages.push((plane, avg));
    }
    let best_plane = plane_averages
        .iter()
        .max_by(|a, b| a.1.auc.total_cmp(&b.1.auc))
        .unwrap()
        .0;
    if full_single_view {
        for (plane, avg) in plane_averages {
            rows.extend(per_plane_class_rows.get(plane).iter().cloned());
            rows.push(avg);
        }
    } else {
        // the published convention: only the best single-view result appears,
        // as an Average-only row
        let best = plane_averages
            .into_iter()
            .find(|(p, _)| *p == best_plane)
            .unwrap()
            .1;
        rows.push(best);
    }
    Ok((rows, multiview_average_auc, per_plane_auc, best_plane))
}

/// Run the whole pipeline at `out`. Everything below `out` is derived from
/// (seed, family, SynthConfig::default) and is byte-deterministic.
pub fn repro_synthetic(
    seed: u64,
    family: Family,
    out: &Path,
) -> Result<ReproOutcome, Box<dyn Error>> {
    let synth_config = SynthConfig {
        seed,
        ..SynthConfig::default()
    };
    let run_hash = config_hash(&(&synth_config, family, seed, driver_train_config(seed)));

    let data_root = out.join("data");
    println!("generating synthetic dataset at {}", data_root.display());
    generate_synthetic(&synth_config, &data_root)?;
    mskview_core::io_util::write_json(&out.join("synth-config.json"), &synth_config)?;

    let train_exams = load_split_exams(&data_root, Split::Train)?;
    let train_labels = load_labels(&data_root, Split::Train)?;
    let test_exams = load_split_exams(&data_root, Split::Valid)?;
    let test_labels = load_labels(&data_root, Split::Valid)?;
    let (fit_exams, holdout_exams) = carve_holdout(&train_exams);

    // per-plane intensity standardizers, fit on the full train split
    let mut standardizers = Vec::new();
    for plane in Plane::ALL {
        let volumes: Vec<_> = train_exams.iter().map(|e| e.volume(plane).clone()).collect();
        let model = fit_standardizer(&volumes, plane, &default_percentiles(), "synthetic-train")?;
        let path = out.join("standardizers").join(format!("{plane}.json"));
        model.save(&path)?;
        println!("fit standardizer {}", path.display());
        standardizers.push(model);
    }
    let standardizers = PerPlane {
        axial: standardizers[0].clone(),
        coronal: standardizers[1].clone(),
        sagittal: standardizers[2].clone(),
    };

    let mut all_preds: BTreeMap<Task, Vec<PredRow>> = BTreeMap::new();
    for task in Task::ALL {
        let mut trained: Vec<ViewModel> = Vec::new();
        for plane in Plane::ALL {
            let config = driver_train_config(seed);
            let model = build_view_model(
                BackboneSpec {
                    family,
                    init: Init::Random { seed },
                },
                plane,
                task,
            )?;
            let train_set = labeled_volumes(&fit_exams, &train_labels, plane, task)?;
            let valid_set = labeled_volumes(&holdout_exams, &train_labels, plane, task)?;
            let (mut model, history) = train_view_model(
                model,
                &train_set,
                &valid_set,
                standardizers.get(plane),
                &config,
            )?;
            model.provenance.config_hash = Some(run_hash.clone());
            let ckpt_dir = out.join("ckpts").join(task.as_str()).join(plane.as_str());
            save_checkpoint(&model, &ckpt_dir)?;
            standardizers.get(plane).save(&ckpt_dir.join("standardizer.json"))?;
            history.write_csv(&ckpt_dir.join("history.csv"))?;
            println!(
                "trained {task}/{plane}: best epoch {} of {} ({})",
                history.best_epoch,
                history.records.len(),
                ckpt_dir.display()
            );
            trained.push(model);
        }
        let models = PerPlane {
            axial: trained[0].clone(),
            coronal: trained[1].clone(),
            sagittal: trained[2].clone(),
        };

        // fusion is fit on train-split view probabilities
        let train_probs = view_probs_for(&train_exams, &models, &standardizers)?;
        let fusion = fit_fusion(
            task,
            &train_probs,
            &labels_of(&train_exams, &train_labels, task),
            FUSION_L2_LAMBDA,
        )?;
        let fusion_path = out.join("fusion").join(format!("{task}.json"));
        save_fusion(&fusion, &fusion_path)?;
        println!("fit fusion {}", fusion_path.display());

        let test_probs = view_probs_for(&test_exams, &models, &standardizers)?;
        let rows: Vec<PredRow> = test_exams
            .iter()
            .zip(&test_probs)
            .map(|(exam, probs)| PredRow {
                exam_id: exam.exam_id.clone(),
                task,
                probs: *probs,
                fused: Some(fusion.fuse(probs)),
            })
            .collect();
        let preds_path = out.join("preds").join(format!("{task}.csv"));
        write_preds(&preds_path, &rows, &run_hash)?;
        println!("wrote predictions {}", preds_path.display());
        all_preds.insert(task, rows);
    }

    let (rows, multiview_auc, per_plane_auc, best_plane) =
        build_report_rows(family.display_name(), &all_preds, &test_labels, false)?;
    let report_md = out.join("report.md");
    let report_csv = out.join("report.csv");
    mskview_core::io_util::atomic_write(
        &report_md,
        render_report(&rows, ReportFormat::Markdown)?.as_bytes(),
    )?;
    mskview_core::io_util::atomic_write(
        &report_csv,
        render_report(&rows, ReportFormat::Csv)?.as_bytes(),
    )?;
    println!("wrote report {}", report_md.display());
    println!("wrote report {}", report_csv.display());

    let outcome = ReproOutcome {
        report_md,
        report_csv,
        multiview_average_auc: multiview_auc,
        best_single_view_average_auc: *per_plane_auc.get(best_plane),
        best_single_view_plane: best_plane,
        per_plane_average_auc: per_plane_auc,
    };
    // persist with out-relative paths so reruns into different directories
    // stay byte-identical
    let persisted = ReproOutcome {
        report_md: PathBuf::from("report.md"),
        report_csv: PathBuf::from("report.csv"),
        ..outcome.clone()
    };
    mskview_core::io_util::write_json(&out.join("metrics.json"), &persisted)?;
    println!("wrote summary {}", out.join("metrics.json").display());
    Ok(outcome)
}

/// Where the driver leaves each task's fusion model.
pub fn fusion_path(out: &Path, task: Task) -> PathBuf {
    out.join("fusion").join(format!("{task}.json"))
}
