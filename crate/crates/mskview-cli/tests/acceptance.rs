//! Acceptance suite: one test per criterion, each printing a single
//! PASS/FAIL line (run with `--nocapture` to see them on success).

use mskview_cli::repro::{self, ReproOutcome};
use mskview_core::augment::{sample_augmentation, AugmentConfig};
use mskview_core::exam_store::{generate_synthetic, load_labels, load_split_exams, SynthConfig};
use mskview_core::fusion::{fit_fusion, FeatureSpace, FusionModel, ViewProbTriple};
use mskview_core::metrics::{
    confusion_at_threshold, macro_average, render_report, roc_auc, summarize, ClassName,
    MetricsRow, ReportFormat, ScoredSet, ViewMode,
};
use mskview_core::nn::backbones::Family;
use mskview_core::nn::sigmoid;
use mskview_core::preprocess::{apply_standardizer, default_percentiles, fit_standardizer};
use mskview_core::trainer::{
    exam_gradients, exam_loss, labeled_volumes, train_view_model, Monitor, PosWeightMode,
    TrainConfig,
};
use mskview_core::types::{PerPlane, PerTask, Plane, Split, Task};
use mskview_core::view_net::{
    build_view_model, predict_view, prepare_stack, BackboneSpec, Init, ViewModel,
};
use ndarray::Axis;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::time::{Duration, Instant};

macro_rules! ensure {
    ($cond:expr, $($msg:tt)*) => {
        if !$cond {
            return Err(format!($($msg)*));
        }
    };
}

fn check(n: u32, name: &str, f: impl FnOnce() -> Result<(), String>) {
    match f() {
        Ok(()) => println!("acceptance criterion {n} ({name}): PASS"),
        Err(msg) => {
            println!("acceptance criterion {n} ({name}): FAIL - {msg}");
            panic!("criterion {n} ({name}) failed: {msg}");
        }
    }
}

fn brute_force_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut concordant = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                concordant += 1.0;
            } else if si == sj {
                concordant += 0.5;
            }
        }
    }
    concordant / pairs
}

#[test]
fn criterion_01_metric_oracle_equivalence() {
    check(1, "metric oracle equivalence", || {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for case in 0..1000 {
            let n = rng.gen_range(2..=50);
            let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..=20) as f64) / 20.0).collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            let pos = labels.iter().filter(|&&l| l).count();
            if pos == 0 || pos == labels.len() {
                continue;
            }
            let set = ScoredSet::new(scores.clone(), labels.clone()).unwrap();
            let fast = roc_auc(&set).map_err(|e| e.to_string())?;
            let brute = brute_force_auc(&scores, &labels);
            ensure!(
                (fast - brute).abs() < 1e-12,
                "case {case}: auc {fast} vs brute force {brute}"
            );

            let threshold = rng.gen_range(0.0..1.0);
            let c = confusion_at_threshold(&set, threshold);
            let mut recount = (0usize, 0usize, 0usize, 0usize);
            for (s, l) in scores.iter().zip(&labels) {
                match (*s >= threshold, *l) {
                    (true, true) => recount.0 += 1,
                    (true, false) => recount.1 += 1,
                    (false, false) => recount.2 += 1,
                    (false, true) => recount.3 += 1,
                }
            }
            ensure!(
                (c.tp, c.fp, c.tn, c.fn_) == recount,
                "case {case}: confusion mismatch"
            );
        }
        ensure!(
            start.elapsed() < Duration::from_secs(10),
            "took {:?}, budget 10 s",
            start.elapsed()
        );
        Ok(())
    });
}

fn table1_class_rows(model: &str, per_task: [(f64, f64, f64, f64); 3]) -> Vec<MetricsRow> {
    Task::ALL
        .iter()
        .zip(per_task)
        .map(|(&task, (auc, sens, spec, acc))| MetricsRow {
            model_name: model.to_string(),
            view_mode: ViewMode::MultiView,
            class_name: ClassName::Class(task),
            auc,
            sensitivity: sens,
            specificity: spec,
            accuracy: acc,
        })
        .collect()
}

#[test]
fn criterion_02_published_average_arithmetic() {
    check(2, "published Average-row arithmetic", || {
        for (model, aucs, expected) in [
            ("AlexNet", [0.8914, 0.9388, 0.8060], 0.8787),
            ("ResNet-18", [0.8114, 0.9540, 0.8083], 0.8579),
            ("GoogLeNet", [0.9091, 0.8906, 0.7791], 0.8596),
        ] {
            let rows = table1_class_rows(
                model,
                [
                    (aucs[0], 0.5, 0.5, 0.5),
                    (aucs[1], 0.5, 0.5, 0.5),
                    (aucs[2], 0.5, 0.5, 0.5),
                ],
            );
            let avg = macro_average(&rows).map_err(|e| e.to_string())?;
            ensure!(
                (avg.auc - expected).abs() < 5e-5,
                "{model}: average AUC {} vs published {expected}",
                avg.auc
            );
        }
        let rows = table1_class_rows(
            "AlexNet",
            [
                (0.8914, 0.9789, 0.4000, 0.8583),
                (0.9388, 0.6852, 0.9545, 0.8333),
                (0.8060, 0.6923, 0.8088, 0.7583),
            ],
        );
        let report = render_report(&rows, ReportFormat::Markdown).map_err(|e| e.to_string())?;
        let expected_line = "| AlexNet-multiview | Average | 0.8787 | 0.7855 | 0.7211 | 0.8166 |";
        ensure!(
            report.contains(expected_line),
            "rendered report missing the published Average line; got:\n{report}"
        );
        Ok(())
    });
}

#[test]
fn criterion_03_table_row_reconciliation() {
    check(3, "confusion-to-metrics reconciliation", || {
        // tp=93, fn=2, tn=10, fp=15 at threshold 0.5 on 120 exams
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..93 {
            scores.push(0.9);
            labels.push(true);
        }
        for _ in 0..2 {
            scores.push(0.1);
            labels.push(true);
        }
        for _ in 0..10 {
            scores.push(0.2);
            labels.push(false);
        }
        for _ in 0..15 {
            scores.push(0.8);
            labels.push(false);
        }
        let set = ScoredSet::new(scores, labels).unwrap();
        let m = summarize(&set, 0.5).map_err(|e| e.to_string())?;
        ensure!((m.sensitivity - 0.9789).abs() < 5e-5, "sensitivity {}", m.sensitivity);
        ensure!((m.specificity - 0.4000).abs() < 5e-5, "specificity {}", m.specificity);
        ensure!((m.accuracy - 0.8583).abs() < 5e-5, "accuracy {}", m.accuracy);
        Ok(())
    });
}

fn mean_log_loss(features: &[ViewProbTriple], labels: &[bool], model: &FusionModel) -> f64 {
    features
        .iter()
        .zip(labels)
        .map(|(f, &y)| {
            let p = model.fuse(f).clamp(1e-12, 1.0 - 1e-12);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / features.len() as f64
}

#[test]
fn criterion_04_fusion_optimality() {
    check(4, "fusion optimality vs single-feature fits", || {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        let lambda = 1e-9;
        for case in 0..200 {
            let n = 40;
            let w = [
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-4.0..4.0),
            ];
            let b: f64 = rng.gen_range(-1.0..1.0);
            let mut features = Vec::with_capacity(n);
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                let t = ViewProbTriple {
                    axial: rng.gen(),
                    coronal: rng.gen(),
                    sagittal: rng.gen(),
                };
                let p = sigmoid(w[0] * t.axial + w[1] * t.coronal + w[2] * t.sagittal + b);
                // 15% label noise keeps every draw non-separable in practice
                let mut y = rng.gen::<f64>() < p;
                if rng.gen::<f64>() < 0.15 {
                    y = !y;
                }
                features.push(t);
                labels.push(y);
            }
            let pos = labels.iter().filter(|&&l| l).count();
            if pos == 0 || pos == n {
                continue;
            }
            let full = fit_fusion(Task::Acl, &features, &labels, lambda)
                .map_err(|e| format!("case {case}: {e}"))?;
            let full_loss = mean_log_loss(&features, &labels, &full);

            let mut best_single = f64::INFINITY;
            for keep in 0..3 {
                let masked: Vec<ViewProbTriple> = features
                    .iter()
                    .map(|t| {
                        let v = t.as_array();
                        ViewProbTriple {
                            axial: if keep == 0 { v[0] } else { 0.0 },
                            coronal: if keep == 1 { v[1] } else { 0.0 },
                            sagittal: if keep == 2 { v[2] } else { 0.0 },
                        }
                    })
                    .collect();
                let single = fit_fusion(Task::Acl, &masked, &labels, lambda)
                    .map_err(|e| format!("case {case} single {keep}: {e}"))?;
                best_single = best_single.min(mean_log_loss(&masked, &labels, &single));
            }
            ensure!(
                full_loss <= best_single + 1e-6,
                "case {case}: full fit loss {full_loss} vs best single {best_single}"
            );
        }

        // intercept-only closed form: all-zero features leave only the bias
        let features = vec![
            ViewProbTriple {
                axial: 0.0,
                coronal: 0.0,
                sagittal: 0.0
            };
            20
        ];
        let labels: Vec<bool> = (0..20).map(|i| i < 7).collect();
        let model =
            fit_fusion(Task::Acl, &features, &labels, lambda).map_err(|e| e.to_string())?;
        let closed_form = (0.35f64 / 0.65).ln();
        ensure!(
            (model.bias - closed_form).abs() < 1e-6,
            "intercept {} vs closed form {closed_form}",
            model.bias
        );
        ensure!(
            start.elapsed() < Duration::from_secs(60),
            "took {:?}, budget 60 s",
            start.elapsed()
        );
        Ok(())
    });
}

fn reversed_volume(
    volume: &mskview_core::exam_store::SliceStack<u8>,
) -> mskview_core::exam_store::SliceStack<u8> {
    let mut out = volume.clone();
    let slices: Vec<_> = (0..volume.n_slices())
        .rev()
        .map(|s| volume.data.index_axis(Axis(0), s).to_owned())
        .collect();
    for (i, s) in slices.iter().enumerate() {
        out.data.index_axis_mut(Axis(0), i).assign(s);
    }
    out
}

fn with_duplicated_slice(
    volume: &mskview_core::exam_store::SliceStack<u8>,
    dup: usize,
) -> mskview_core::exam_store::SliceStack<u8> {
    let (s, h, w) = volume.data.dim();
    let mut data = ndarray::Array3::zeros((s + 1, h, w));
    for i in 0..s {
        data.index_axis_mut(Axis(0), i)
            .assign(&volume.data.index_axis(Axis(0), i));
    }
    data.index_axis_mut(Axis(0), s)
        .assign(&volume.data.index_axis(Axis(0), dup));
    mskview_core::exam_store::SliceStack {
        plane: volume.plane,
        data,
    }
}

#[test]
fn criterion_05_pipeline_invariances() {
    check(5, "slice permutation and duplication invariance", || {
        let dir = tempfile::tempdir().unwrap();
        let config = SynthConfig {
            n_train: 20,
            n_test: 1,
            image_size: 32,
            slices_range: (4, 6),
            seed: 505,
            ..SynthConfig::default()
        };
        generate_synthetic(&config, dir.path()).map_err(|e| e.to_string())?;
        let exams = load_split_exams(dir.path(), Split::Train).map_err(|e| e.to_string())?;

        let mut models = Vec::new();
        let mut standardizers = Vec::new();
        for plane in Plane::ALL {
            let volumes: Vec<_> = exams.iter().map(|e| e.volume(plane).clone()).collect();
            standardizers.push(
                fit_standardizer(&volumes, plane, &default_percentiles(), "inv")
                    .map_err(|e| e.to_string())?,
            );
            models.push(
                build_view_model(
                    BackboneSpec {
                        family: Family::Tiny,
                        init: Init::Random { seed: 5 },
                    },
                    plane,
                    Task::Abnormal,
                )
                .map_err(|e| e.to_string())?,
            );
        }
        let models = PerPlane::<ViewModel> {
            axial: models.remove(0),
            coronal: models.remove(0),
            sagittal: models.remove(0),
        };
        let standardizers = PerPlane {
            axial: standardizers.remove(0),
            coronal: standardizers.remove(0),
            sagittal: standardizers.remove(0),
        };
        let fusion = FusionModel {
            task: Task::Abnormal,
            weights: [0.7, -0.4, 1.1],
            bias: 0.05,
            l2_lambda: 1e-3,
            feature_space: FeatureSpace::Probability,
            n_train: exams.len(),
        };

        for exam in &exams {
            // per-view invariance on the sagittal stack
            let volume = exam.volume(Plane::Sagittal);
            let base = predict_view(
                models.get(Plane::Sagittal),
                volume,
                standardizers.get(Plane::Sagittal),
            )
            .map_err(|e| e.to_string())?;
            let permuted = predict_view(
                models.get(Plane::Sagittal),
                &reversed_volume(volume),
                standardizers.get(Plane::Sagittal),
            )
            .map_err(|e| e.to_string())?;
            ensure!(
                base == permuted,
                "exam {}: permutation changed prediction {base} -> {permuted}",
                exam.exam_id
            );
            let duplicated = predict_view(
                models.get(Plane::Sagittal),
                &with_duplicated_slice(volume, 0),
                standardizers.get(Plane::Sagittal),
            )
            .map_err(|e| e.to_string())?;
            ensure!(
                base == duplicated,
                "exam {}: duplication changed prediction {base} -> {duplicated}",
                exam.exam_id
            );

            // whole-exam invariance through fusion
            let (_, fused) =
                mskview_core::fusion::predict_exam(&models, &standardizers, &fusion, exam)
                    .map_err(|e| e.to_string())?;
            let mut mutated = exam.clone();
            for plane in Plane::ALL {
                let volume = mutated.volumes[&plane].clone();
                let new = if plane == Plane::Axial {
                    reversed_volume(&volume)
                } else {
                    with_duplicated_slice(&volume, volume.n_slices() - 1)
                };
                mutated.volumes.insert(plane, new);
            }
            let (_, fused2) =
                mskview_core::fusion::predict_exam(&models, &standardizers, &fusion, &mutated)
                    .map_err(|e| e.to_string())?;
            ensure!(
                fused == fused2,
                "exam {}: fused prediction changed {fused} -> {fused2}",
                exam.exam_id
            );
        }
        Ok(())
    });
}

#[test]
fn criterion_06_gradient_check() {
    check(6, "finite-difference gradient check", || {
        let mut rng = ChaCha8Rng::seed_from_u64(606);
        let mut model = build_view_model(
            BackboneSpec {
                family: Family::Tiny,
                init: Init::Random { seed: 6 },
            },
            Plane::Sagittal,
            Task::Acl,
        )
        .map_err(|e| e.to_string())?;
        let volume = mskview_core::exam_store::SliceStack {
            plane: Plane::Sagittal,
            data: ndarray::Array3::from_shape_fn((3, 24, 24), |_| rng.gen_range(5u8..250)),
        };
        let standardizer = fit_standardizer(
            &[volume.clone()],
            Plane::Sagittal,
            &default_percentiles(),
            "grad",
        )
        .map_err(|e| e.to_string())?;
        let standardized = apply_standardizer(&standardizer, &volume).map_err(|e| e.to_string())?;
        let prepared =
            prepare_stack(&standardized, standardizer.standard_range()).map_err(|e| e.to_string())?;

        let pos_weight = 1.3;
        let (_, grads, head_grad) = exam_gradients(&model, &prepared, true, pos_weight);

        // flat parameter address space: (tensor kind, tensor idx, flat idx)
        enum Slot {
            ConvWeight(usize, usize),
            ConvBias(usize, usize),
            HeadWeight(usize),
            HeadBias,
        }
        let mut slots = Vec::new();
        for (ci, g) in grads.convs.iter().enumerate() {
            slots.extend((0..g.weight.len()).map(|i| Slot::ConvWeight(ci, i)));
            slots.extend((0..g.bias.len()).map(|i| Slot::ConvBias(ci, i)));
        }
        slots.extend((0..head_grad.weight.len()).map(Slot::HeadWeight));
        slots.push(Slot::HeadBias);

        let h = 1e-6;
        for probe in 0..50 {
            let slot = &slots[rng.gen_range(0..slots.len())];
            let analytic = match slot {
                Slot::ConvWeight(ci, i) => grads.convs[*ci].weight.as_slice().unwrap()[*i],
                Slot::ConvBias(ci, i) => grads.convs[*ci].bias[*i],
                Slot::HeadWeight(i) => head_grad.weight[*i],
                Slot::HeadBias => head_grad.bias,
            };
            let eval_at = |delta: f64, model: &mut ViewModel| -> f64 {
                match slot {
                    Slot::ConvWeight(ci, i) => {
                        let mut convs = model.encoder.convs_mut();
                        convs[*ci].weight.as_slice_mut().unwrap()[*i] += delta;
                    }
                    Slot::ConvBias(ci, i) => {
                        let mut convs = model.encoder.convs_mut();
                        convs[*ci].bias[*i] += delta;
                    }
                    Slot::HeadWeight(i) => model.head.weight[*i] += delta,
                    Slot::HeadBias => model.head.bias += delta,
                }
                exam_loss(model, &prepared, true, pos_weight)
            };
            let up = eval_at(h, &mut model);
            let down = eval_at(-2.0 * h, &mut model);
            eval_at(h, &mut model); // restore
            let numeric = (up - down) / (2.0 * h);
            let scale = numeric.abs().max(analytic.abs()).max(1e-4);
            ensure!(
                (analytic - numeric).abs() / scale <= 1e-3,
                "probe {probe}: analytic {analytic} vs numeric {numeric}"
            );
        }
        Ok(())
    });
}

#[test]
fn criterion_07_overfit_capacity() {
    check(7, "overfit capacity on strong lesions", || {
        let start = Instant::now();
        for task in Task::ALL {
            // one dataset per task, with only that task's finding present, so
            // every exam's label corresponds to visible signal on the plane
            let mut prevalence = PerTask {
                abnormal: 0.0,
                acl: 0.0,
                meniscus: 0.0,
            };
            *prevalence.get_mut(task) = 0.5;
            let dir = tempfile::tempdir().unwrap();
            let config = SynthConfig {
                n_train: 8,
                n_test: 2,
                image_size: 32,
                slices_range: (4, 6),
                lesion_contrast: PerTask {
                    abnormal: 150,
                    acl: 150,
                    meniscus: 150,
                },
                prevalence,
                seed: 707,
                ..SynthConfig::default()
            };
            generate_synthetic(&config, dir.path()).map_err(|e| e.to_string())?;
            let exams = load_split_exams(dir.path(), Split::Train).map_err(|e| e.to_string())?;
            let labels = load_labels(dir.path(), Split::Train).map_err(|e| e.to_string())?;

            for plane in config.visibility.get(task).clone() {
                let volumes: Vec<_> = exams.iter().map(|e| e.volume(plane).clone()).collect();
                let standardizer =
                    fit_standardizer(&volumes, plane, &default_percentiles(), "overfit")
                        .map_err(|e| e.to_string())?;
                let train_set =
                    labeled_volumes(&exams, &labels, plane, task).map_err(|e| e.to_string())?;
                let model = build_view_model(
                    BackboneSpec {
                        family: Family::Tiny,
                        init: Init::Random { seed: 7 },
                    },
                    plane,
                    task,
                )
                .map_err(|e| e.to_string())?;
                let train_config = TrainConfig {
                    learning_rate: 1e-2,
                    weight_decay: 0.0,
                    max_epochs: 50,
                    early_stop_patience: 50,
                    batch_size: 1,
                    pos_weight_mode: PosWeightMode::None,
                    augment: AugmentConfig {
                        enabled: false,
                        ..AugmentConfig::default()
                    },
                    monitor: Monitor::ValidLoss,
                    seed: 7,
                };
                let (trained, _) =
                    train_view_model(model, &train_set, &train_set, &standardizer, &train_config)
                        .map_err(|e| e.to_string())?;
                let scores: Vec<f64> = train_set
                    .iter()
                    .map(|s| predict_view(&trained, &s.volume, &standardizer))
                    .collect::<Result<_, _>>()
                    .map_err(|e| e.to_string())?;
                let set = ScoredSet::new(scores, train_set.iter().map(|s| s.label).collect())
                    .map_err(|e| e.to_string())?;
                let auc = roc_auc(&set).map_err(|e| e.to_string())?;
                ensure!(
                    auc == 1.0,
                    "{task}/{plane}: train AUC {auc} after 50 epochs"
                );
            }
        }
        ensure!(
            start.elapsed() < Duration::from_secs(600),
            "took {:?}, budget 10 min",
            start.elapsed()
        );
        Ok(())
    });
}

#[test]
fn criterion_08_multiview_outperforms_single_view() {
    check(8, "multiview vs single-view over 3 seeds", || {
        let start = Instant::now();
        let mut multi = 0.0;
        let mut single = 0.0;
        for seed in [1u64, 2, 3] {
            let dir = tempfile::tempdir().unwrap();
            let outcome: ReproOutcome = repro::repro_synthetic(seed, Family::Tiny, dir.path())
                .map_err(|e| e.to_string())?;
            multi += outcome.multiview_average_auc;
            single += outcome.best_single_view_average_auc;
        }
        multi /= 3.0;
        single /= 3.0;
        ensure!(
            multi >= single - 0.05,
            "mean multiview Average AUC {multi:.4} vs best single-view {single:.4}"
        );
        ensure!(
            start.elapsed() < Duration::from_secs(45 * 60),
            "took {:?}, budget 45 min",
            start.elapsed()
        );
        Ok(())
    });
}

#[test]
fn criterion_09_augmentation_statistics() {
    check(9, "augmentation sampling statistics", || {
        let config = AugmentConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(909);
        let n = 10_000;
        let mut flips = 0usize;
        let mut angle_sum = 0.0;
        for _ in 0..n {
            let p = sample_augmentation(&config, &mut rng);
            if p.flip {
                flips += 1;
            }
            ensure!(
                (-25.0..=25.0).contains(&p.angle_deg),
                "angle {} out of range",
                p.angle_deg
            );
            angle_sum += p.angle_deg;
            for shift in [p.shift_x_px, p.shift_y_px] {
                ensure!((-25..=25).contains(&shift), "shift {shift} out of range");
            }
        }
        let flip_rate = flips as f64 / n as f64;
        ensure!(
            (flip_rate - 0.5).abs() <= 0.02,
            "flip rate {flip_rate} outside 0.5 +/- 0.02"
        );
        let angle_mean = angle_sum / n as f64;
        ensure!(
            angle_mean.abs() <= 0.5,
            "angle mean {angle_mean} outside +/- 0.5 deg"
        );
        Ok(())
    });
}

fn collect_files(root: &Path, base: &Path, out: &mut Vec<std::path::PathBuf>) {
    for entry in std::fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(&path, base, out);
        } else {
            out.push(path.strip_prefix(base).unwrap().to_path_buf());
        }
    }
}

fn assert_trees_identical(a: &Path, b: &Path) -> Result<(), String> {
    let mut files_a = Vec::new();
    let mut files_b = Vec::new();
    collect_files(a, a, &mut files_a);
    collect_files(b, b, &mut files_b);
    files_a.sort();
    files_b.sort();
    ensure!(
        files_a == files_b,
        "file sets differ: {} vs {} files",
        files_a.len(),
        files_b.len()
    );
    for rel in &files_a {
        let bytes_a = std::fs::read(a.join(rel)).map_err(|e| e.to_string())?;
        let bytes_b = std::fs::read(b.join(rel)).map_err(|e| e.to_string())?;
        ensure!(
            bytes_a == bytes_b,
            "{} differs between reruns",
            rel.display()
        );
    }
    Ok(())
}

#[test]
fn criterion_10_cli_determinism() {
    check(10, "byte-identical reruns", || {
        // data generation through the CLI surface
        let dir = tempfile::tempdir().unwrap();
        let synth_a = dir.path().join("synth-a");
        let synth_b = dir.path().join("synth-b");
        for out in [&synth_a, &synth_b] {
            let code = mskview_cli::run_command([
                "mskview",
                "synth",
                "--seed",
                "42",
                "--out",
                out.to_str().unwrap(),
            ]);
            ensure!(code == 0, "synth exited with {code}");
        }
        assert_trees_identical(&synth_a, &synth_b)?;

        // the full pipeline driver
        let repro_a = dir.path().join("repro-a");
        let repro_b = dir.path().join("repro-b");
        for out in [&repro_a, &repro_b] {
            repro::repro_synthetic(11, Family::Tiny, out).map_err(|e| e.to_string())?;
        }
        assert_trees_identical(&repro_a, &repro_b)?;
        Ok(())
    });
}
