//! Operator-facing command surface: synth, stats, preprocess-fit, train,
//! fuse, predict, evaluate, and the end-to-end repro-synthetic driver.

pub mod preds;
pub mod repro;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use mskview_core::exam_store::{
    dataset_stats, generate_synthetic, load_labels, load_split_exams, DatasetStats, SynthConfig,
};
use mskview_core::fusion::{fit_fusion, load_fusion, predict_exam, save_fusion, ViewProbTriple};
use mskview_core::io_util::config_hash;
use mskview_core::metrics::{render_report, ReportFormat};
use mskview_core::nn::backbones::Family;
use mskview_core::preprocess::{default_percentiles, fit_standardizer, StandardizerModel};
use mskview_core::trainer::{labeled_volumes, train_view_model, TrainConfig};
use mskview_core::types::{PerPlane, Plane, Split, Task};
use mskview_core::view_net::{
    build_view_model, load_checkpoint, save_checkpoint, BackboneSpec, Init,
    CHECKPOINT_FORMAT_VERSION,
};
use preds::{read_label_csv, read_meta_hash, read_preds, write_preds, CliError, PredRow};
use std::collections::BTreeMap;
use std::error::Error;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

fn version_string() -> String {
    format!(
        "{} (checkpoint-format {}, standardizer-format {}, fusion-format {})",
        env!("CARGO_PKG_VERSION"),
        CHECKPOINT_FORMAT_VERSION,
        mskview_core::preprocess::STANDARDIZER_FORMAT_VERSION,
        mskview_core::fusion::FUSION_FORMAT_VERSION,
    )
}

#[derive(Parser)]
#[command(name = "mskview", version = version_string(), about = "Multi-view knee-MRI classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic MRNet-layout dataset
    Synth {
        /// JSON file of generator settings; defaults are used when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed from the config file
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print label and slice-count statistics of a dataset
    Stats {
        #[arg(long)]
        data: PathBuf,
    },
    /// Fit a per-plane intensity standardizer on the train split
    PreprocessFit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        plane: Plane,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one (plane, task) view model
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        plane: Plane,
        #[arg(long)]
        task: Task,
        /// Backbone family: tiny, alexnet, resnet18, googlenet
        #[arg(long, default_value = "tiny")]
        arch: Family,
        /// JSON file mirroring the training configuration; defaults when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Initialize the encoder from the pretrained-weights cache
        #[arg(long)]
        pretrained: bool,
        /// Checkpoint directory to write
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the fusion logistic regression from per-view prediction CSVs
    Fuse {
        /// Prediction CSV over the fusion training split
        #[arg(long)]
        train_preds: PathBuf,
        /// Headerless exam_id,label CSV for the same task and split
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = repro::FUSION_L2_LAMBDA)]
        l2_lambda: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict one task over a dataset split with three checkpoints + fusion
    Predict {
        /// Directory holding axial/, coronal/, sagittal/ checkpoint dirs
        #[arg(long)]
        ckpts: PathBuf,
        #[arg(long)]
        fusion: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "valid")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the multi-view vs single-view comparison report
    Evaluate {
        /// One prediction CSV per task
        #[arg(long, required = true, num_args = 1..)]
        preds: Vec<PathBuf>,
        /// Dataset root holding the split's label CSVs
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value = "valid")]
        split: Split,
        #[arg(long, default_value = "model")]
        model_name: String,
        #[arg(long, default_value = "markdown")]
        format: String,
        /// Emit per-plane single-view rows instead of only the best plane
        #[arg(long)]
        full: bool,
        /// Accept inputs whose producing config hashes differ
        #[arg(long)]
        allow_mixed: bool,
        #[arg(long)]
        out_report: PathBuf,
    },
    /// End-to-end synthetic reproduction: data, training, fusion, report
    ReproSynthetic {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "tiny")]
        arch: Family,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parse and run one invocation. Returns the process exit code: 0 success,
/// 1 domain error (printed to stderr), 2 usage error.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Box<dyn Error>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    Ok(serde_json::from_str(&text)
        .map_err(|e| format!("malformed JSON in {}: {e}", path.display()))?)
}

fn split_stats(data: &Path, split: Split) -> Result<DatasetStats, Box<dyn Error>> {
    let labels = load_labels(data, split)?;
    let exams = load_split_exams(data, split)?;
    Ok(dataset_stats(&labels, exams.iter()))
}

fn execute(command: Command) -> Result<(), Box<dyn Error>> {
    match command {
        Command::Synth { config, out, seed } => {
            let mut synth_config = match config {
                Some(path) => read_json::<SynthConfig>(&path)?,
                None => SynthConfig::default(),
            };
            if let Some(seed) = seed {
                synth_config.seed = seed;
            }
            let stats = generate_synthetic(&synth_config, &out)?;
            mskview_core::io_util::write_json(&out.join("synth-config.json"), &synth_config)?;
            preds::write_meta(&out.join("synth-config.json"), &config_hash(&synth_config))?;
            println!("wrote dataset {}", out.display());
            println!("{}", serde_json::to_string_pretty(&stats)?);
            Ok(())
        }
        Command::Stats { data } => {
            let summary = serde_json::json!({
                "train": split_stats(&data, Split::Train)?,
                "valid": split_stats(&data, Split::Valid)?,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
        Command::PreprocessFit { data, plane, out } => {
            let exams = load_split_exams(&data, Split::Train)?;
            let volumes: Vec<_> = exams.iter().map(|e| e.volume(plane).clone()).collect();
            let model = fit_standardizer(
                &volumes,
                plane,
                &default_percentiles(),
                &data.display().to_string(),
            )?;
            model.save(&out)?;
            preds::write_meta(&out, &config_hash(&model))?;
            println!("wrote standardizer {}", out.display());
            Ok(())
        }
        Command::Train {
            data,
            plane,
            task,
            arch,
            config,
            pretrained,
            out,
        } => {
            let train_config = match config {
                Some(path) => read_json::<TrainConfig>(&path)?,
                None => TrainConfig::default(),
            };
            train_config.validate()?;
            let init = if pretrained {
                Init::PretrainedImagenet
            } else {
                Init::Random {
                    seed: train_config.seed,
                }
            };
            let run_hash = config_hash(&(&train_config, arch, plane, task, pretrained));

            let train_exams = load_split_exams(&data, Split::Train)?;
            let train_labels = load_labels(&data, Split::Train)?;
            let valid_exams = load_split_exams(&data, Split::Valid)?;
            let valid_labels = load_labels(&data, Split::Valid)?;

            let volumes: Vec<_> = train_exams.iter().map(|e| e.volume(plane).clone()).collect();
            let standardizer = fit_standardizer(
                &volumes,
                plane,
                &default_percentiles(),
                &data.display().to_string(),
            )?;

            let model = build_view_model(BackboneSpec { family: arch, init }, plane, task)?;
            let train_set = labeled_volumes(&train_exams, &train_labels, plane, task)?;
            let valid_set = labeled_volumes(&valid_exams, &valid_labels, plane, task)?;
            let (mut model, history) =
                train_view_model(model, &train_set, &valid_set, &standardizer, &train_config)?;
            model.provenance.config_hash = Some(run_hash);

            save_checkpoint(&model, &out)?;
            standardizer.save(&out.join("standardizer.json"))?;
            history.write_csv(&out.join("history.csv"))?;
            println!("wrote checkpoint {}", out.display());
            println!(
                "best epoch {} of {} (stopped_early={})",
                history.best_epoch,
                history.records.len(),
                history.stopped_early
            );
            Ok(())
        }
        Command::Fuse {
            train_preds,
            labels,
            l2_lambda,
            out,
        } => {
            let rows = read_preds(&train_preds)?;
            let task = rows[0].task;
            if let Some(other) = rows.iter().find(|r| r.task != task) {
                return Err(CliError::MixedTasks {
                    path: train_preds.display().to_string(),
                    a: task,
                    b: other.task,
                }
                .into());
            }
            let label_map = read_label_csv(&labels)?;
            let mut features = Vec::new();
            let mut targets = Vec::new();
            for row in &rows {
                let label = label_map
                    .get(&row.exam_id)
                    .ok_or_else(|| CliError::MissingLabel {
                        exam_id: row.exam_id.clone(),
                        path: labels.display().to_string(),
                    })?;
                features.push(row.probs);
                targets.push(*label);
            }
            let model = fit_fusion(task, &features, &targets, l2_lambda)?;
            save_fusion(&model, &out)?;
            let hash = read_meta_hash(&train_preds)
                .unwrap_or_else(|| config_hash(&(&model.weights, model.bias)));
            preds::write_meta(&out, &hash)?;
            println!("wrote fusion model {}", out.display());
            println!(
                "weights axial={:.6} coronal={:.6} sagittal={:.6} bias={:.6}",
                model.weights[0], model.weights[1], model.weights[2], model.bias
            );
            Ok(())
        }
        Command::Predict {
            ckpts,
            fusion,
            data,
            split,
            out,
        } => {
            let fusion_model = load_fusion(&fusion)?;
            let mut models = Vec::new();
            let mut standardizers = Vec::new();
            for plane in Plane::ALL {
                let dir = ckpts.join(plane.as_str());
                let model = load_checkpoint(&dir)?;
                if model.plane != plane {
                    return Err(format!(
                        "PlaneMismatch: checkpoint at {} is for {}, expected {plane}",
                        dir.display(),
                        model.plane
                    )
                    .into());
                }
                standardizers.push(StandardizerModel::load(&dir.join("standardizer.json"))?);
                models.push(model);
            }
            let models = PerPlane {
                axial: models.remove(0),
                coronal: models.remove(0),
                sagittal: models.remove(0),
            };
            let standardizers = PerPlane {
                axial: standardizers.remove(0),
                coronal: standardizers.remove(0),
                sagittal: standardizers.remove(0),
            };
            let exams = load_split_exams(&data, split)?;
            let mut rows = Vec::new();
            for exam in &exams {
                let (probs, fused): (ViewProbTriple, f64) =
                    predict_exam(&models, &standardizers, &fusion_model, exam)?;
                rows.push(PredRow {
                    exam_id: exam.exam_id.clone(),
                    task: fusion_model.task,
                    probs,
                    fused: Some(fused),
                });
            }
            let hash = models
                .get(Plane::Axial)
                .provenance
                .config_hash
                .clone()
                .unwrap_or_else(|| config_hash(&(&fusion_model.weights, fusion_model.bias)));
            write_preds(&out, &rows, &hash)?;
            println!("wrote predictions {}", out.display());
            Ok(())
        }
        Command::Evaluate {
            preds,
            labels,
            split,
            model_name,
            format,
            full,
            allow_mixed,
            out_report,
        } => {
            let format = match format.as_str() {
                "markdown" => ReportFormat::Markdown,
                "csv" => ReportFormat::Csv,
                other => return Err(format!("unknown report format {other:?}").into()),
            };
            let mut hashes: Vec<String> = Vec::new();
            let mut by_task: BTreeMap<Task, Vec<PredRow>> = BTreeMap::new();
            for path in &preds {
                if let Some(hash) = read_meta_hash(path) {
                    if !hashes.contains(&hash) {
                        hashes.push(hash);
                    }
                }
                for row in read_preds(path)? {
                    by_task.entry(row.task).or_default().push(row);
                }
            }
            if hashes.len() > 1 && !allow_mixed {
                return Err(CliError::MixedConfigHashes { hashes }.into());
            }
            let label_map = load_labels(&labels, split)?;
            let (rows, _, _, _) = repro::build_report_rows(&model_name, &by_task, &label_map, full)?;
            let report = render_report(&rows, format)?;
            mskview_core::io_util::atomic_write(&out_report, report.as_bytes())?;
            println!("wrote report {}", out_report.display());
            print!("{report}");
            Ok(())
        }
        Command::ReproSynthetic { seed, arch, out } => {
            let outcome = repro::repro_synthetic(seed, arch, &out)?;
            println!(
                "multiview Average AUC {:.4}; best single view {} Average AUC {:.4}",
                outcome.multiview_average_auc,
                outcome.best_single_view_plane,
                outcome.best_single_view_average_auc
            );
            Ok(())
        }
    }
}
