//! Evaluation metrics and report rendering: AUC, sensitivity, specificity,
//! accuracy per task, macro averages, and the multi-view vs single-view
//! comparison table.

use crate::types::{Plane, Task};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("SingleClassSet: need at least one positive and one negative")]
    SingleClassSet,
    #[error("EmptySet: scores and labels must be non-empty")]
    EmptySet,
    #[error("LengthMismatch: {scores} scores vs {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("WrongRowSet: {0}")]
    WrongRowSet(String),
    #[error("InconsistentAverage: {model} {view_mode} {metric}: provided {provided:.6}, recomputed {recomputed:.6}")]
    InconsistentAverage {
        model: String,
        view_mode: String,
        metric: &'static str,
        provided: f64,
        recomputed: f64,
    },
}

/// Aligned prediction scores and binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self, MetricsError> {
        if scores.len() != labels.len() {
            return Err(MetricsError::LengthMismatch {
                scores: scores.len(),
                labels: labels.len(),
            });
        }
        if scores.is_empty() {
            return Err(MetricsError::EmptySet);
        }
        Ok(ScoredSet { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&l| l).count();
        (pos, self.labels.len() - pos)
    }
}

/// Mann-Whitney AUC with half credit for ties; equals the trapezoidal area
/// under the ROC curve. Pair counts are accumulated as exact integers.
pub fn roc_auc(set: &ScoredSet) -> Result<f64, MetricsError> {
    let (pos, neg) = set.class_counts();
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClassSet);
    }
    let mut pairs: Vec<(f64, bool)> = set
        .scores
        .iter()
        .copied()
        .zip(set.labels.iter().copied())
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("scores must not be NaN"));

    let mut concordant: u64 = 0; // positive strictly above a negative
    let mut tied: u64 = 0;
    let mut negs_below: u64 = 0;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        let mut group_pos: u64 = 0;
        let mut group_neg: u64 = 0;
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            if pairs[j].1 {
                group_pos += 1;
            } else {
                group_neg += 1;
            }
            j += 1;
        }
        concordant += group_pos * negs_below;
        tied += group_pos * group_neg;
        negs_below += group_neg;
        i = j;
    }
    Ok((concordant as f64 + 0.5 * tied as f64) / (pos as f64 * neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

/// Counts at a fixed threshold: predicted positive iff score >= threshold.
pub fn confusion_at_threshold(set: &ScoredSet, threshold: f64) -> Confusion {
    let mut c = Confusion {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (&score, &label) in set.scores.iter().zip(&set.labels) {
        match (score >= threshold, label) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryMetrics {
    pub auc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
}

/// AUC plus threshold metrics from the confusion counts.
pub fn summarize(set: &ScoredSet, threshold: f64) -> Result<SummaryMetrics, MetricsError> {
    let auc = roc_auc(set)?;
    let c = confusion_at_threshold(set, threshold);
    let n = set.len() as f64;
    Ok(SummaryMetrics {
        auc,
        sensitivity: c.tp as f64 / (c.tp + c.fn_) as f64,
        specificity: c.tn as f64 / (c.tn + c.fp) as f64,
        accuracy: (c.tp + c.tn) as f64 / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViewMode {
    MultiView,
    SingleView(Plane),
}

impl fmt::Display for ViewMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViewMode::MultiView => f.write_str("multiview"),
            ViewMode::SingleView(plane) => write!(f, "single view ({plane})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassName {
    Class(Task),
    Average,
}

impl fmt::Display for ClassName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassName::Class(task) => f.write_str(task.display_name()),
            ClassName::Average => f.write_str("Average"),
        }
    }
}

/// One line of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model_name: String,
    pub view_mode: ViewMode,
    pub class_name: ClassName,
    pub auc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
}

impl MetricsRow {
    pub fn from_summary(
        model_name: impl Into<String>,
        view_mode: ViewMode,
        class_name: ClassName,
        summary: SummaryMetrics,
    ) -> Self {
        MetricsRow {
            model_name: model_name.into(),
            view_mode,
            class_name,
            auc: summary.auc,
            sensitivity: summary.sensitivity,
            specificity: summary.specificity,
            accuracy: summary.accuracy,
        }
    }
}

/// Unweighted arithmetic mean of the three class rows of one model/view-mode.
pub fn macro_average(rows: &[MetricsRow]) -> Result<MetricsRow, MetricsError> {
    if rows.len() != 3 {
        return Err(MetricsError::WrongRowSet(format!(
            "expected exactly 3 class rows, got {}",
            rows.len()
        )));
    }
    let model = &rows[0].model_name;
    let mode = rows[0].view_mode;
    let mut seen = Vec::new();
    for row in rows {
        if row.model_name != *model || row.view_mode != mode {
            return Err(MetricsError::WrongRowSet(
                "rows must share one model and view mode".into(),
            ));
        }
        match row.class_name {
            ClassName::Class(task) if !seen.contains(&task) => seen.push(task),
            ClassName::Class(task) => {
                return Err(MetricsError::WrongRowSet(format!("duplicate class {task}")))
            }
            ClassName::Average => {
                return Err(MetricsError::WrongRowSet("Average row among inputs".into()))
            }
        }
    }
    let mean = |f: fn(&MetricsRow) -> f64| rows.iter().map(f).sum::<f64>() / 3.0;
    Ok(MetricsRow {
        model_name: model.clone(),
        view_mode: mode,
        class_name: ClassName::Average,
        auc: mean(|r| r.auc),
        sensitivity: mean(|r| r.sensitivity),
        specificity: mean(|r| r.specificity),
        accuracy: mean(|r| r.accuracy),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

const CLASS_ORDER: [Task; 3] = [Task::Abnormal, Task::Acl, Task::Meniscus];
const AVERAGE_TOLERANCE: f64 = 5e-5;

fn view_mode_rank(mode: ViewMode) -> usize {
    match mode {
        ViewMode::MultiView => 0,
        ViewMode::SingleView(Plane::Axial) => 1,
        ViewMode::SingleView(Plane::Coronal) => 2,
        ViewMode::SingleView(Plane::Sagittal) => 3,
    }
}

fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

/// Render rows as a deterministic table. Average rows are recomputed from
/// their class rows and must agree within 5e-5; groups that have class rows
/// but no Average row get one appended.
pub fn render_report(rows: &[MetricsRow], format: ReportFormat) -> Result<String, MetricsError> {
    // group by (model, view_mode), models in first-appearance order
    let mut model_order: Vec<String> = Vec::new();
    for row in rows {
        if !model_order.contains(&row.model_name) {
            model_order.push(row.model_name.clone());
        }
    }
    let mut ordered: Vec<MetricsRow> = Vec::new();
    for model in &model_order {
        let mut modes: Vec<ViewMode> = Vec::new();
        for row in rows.iter().filter(|r| &r.model_name == model) {
            if !modes.contains(&row.view_mode) {
                modes.push(row.view_mode);
            }
        }
        modes.sort_by_key(|&m| view_mode_rank(m));
        for mode in modes {
            let group: Vec<&MetricsRow> = rows
                .iter()
                .filter(|r| &r.model_name == model && r.view_mode == mode)
                .collect();
            let mut class_rows: Vec<MetricsRow> = Vec::new();
            for task in CLASS_ORDER {
                if let Some(row) = group
                    .iter()
                    .find(|r| r.class_name == ClassName::Class(task))
                {
                    class_rows.push((*row).clone());
                }
            }
            let provided_avg = group.iter().find(|r| r.class_name == ClassName::Average);
            let average = if class_rows.len() == 3 {
                let recomputed = macro_average(&class_rows)?;
                if let Some(provided) = provided_avg {
                    for (metric, p, r) in [
                        ("auc", provided.auc, recomputed.auc),
                        ("sensitivity", provided.sensitivity, recomputed.sensitivity),
                        ("specificity", provided.specificity, recomputed.specificity),
                        ("accuracy", provided.accuracy, recomputed.accuracy),
                    ] {
                        if (p - r).abs() > AVERAGE_TOLERANCE {
                            return Err(MetricsError::InconsistentAverage {
                                model: model.clone(),
                                view_mode: mode.to_string(),
                                metric,
                                provided: p,
                                recomputed: r,
                            });
                        }
                    }
                }
                Some(recomputed)
            } else {
                provided_avg.map(|r| (*r).clone())
            };
            ordered.extend(class_rows);
            ordered.extend(average);
        }
    }

    let mut out = String::new();
    match format {
        ReportFormat::Markdown => {
            out.push_str("| Deep Learning Model | Class | AUC | Sensitivity | Specificity | Accuracy |\n");
            out.push_str("|---|---|---|---|---|---|\n");
            for row in &ordered {
                out.push_str(&format!(
                    "| {}-{} | {} | {} | {} | {} | {} |\n",
                    row.model_name,
                    row.view_mode,
                    row.class_name,
                    fmt4(row.auc),
                    fmt4(row.sensitivity),
                    fmt4(row.specificity),
                    fmt4(row.accuracy)
                ));
            }
        }
        ReportFormat::Csv => {
            out.push_str("model,view_mode,class,auc,sensitivity,specificity,accuracy\n");
            for row in &ordered {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    row.model_name,
                    row.view_mode,
                    row.class_name,
                    fmt4(row.auc),
                    fmt4(row.sensitivity),
                    fmt4(row.specificity),
                    fmt4(row.accuracy)
                ));
            }
        }
    }
    Ok(out)
}


#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(scores: &[f64], labels: &[u8]) -> ScoredSet {
        ScoredSet::new(scores.to_vec(), labels.iter().map(|&l| l == 1).collect()).unwrap()
    }

    #[test]
    fn perfect_ranking_has_auc_one() {
        let s = set(&[0.9, 0.8, 0.3, 0.1], &[1, 1, 0, 0]);
        assert_eq!(roc_auc(&s).unwrap(), 1.0);
    }

    #[test]
    fn partial_ranking_matches_pair_count() {
        // 4 pos/neg pairs, 3 concordant
        let s = set(&[0.2, 0.4, 0.6, 0.8], &[0, 1, 0, 1]);
        assert_eq!(roc_auc(&s).unwrap(), 0.75);
    }

    #[test]
    fn all_ties_give_half() {
        let s = set(&[0.5, 0.5, 0.5, 0.5], &[1, 0, 1, 0]);
        assert_eq!(roc_auc(&s).unwrap(), 0.5);
    }

    #[test]
    fn single_class_rejected() {
        let s = set(&[0.1, 0.9], &[1, 1]);
        assert!(matches!(roc_auc(&s), Err(MetricsError::SingleClassSet)));
    }

    #[test]
    fn threshold_zero_predicts_all_positive() {
        let s = set(&[0.1, 0.9, 0.4], &[0, 1, 0]);
        let c = confusion_at_threshold(&s, 0.0);
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (1, 2, 0, 0));
    }

    fn constructed_confusion_set() -> ScoredSet {
        // tp=93, fn=2, tn=10, fp=15 at threshold 0.5
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for i in 0..93 {
            scores.push(0.6 + (i % 30) as f64 * 0.01);
            labels.push(true);
        }
        for _ in 0..2 {
            scores.push(0.3);
            labels.push(true);
        }
        for _ in 0..10 {
            scores.push(0.2);
            labels.push(false);
        }
        for i in 0..15 {
            scores.push(0.55 + (i % 10) as f64 * 0.01);
            labels.push(false);
        }
        ScoredSet::new(scores, labels).unwrap()
    }

    #[test]
    fn constructed_confusion_round_trips() {
        let c = confusion_at_threshold(&constructed_confusion_set(), 0.5);
        assert_eq!((c.tp, c.fn_, c.tn, c.fp), (93, 2, 10, 15));
    }

    #[test]
    fn summarize_reconciles_constructed_row() {
        let m = summarize(&constructed_confusion_set(), 0.5).unwrap();
        assert!((m.sensitivity - 0.9789).abs() < 5e-5, "sens {}", m.sensitivity);
        assert!((m.specificity - 0.4000).abs() < 5e-5, "spec {}", m.specificity);
        assert!((m.accuracy - 0.8583).abs() < 5e-5, "acc {}", m.accuracy);
    }

    #[test]
    fn perfectly_separated_set_is_all_ones() {
        let s = set(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]);
        let m = summarize(&s, 0.5).unwrap();
        assert_eq!((m.auc, m.sensitivity, m.specificity, m.accuracy), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn complement_swaps_sensitivity_and_specificity() {
        let s = set(&[0.9, 0.3, 0.6, 0.2, 0.7], &[1, 0, 1, 0, 0]);
        let m = summarize(&s, 0.5).unwrap();
        let flipped = ScoredSet::new(
            s.scores().iter().map(|v| 1.0 - v).collect(),
            s.labels().iter().map(|l| !l).collect(),
        )
        .unwrap();
        // mirror the threshold: score >= 0.5 becomes 1-score > 0.5; nudge to
        // keep the boundary on the same side
        let m2 = summarize(&flipped, 0.5 + 1e-12).unwrap();
        assert!((m.sensitivity - m2.specificity).abs() < 1e-12);
        assert!((m.specificity - m2.sensitivity).abs() < 1e-12);
    }

    fn table1_rows(model: &str, aucs: [f64; 3]) -> Vec<MetricsRow> {
        CLASS_ORDER
            .iter()
            .zip(aucs)
            .map(|(&task, auc)| MetricsRow {
                model_name: model.to_string(),
                view_mode: ViewMode::MultiView,
                class_name: ClassName::Class(task),
                auc,
                sensitivity: 0.5,
                specificity: 0.5,
                accuracy: 0.5,
            })
            .collect()
    }

    #[test]
    fn macro_average_reproduces_published_multiview_aucs() {
        for (model, aucs, expected) in [
            ("AlexNet", [0.8914, 0.9388, 0.8060], 0.8787),
            ("ResNet-18", [0.8114, 0.9540, 0.8083], 0.8579),
            ("GoogLeNet", [0.9091, 0.8906, 0.7791], 0.8596),
        ] {
            let avg = macro_average(&table1_rows(model, aucs)).unwrap();
            assert!(
                (avg.auc - expected).abs() < 5e-5,
                "{model}: {} vs {expected}",
                avg.auc
            );
        }
    }

    #[test]
    fn macro_average_is_permutation_invariant() {
        let mut rows = table1_rows("m", [0.1, 0.5, 0.9]);
        let a = macro_average(&rows).unwrap();
        rows.rotate_left(1);
        let b = macro_average(&rows).unwrap();
        assert_eq!(a.auc, b.auc);
    }

    #[test]
    fn macro_average_rejects_wrong_row_sets() {
        let rows = table1_rows("m", [0.1, 0.5, 0.9]);
        assert!(matches!(
            macro_average(&rows[..2]),
            Err(MetricsError::WrongRowSet(_))
        ));
        let mut dup = rows.clone();
        dup[1].class_name = ClassName::Class(Task::Abnormal);
        assert!(matches!(macro_average(&dup), Err(MetricsError::WrongRowSet(_))));
    }

    fn alexnet_table1_rows() -> Vec<MetricsRow> {
        let data = [
            (Task::Abnormal, 0.8914, 0.9789, 0.4000, 0.8583),
            (Task::Acl, 0.9388, 0.6852, 0.9545, 0.8333),
            (Task::Meniscus, 0.8060, 0.6923, 0.8088, 0.7583),
        ];
        data.iter()
            .map(|&(task, auc, sens, spec, acc)| MetricsRow {
                model_name: "AlexNet".to_string(),
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
    fn report_average_line_matches_published_numbers() {
        let report = render_report(&alexnet_table1_rows(), ReportFormat::Markdown).unwrap();
        assert!(
            report.contains("| AlexNet-multiview | Average | 0.8787 | 0.7855 | 0.7211 | 0.8166 |"),
            "report was:\n{report}"
        );
    }

    #[test]
    fn empty_report_is_header_only() {
        let report = render_report(&[], ReportFormat::Csv).unwrap();
        assert_eq!(report, "model,view_mode,class,auc,sensitivity,specificity,accuracy\n");
    }

    #[test]
    fn tampered_average_detected() {
        let mut rows = alexnet_table1_rows();
        let mut avg = macro_average(&rows).unwrap();
        avg.auc += 0.01;
        rows.push(avg);
        assert!(matches!(
            render_report(&rows, ReportFormat::Markdown),
            Err(MetricsError::InconsistentAverage { .. })
        ));
    }

    #[test]
    fn accuracy_identity_holds() {
        let s = set(&[0.9, 0.3, 0.6, 0.2, 0.7, 0.8], &[1, 0, 1, 0, 0, 1]);
        let m = summarize(&s, 0.5).unwrap();
        let (p, n) = (3.0, 3.0);
        let expected = (m.sensitivity * p + m.specificity * n) / (p + n);
        assert!((m.accuracy - expected).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn auc_matches_brute_force(
            values in proptest::collection::vec((0u8..=10, proptest::bool::ANY), 2..50)
        ) {
            let scores: Vec<f64> = values.iter().map(|(s, _)| *s as f64 / 10.0).collect();
            let labels: Vec<bool> = values.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let s = ScoredSet::new(scores, labels).unwrap();
            let fast = roc_auc(&s).unwrap();
            let brute = oracle::pairwise_auc(&s);
            prop_assert!((fast - brute).abs() < 1e-12);
        }

        #[test]
        fn auc_complement_identity(
            values in proptest::collection::vec((0u8..=10, proptest::bool::ANY), 2..50)
        ) {
            let scores: Vec<f64> = values.iter().map(|(s, _)| *s as f64 / 10.0).collect();
            let labels: Vec<bool> = values.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let s = ScoredSet::new(scores.clone(), labels.clone()).unwrap();
            let flipped = ScoredSet::new(scores, labels.iter().map(|l| !l).collect()).unwrap();
            prop_assert!((roc_auc(&s).unwrap() + roc_auc(&flipped).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn auc_invariant_under_increasing_transforms(
            values in proptest::collection::vec((0u8..=20, proptest::bool::ANY), 2..40)
        ) {
            let scores: Vec<f64> = values.iter().map(|(s, _)| *s as f64 / 20.0).collect();
            let labels: Vec<bool> = values.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let base = roc_auc(&ScoredSet::new(scores.clone(), labels.clone()).unwrap()).unwrap();
            let exp = roc_auc(&ScoredSet::new(
                scores.iter().map(|v| v.exp()).collect(),
                labels.clone(),
            ).unwrap()).unwrap();
            let affine = roc_auc(&ScoredSet::new(
                scores.iter().map(|v| 3.0 * v + 11.0).collect(),
                labels,
            ).unwrap()).unwrap();
            prop_assert_eq!(base, exp);
            prop_assert_eq!(base, affine);
        }
    }
}
