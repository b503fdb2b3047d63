//! Stratified cross-validation, F-measure, ROC area and confusion matrices.
//!
//! Metrics are computed on predictions pooled over all folds: one confusion
//! matrix and one score list for the whole dataset. ROC area is one class
//! against the rest, using the classifier's per-class scores.

use std::collections::BTreeMap;
use std::fmt::{self, Display, Write as _};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{KnnModel, Prediction, Standardizer, SvmModel, SvmParams};
use crate::error::{Error, Result};
use crate::trace::ActivityClass;
use crate::Point;

/// Assigns each item to a fold so that fold sizes differ by at most one
/// and each label's members are spread as evenly as possible.
///
/// Members of each label (in label order) are shuffled with `seed` and
/// dealt round-robin, continuing the deal across labels.
pub fn stratified_folds<L: Ord + Copy>(labels: &[L], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::InvalidArgument(format!("folds must be at least 2, got {folds}")));
    }
    if folds > labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{folds} folds exceed the dataset size ({})",
            labels.len()
        )));
    }
    let mut by_label: BTreeMap<L, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_label.entry(*l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.len()];
    let mut deal = 0usize;
    for members in by_label.values_mut() {
        for i in (1..members.len()).rev() {
            members.swap(i, rng.gen_range(0..=i));
        }
        for &m in members.iter() {
            assignment[m] = deal % folds;
            deal += 1;
        }
    }
    Ok(assignment)
}

/// Counts indexed by (row key, true class). Rows are predicted classes or
/// cluster ids; columns are always the five activity classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix<R: Ord> {
    rows: BTreeMap<R, [u64; ActivityClass::COUNT]>,
}

impl<R: Ord + Copy + Display> ConfusionMatrix<R> {
    pub fn new() -> Self {
        ConfusionMatrix {
            rows: BTreeMap::new(),
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (R, ActivityClass)>) -> Self {
        let mut m = Self::new();
        for (r, c) in pairs {
            m.add(r, c);
        }
        m
    }

    pub fn add(&mut self, row: R, truth: ActivityClass) {
        self.rows.entry(row).or_insert([0; ActivityClass::COUNT])[truth.index()] += 1;
    }

    pub fn get(&self, row: R, truth: ActivityClass) -> u64 {
        self.rows.get(&row).map_or(0, |r| r[truth.index()])
    }

    pub fn rows(&self) -> impl Iterator<Item = (R, &[u64; ActivityClass::COUNT])> {
        self.rows.iter().map(|(r, c)| (*r, c))
    }

    pub fn row_total(&self, row: R) -> u64 {
        self.rows.get(&row).map_or(0, |r| r.iter().sum())
    }

    pub fn column_total(&self, truth: ActivityClass) -> u64 {
        self.rows.values().map(|r| r[truth.index()]).sum()
    }

    pub fn total(&self) -> u64 {
        self.rows.values().flat_map(|r| r.iter()).sum()
    }

    /// `row,<class columns...>` CSV with a header line.
    pub fn to_csv(&self, row_header: &str) -> String {
        let mut s = String::from(row_header);
        for c in ActivityClass::ALL {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for (r, counts) in &self.rows {
            let _ = write!(s, "{r}");
            for n in counts {
                let _ = write!(s, ",{n}");
            }
            s.push('\n');
        }
        s
    }
}

impl<R: Ord + Copy + Display> Default for ConfusionMatrix<R> {
    fn default() -> Self {
        Self::new()
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn precision(conf: &ConfusionMatrix<ActivityClass>, class: ActivityClass) -> f64 {
    ratio(conf.get(class, class), conf.row_total(class))
}

pub fn recall(conf: &ConfusionMatrix<ActivityClass>, class: ActivityClass) -> f64 {
    ratio(conf.get(class, class), conf.column_total(class))
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f_measure(conf: &ConfusionMatrix<ActivityClass>, class: ActivityClass) -> f64 {
    let (p, r) = (precision(conf, class), recall(conf, class));
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Area under the ROC curve via the Mann-Whitney rank statistic; tied
/// scores contribute one half.
pub fn roc_area(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores but {} truths",
            scores.len(),
            positive.len()
        )));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::AucUndefined {
            positives: n_pos,
            negatives: n_neg,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of (1-based, tie-averaged) ranks of the positives, kept doubled
    // so every term is an integer.
    let mut doubled_rank_sum: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let doubled_avg = (start + 1 + end) as u64;
        let pos_in_group = order[start..end].iter().filter(|&&i| positive[i]).count() as u64;
        doubled_rank_sum += doubled_avg * pos_in_group;
        start = end;
    }
    let np = n_pos as u64;
    let doubled_u = doubled_rank_sum - np * (np + 1);
    Ok(doubled_u as f64 / (2 * np * n_neg as u64) as f64)
}

/// One-vs-rest ROC area for `class` from per-item predictions.
pub fn class_roc_area(predictions: &[Prediction], truths: &[ActivityClass], class: ActivityClass) -> Result<f64> {
    let scores: Vec<f64> = predictions.iter().map(|p| p.score(class)).collect();
    let positive: Vec<bool> = truths.iter().map(|&t| t == class).collect();
    roc_area(&scores, &positive)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: ActivityClass,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    /// `None` when the class has no positives or no negatives.
    pub roc_area: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub classes: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f_measure: f64,
    /// Mean over classes whose ROC area is defined.
    pub macro_roc_area: Option<f64>,
    pub accuracy: f64,
}

impl ClassReport {
    pub fn metrics(&self, class: ActivityClass) -> &ClassMetrics {
        &self.classes[class.index()]
    }

    /// Builds the report from a confusion matrix and the pooled scores.
    pub fn from_predictions(
        conf: &ConfusionMatrix<ActivityClass>,
        predictions: &[Prediction],
        truths: &[ActivityClass],
    ) -> Self {
        let classes: Vec<ClassMetrics> = ActivityClass::ALL
            .into_iter()
            .map(|c| ClassMetrics {
                class: c,
                support: conf.column_total(c),
                precision: precision(conf, c),
                recall: recall(conf, c),
                f_measure: f_measure(conf, c),
                roc_area: class_roc_area(predictions, truths, c).ok(),
            })
            .collect();
        let n = classes.len() as f64;
        let mean = |f: fn(&ClassMetrics) -> f64| classes.iter().map(f).sum::<f64>() / n;
        let rocs: Vec<f64> = classes.iter().filter_map(|m| m.roc_area).collect();
        let correct: u64 = ActivityClass::ALL.iter().map(|&c| conf.get(c, c)).sum();
        ClassReport {
            macro_precision: mean(|m| m.precision),
            macro_recall: mean(|m| m.recall),
            macro_f_measure: mean(|m| m.f_measure),
            macro_roc_area: (!rocs.is_empty()).then(|| rocs.iter().sum::<f64>() / rocs.len() as f64),
            accuracy: ratio(correct, conf.total()),
            classes,
        }
    }
}

/// Which supervised classifier to cross-validate, with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClassifierSpec {
    Knn { k: usize },
    Svm { params: SvmParams },
}

impl ClassifierSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ClassifierSpec::Knn { .. } => "knn",
            ClassifierSpec::Svm { .. } => "svm",
        }
    }
}

/// A classifier trained on standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TrainedClassifier {
    Knn(KnnModel),
    Svm(SvmModel),
}

impl TrainedClassifier {
    pub fn fit(spec: &ClassifierSpec, points: &[Point], labels: &[ActivityClass]) -> Result<Self> {
        Ok(match spec {
            ClassifierSpec::Knn { k } => TrainedClassifier::Knn(KnnModel::fit(*k, points.to_vec(), labels.to_vec())?),
            ClassifierSpec::Svm { params } => TrainedClassifier::Svm(SvmModel::fit(points, labels, *params)?),
        })
    }

    pub fn predict(&self, point: &Point) -> Result<Prediction> {
        match self {
            TrainedClassifier::Knn(m) => m.predict(point),
            TrainedClassifier::Svm(m) => m.predict(point),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub standardizer: Standardizer,
    /// SVM class pairs with no machine in this fold.
    pub skipped_pairs: Vec<(ActivityClass, ActivityClass)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvResult {
    pub classifier: ClassifierSpec,
    pub folds: usize,
    pub seed: u64,
    pub report: ClassReport,
    pub confusion: ConfusionMatrix<ActivityClass>,
    pub fold_summaries: Vec<FoldSummary>,
    /// Pooled out-of-fold predictions, in input order.
    #[serde(skip)]
    pub predictions: Vec<Prediction>,
}

/// Stratified k-fold cross-validation. Each fold refits the standardizer on
/// its own training portion, so no test statistic leaks into training.
pub fn cross_validate(
    spec: &ClassifierSpec,
    points: &[Point],
    labels: &[ActivityClass],
    folds: usize,
    seed: u64,
) -> Result<CvResult> {
    if points.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} points but {} labels",
            points.len(),
            labels.len()
        )));
    }
    let fold_of = stratified_folds(labels, folds, seed)?;

    let per_fold = (0..folds)
        .into_par_iter()
        .map(|f| {
            let (train_idx, test_idx): (Vec<usize>, Vec<usize>) = (0..points.len()).partition(|&i| fold_of[i] != f);
            let train_raw: Vec<Point> = train_idx.iter().map(|&i| points[i]).collect();
            let train_labels: Vec<ActivityClass> = train_idx.iter().map(|&i| labels[i]).collect();
            let standardizer = Standardizer::fit(&train_raw)?;
            let model = TrainedClassifier::fit(spec, &standardizer.apply_all(&train_raw), &train_labels)?;
            let preds = test_idx
                .iter()
                .map(|&i| Ok((i, model.predict(&standardizer.apply(&points[i]))?)))
                .collect::<Result<Vec<_>>>()?;
            let skipped_pairs = match &model {
                TrainedClassifier::Svm(m) => m.skipped_pairs.clone(),
                TrainedClassifier::Knn(_) => Vec::new(),
            };
            Ok((
                FoldSummary {
                    fold: f,
                    train_size: train_idx.len(),
                    test_size: test_idx.len(),
                    standardizer,
                    skipped_pairs,
                },
                preds,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut predictions: Vec<Option<Prediction>> = vec![None; points.len()];
    let mut fold_summaries = Vec::with_capacity(folds);
    for (summary, preds) in per_fold {
        for (i, p) in preds {
            predictions[i] = Some(p);
        }
        fold_summaries.push(summary);
    }
    let predictions: Vec<Prediction> = predictions.into_iter().map(|p| p.expect("every item is in one test fold")).collect();
    let confusion = ConfusionMatrix::from_pairs(predictions.iter().map(|p| p.class).zip(labels.iter().copied()));
    let report = ClassReport::from_predictions(&confusion, &predictions, labels);
    Ok(CvResult {
        classifier: *spec,
        folds,
        seed,
        report,
        confusion,
        fold_summaries,
        predictions,
    })
}

/// Rows are cluster ids, columns true classes.
pub fn cluster_confusion(assignments: &[usize], truths: &[ActivityClass]) -> Result<ConfusionMatrix<usize>> {
    if assignments.len() != truths.len() {
        return Err(Error::InvalidArgument(format!(
            "{} assignments but {} labels",
            assignments.len(),
            truths.len()
        )));
    }
    Ok(ConfusionMatrix::from_pairs(assignments.iter().copied().zip(truths.iter().copied())))
}

/// Fraction of items belonging to the majority class of their row.
pub fn purity<R: Ord + Copy + Display>(conf: &ConfusionMatrix<R>) -> f64 {
    let majority: u64 = conf.rows().map(|(_, r)| r.iter().copied().max().unwrap_or(0)).sum();
    ratio(majority, conf.total())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

/// Aligned text table: one F row and one ROC row per classifier, one column
/// per class.
pub fn format_table(results: &[(&str, &ClassReport)]) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<8}{:<8}", "model", "metric");
    for c in ActivityClass::ALL {
        let _ = write!(s, "{:>15}", c.as_str());
    }
    let _ = writeln!(s, "{:>10}", "macro");
    for (name, rep) in results {
        let rows: [(&str, Vec<String>, String); 4] = [
            ("P", rep.classes.iter().map(|m| format!("{:.3}", m.precision)).collect(), format!("{:.3}", rep.macro_precision)),
            ("R", rep.classes.iter().map(|m| format!("{:.3}", m.recall)).collect(), format!("{:.3}", rep.macro_recall)),
            ("F", rep.classes.iter().map(|m| format!("{:.3}", m.f_measure)).collect(), format!("{:.3}", rep.macro_f_measure)),
            ("ROC", rep.classes.iter().map(|m| fmt_opt(m.roc_area)).collect(), fmt_opt(rep.macro_roc_area)),
        ];
        for (metric, cells, macro_cell) in rows {
            let _ = write!(s, "{:<8}{:<8}", name, metric);
            for cell in cells {
                let _ = write!(s, "{cell:>15}");
            }
            let _ = writeln!(s, "{macro_cell:>10}");
        }
    }
    s
}

impl fmt::Display for ClassReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_table(&[("", self)]))
    }
}
