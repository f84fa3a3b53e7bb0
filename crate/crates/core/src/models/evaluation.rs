//! Scoring, stratified k-fold and leave-one-group-out evaluation, grid search.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ModelError, TrainerConfig};
use crate::features::FeatureMatrix;
use crate::simulator::mix_seed;
use crate::traces::format_value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub name: String,
    pub n_train: usize,
    pub n_test: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub classes: Vec<String>,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassReport>,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub folds: Option<Vec<FoldReport>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fold_accuracy_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fold_accuracy_std: Option<f64>,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl EvaluationReport {
    /// Derives every score from a confusion matrix. Macro averages run over
    /// classes that occur as a true or predicted label.
    pub fn from_confusion(classes: &[String], confusion: Vec<Vec<u64>>) -> EvaluationReport {
        let c = classes.len();
        let total: u64 = confusion.iter().flatten().sum();
        let correct: u64 = (0..c).map(|i| confusion[i][i]).sum();
        let mut per_class = Vec::with_capacity(c);
        let (mut sp, mut sr, mut sf, mut present) = (0.0, 0.0, 0.0, 0usize);
        for i in 0..c {
            let tp = confusion[i][i];
            let support: u64 = confusion[i].iter().sum();
            let predicted: u64 = (0..c).map(|r| confusion[r][i]).sum();
            let p = ratio(tp, predicted);
            let r = ratio(tp, support);
            let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            if support > 0 || predicted > 0 {
                sp += p;
                sr += r;
                sf += f1;
                present += 1;
            }
            per_class.push(ClassReport { label: classes[i].clone(), precision: p, recall: r, f1, support });
        }
        let n = present.max(1) as f64;
        EvaluationReport {
            classes: classes.to_vec(),
            accuracy: ratio(correct, total),
            macro_precision: sp / n,
            macro_recall: sr / n,
            macro_f1: sf / n,
            per_class,
            confusion,
            folds: None,
            fold_accuracy_mean: None,
            fold_accuracy_std: None,
        }
    }

    /// Per-class rows followed by a `macro` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,precision,recall,f1,support\n");
        for r in &self.per_class {
            s += &format!(
                "{},{},{},{},{}\n",
                r.label,
                format_value(r.precision),
                format_value(r.recall),
                format_value(r.f1),
                r.support
            );
        }
        let support: u64 = self.per_class.iter().map(|r| r.support).sum();
        s += &format!(
            "macro,{},{},{},{}\n",
            format_value(self.macro_precision),
            format_value(self.macro_recall),
            format_value(self.macro_f1),
            support
        );
        s
    }
}

pub fn evaluate_predictions(classes: &[String], y_true: &[usize], y_pred: &[usize]) -> EvaluationReport {
    assert_eq!(y_true.len(), y_pred.len(), "prediction count mismatch");
    let c = classes.len();
    let mut confusion = vec![vec![0u64; c]; c];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        confusion[t][p] += 1;
    }
    EvaluationReport::from_confusion(classes, confusion)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub name: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified k-fold assignment: each class list is shuffled, classes are
/// concatenated in index order and dealt round-robin onto the folds.
///
/// Every class needs at least `k` items, except for leave-one-out
/// (`k == n`), where two per class suffice.
pub fn stratified_folds(y: &[usize], classes: &[String], k: usize, seed: u64) -> Result<Vec<Fold>, ModelError> {
    let n = y.len();
    if k < 2 || k > n {
        return Err(ModelError::InvalidParam(format!("k = {k} must lie in [2, {n}]")));
    }
    let needed = if k == n { 2 } else { k };
    let mut dealt = Vec::with_capacity(n);
    for (ci, class) in classes.iter().enumerate() {
        let mut idx: Vec<usize> = (0..n).filter(|&i| y[i] == ci).collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < needed {
            return Err(ModelError::ClassTooSmall { class: class.clone(), found: idx.len(), needed });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, ci as u64]));
        idx.shuffle(&mut rng);
        dealt.extend(idx);
    }
    let mut test = vec![Vec::new(); k];
    for (p, i) in dealt.into_iter().enumerate() {
        test[p % k].push(i);
    }
    Ok(test
        .into_iter()
        .enumerate()
        .map(|(f, mut te)| {
            te.sort_unstable();
            let train = (0..n).filter(|i| te.binary_search(i).is_err()).collect();
            Fold { name: format!("fold{f}"), train, test: te }
        })
        .collect())
}

/// Evaluates `predict` on every fold in parallel. The pooled confusion
/// matrix covers all test predictions; fold accuracies are summarized by
/// mean and population standard deviation.
pub fn run_folds_by<E, F>(y: &[usize], classes: &[String], folds: &[Fold], predict: F) -> Result<EvaluationReport, E>
where
    E: Send,
    F: Fn(&Fold) -> Result<Vec<usize>, E> + Sync,
{
    let preds: Vec<Vec<usize>> = folds.par_iter().map(&predict).collect::<Result<_, E>>()?;
    let c = classes.len();
    let mut confusion = vec![vec![0u64; c]; c];
    let mut fold_reports = Vec::with_capacity(folds.len());
    for (f, (fold, pred)) in folds.iter().zip(&preds).enumerate() {
        let truth: Vec<usize> = fold.test.iter().map(|&i| y[i]).collect();
        let r = evaluate_predictions(classes, &truth, pred);
        for (row, add) in confusion.iter_mut().zip(&r.confusion) {
            for (a, b) in row.iter_mut().zip(add) {
                *a += b;
            }
        }
        fold_reports.push(FoldReport {
            fold: f,
            name: fold.name.clone(),
            n_train: fold.train.len(),
            n_test: fold.test.len(),
            accuracy: r.accuracy,
            macro_f1: r.macro_f1,
        });
    }
    let accs: Vec<f64> = fold_reports.iter().map(|r| r.accuracy).collect();
    let mut report = EvaluationReport::from_confusion(classes, confusion);
    report.fold_accuracy_mean = Some(crate::stats::mean(&accs));
    report.fold_accuracy_std = Some(crate::stats::std(&accs));
    report.folds = Some(fold_reports);
    Ok(report)
}

pub fn run_folds(
    x: &FeatureMatrix,
    y: &[usize],
    classes: &[String],
    folds: &[Fold],
    trainer: &TrainerConfig,
) -> Result<EvaluationReport, ModelError> {
    run_folds_by(y, classes, folds, |fold| {
        let ytr: Vec<usize> = fold.train.iter().map(|&i| y[i]).collect();
        let model = trainer.fit(&x.select_rows(&fold.train), &ytr, classes.len())?;
        Ok(model.predict(&x.select_rows(&fold.test)))
    })
}

pub fn kfold_cv(
    x: &FeatureMatrix,
    y: &[usize],
    classes: &[String],
    k: usize,
    trainer: &TrainerConfig,
    seed: u64,
) -> Result<EvaluationReport, ModelError> {
    let folds = stratified_folds(y, classes, k, seed)?;
    run_folds(x, y, classes, &folds, trainer)
}

/// One fold per distinct group, in sorted group order.
pub fn group_folds(groups: &[String]) -> Result<Vec<Fold>, ModelError> {
    let mut names: Vec<&String> = groups.iter().collect();
    names.sort_unstable();
    names.dedup();
    if names.len() < 2 {
        return Err(ModelError::SingleGroup);
    }
    Ok(names
        .into_iter()
        .map(|g| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..groups.len()).partition(|&i| &groups[i] == g);
            Fold { name: g.clone(), train, test }
        })
        .collect())
}

pub fn lopo_cv(
    x: &FeatureMatrix,
    y: &[usize],
    classes: &[String],
    groups: &[String],
    trainer: &TrainerConfig,
) -> Result<EvaluationReport, ModelError> {
    let folds = group_folds(groups)?;
    run_folds(x, y, classes, &folds, trainer)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best_index: usize,
    pub best: TrainerConfig,
    /// Mean CV accuracy per grid entry, in grid order.
    pub scores: Vec<f64>,
    pub report: EvaluationReport,
}

/// Exhaustive k-fold search over `grid`; all entries share one fold
/// assignment. The first entry with the highest mean accuracy wins.
pub fn grid_search(
    x: &FeatureMatrix,
    y: &[usize],
    classes: &[String],
    grid: &[TrainerConfig],
    k: usize,
    seed: u64,
) -> Result<GridResult, ModelError> {
    if grid.is_empty() {
        return Err(ModelError::EmptyGrid);
    }
    let folds = stratified_folds(y, classes, k, seed)?;
    let mut reports = Vec::with_capacity(grid.len());
    for cfg in grid {
        reports.push(run_folds(x, y, classes, &folds, cfg)?);
    }
    let scores: Vec<f64> = reports.iter().map(|r| r.fold_accuracy_mean.unwrap_or(r.accuracy)).collect();
    let mut best = 0;
    for i in 1..scores.len() {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    Ok(GridResult {
        best_index: best,
        best: grid[best].clone(),
        scores,
        report: reports.swap_remove(best),
    })
}
