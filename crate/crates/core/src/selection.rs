//! Metric selection: single-metric accuracy screening and pairwise Pearson
//! redundancy pruning.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{build_stat_features, fit_normalizer, FeatureError, Layout};
use crate::models::{encode_labels, stratified_split, ModelError, TrainerConfig};
use crate::stats::{self, Moments};
use crate::traces::LabeledCorpus;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("unknown metric {0}")]
    UnknownMetric(String),
    #[error("need at least 2 labels, found {0}")]
    InsufficientLabels(usize),
    #[error("invalid threshold {0}")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// Which values enter the correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationBasis {
    /// Raw samples, concatenated across items.
    #[default]
    Raw,
    /// Each item's column z-scored on its own before concatenation.
    PerItemZscore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedMetric {
    pub kept: String,
    pub dropped: String,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub retained: Vec<String>,
    pub dropped: Vec<DroppedMetric>,
}

/// Concatenation of one metric's column across all items.
pub fn concatenated_series(corpus: &LabeledCorpus, metric: &str, basis: CorrelationBasis) -> Result<Vec<f64>, SelectionError> {
    let mut out = Vec::new();
    for item in &corpus.items {
        let col = item
            .trace
            .column_by_id(metric)
            .ok_or_else(|| SelectionError::UnknownMetric(metric.to_string()))?;
        match basis {
            CorrelationBasis::Raw => out.extend_from_slice(col),
            CorrelationBasis::PerItemZscore => {
                let m: Moments = col.iter().copied().collect();
                out.extend(stats::zscore_apply(col, m.mean(), m.std()));
            }
        }
    }
    Ok(out)
}

/// Greedy pruning over pairs `(i, j)`, `i < j`, in the order of
/// `catalog_order`: when both are still retained and `|r| > threshold`,
/// `j` is dropped.
pub fn correlation_prune(
    reference: &LabeledCorpus,
    catalog_order: &[String],
    threshold: f64,
    basis: CorrelationBasis,
) -> Result<PruneReport, SelectionError> {
    if reference.is_empty() {
        return Err(SelectionError::EmptyCorpus);
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(SelectionError::InvalidThreshold(threshold));
    }
    let series = catalog_order
        .iter()
        .map(|m| concatenated_series(reference, m, basis))
        .collect::<Result<Vec<_>, _>>()?;
    let n = catalog_order.len();
    let mut alive = vec![true; n];
    let mut dropped = Vec::new();
    for i in 0..n {
        if !alive[i] {
            continue;
        }
        for j in i + 1..n {
            if !alive[j] {
                continue;
            }
            let r = stats::pearson(&series[i], &series[j]).unwrap_or(0.0);
            if r.abs() > threshold {
                alive[j] = false;
                dropped.push(DroppedMetric {
                    kept: catalog_order[i].clone(),
                    dropped: catalog_order[j].clone(),
                    r,
                });
            }
        }
    }
    let retained = catalog_order
        .iter()
        .zip(&alive)
        .filter(|(_, &a)| a)
        .map(|(m, _)| m.clone())
        .collect();
    Ok(PruneReport { retained, dropped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenResult {
    pub metric: String,
    pub accuracy: f64,
}

/// Held-out accuracy of a classifier trained on each metric alone
/// (stat4 features, 80/20 stratified split). Metrics above `threshold_acc`
/// are returned by descending accuracy; ties keep the input order.
pub fn accuracy_screen(
    corpus: &LabeledCorpus,
    metrics: &[String],
    trainer: &TrainerConfig,
    threshold_acc: f64,
    split_seed: u64,
) -> Result<Vec<ScreenResult>, SelectionError> {
    let all = screen_all(corpus, metrics, trainer, split_seed)?;
    Ok(all.into_iter().filter(|r| r.accuracy > threshold_acc).collect())
}

/// Like [`accuracy_screen`] but returns every metric's score.
pub fn screen_all(
    corpus: &LabeledCorpus,
    metrics: &[String],
    trainer: &TrainerConfig,
    split_seed: u64,
) -> Result<Vec<ScreenResult>, SelectionError> {
    let classes = corpus.classes();
    if classes.len() < 2 {
        return Err(SelectionError::InsufficientLabels(classes.len()));
    }
    for m in metrics {
        if !corpus.metrics().contains(m) {
            return Err(SelectionError::UnknownMetric(m.clone()));
        }
    }
    let labels = corpus.labels();
    let (train_idx, test_idx) = stratified_split(&labels, 0.8, split_seed)?;
    let y = encode_labels(&labels, &classes)?;
    let ytr: Vec<usize> = train_idx.iter().map(|&i| y[i]).collect();
    let yte: Vec<usize> = test_idx.iter().map(|&i| y[i]).collect();
    let train = corpus.subset(&train_idx);
    let test = corpus.subset(&test_idx);
    let mut scored = metrics
        .par_iter()
        .map(|m| -> Result<ScreenResult, SelectionError> {
            let one = std::slice::from_ref(m);
            let norm = fit_normalizer(&train, one)?;
            let xtr = build_stat_features(&train, one, &norm, Layout::Stat4)?;
            let xte = build_stat_features(&test, one, &norm, Layout::Stat4)?;
            let model = trainer.fit(&xtr, &ytr, classes.len())?;
            let pred = model.predict(&xte);
            let hits = pred.iter().zip(&yte).filter(|(a, b)| a == b).count();
            Ok(ScreenResult { metric: m.clone(), accuracy: hits as f64 / yte.len() as f64 })
        })
        .collect::<Result<Vec<_>, _>>()?;
    scored.sort_by(|a, b| b.accuracy.total_cmp(&a.accuracy));
    Ok(scored)
}

pub const DEFAULT_METRIC_CAP: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapResult {
    pub ids: Vec<String>,
    /// Ids cut off by the cap, in input order.
    pub truncated: Vec<String>,
}

/// Keeps the first `cap` ids; anything beyond is reported and logged.
pub fn enforce_cap(ids: &[String], cap: usize) -> CapResult {
    let keep = ids.len().min(cap);
    let truncated = ids[keep..].to_vec();
    if !truncated.is_empty() {
        log::warn!("requesting {} metrics exceeds the cap of {cap}; dropping {}", ids.len(), truncated.join(","));
    }
    CapResult { ids: ids[..keep].to_vec(), truncated }
}

/// Members of `a` that also appear in `b`, in `a`'s order.
pub fn intersect_preserving_order(a: &[String], b: &[String]) -> Vec<String> {
    a.iter().filter(|m| b.contains(m)).cloned().collect()
}
