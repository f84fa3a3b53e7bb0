//! Corpus-level training and evaluation. Normalization is always refit on
//! the training part of each split or fold.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{build_sequences, build_stat_features, fit_normalizer, FeatureError, FeatureMatrix, Layout, NormalizationStats};
use crate::models::{
    encode_labels, evaluate_predictions, group_folds, run_folds_by, stratified_folds, stratified_split, EvaluationReport,
    Fold, GridResult, Model, ModelError, TrainerConfig,
};
use crate::traces::LabeledCorpus;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("model file: {0}")]
    Format(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub metrics: Vec<String>,
    pub layout: Layout,
    #[serde(default)]
    pub pad_value: f64,
}

/// A trained classifier together with everything needed to featurize new
/// traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub format_version: u32,
    pub classes: Vec<String>,
    pub features: FeatureConfig,
    /// Padded length for the sequence layout.
    pub seq_len: Option<usize>,
    pub normalizer: NormalizationStats,
    pub trainer: TrainerConfig,
    pub model: Model,
}

fn featurize(
    corpus: &LabeledCorpus,
    cfg: &FeatureConfig,
    norm: &NormalizationStats,
    seq_len: Option<usize>,
) -> Result<FeatureMatrix, FeatureError> {
    match cfg.layout {
        Layout::Sequence => build_sequences(corpus, &cfg.metrics, norm, cfg.pad_value, seq_len),
        layout => build_stat_features(corpus, &cfg.metrics, norm, layout),
    }
}

impl SavedModel {
    pub fn featurize(&self, corpus: &LabeledCorpus) -> Result<FeatureMatrix, PipelineError> {
        Ok(featurize(corpus, &self.features, &self.normalizer, self.seq_len)?)
    }

    pub fn predict(&self, corpus: &LabeledCorpus) -> Result<Vec<usize>, PipelineError> {
        Ok(self.model.predict(&self.featurize(corpus)?))
    }

    /// Scores the model on a labeled corpus; every label must be one of
    /// the training classes.
    pub fn evaluate(&self, corpus: &LabeledCorpus) -> Result<EvaluationReport, PipelineError> {
        let y = encode_labels(&corpus.labels(), &self.classes)?;
        let pred = self.predict(corpus)?;
        Ok(evaluate_predictions(&self.classes, &y, &pred))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<SavedModel, PipelineError> {
        let m: SavedModel = serde_json::from_str(text)?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(PipelineError::Format(format!(
                "unsupported format_version {} (expected {MODEL_FORMAT_VERSION})",
                m.format_version
            )));
        }
        Ok(m)
    }
}

/// Fits normalization and the classifier on `train`. `classes` fixes the
/// label encoding and may include classes absent from `train`.
pub fn fit(train: &LabeledCorpus, classes: &[String], cfg: &FeatureConfig, trainer: &TrainerConfig) -> Result<SavedModel, PipelineError> {
    let normalizer = fit_normalizer(train, &cfg.metrics)?;
    let seq_len = (cfg.layout == Layout::Sequence).then(|| train.items.iter().map(|i| i.trace.n_seconds()).max().unwrap_or(0));
    let x = featurize(train, cfg, &normalizer, seq_len)?;
    let y = encode_labels(&train.labels(), classes)?;
    let model = trainer.fit(&x, &y, classes.len())?;
    Ok(SavedModel {
        format_version: MODEL_FORMAT_VERSION,
        classes: classes.to_vec(),
        features: cfg.clone(),
        seq_len,
        normalizer,
        trainer: trainer.clone(),
        model,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub train_fraction: f64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn new(corpus: &LabeledCorpus, train_fraction: f64, seed: u64) -> Result<Split, ModelError> {
        let (train, test) = stratified_split(&corpus.labels(), train_fraction, seed)?;
        Ok(Split { seed, train_fraction, train, test })
    }
}

/// Train on the split's training part, report on its test part.
pub fn split_evaluate(
    corpus: &LabeledCorpus,
    split: &Split,
    cfg: &FeatureConfig,
    trainer: &TrainerConfig,
) -> Result<(SavedModel, EvaluationReport), PipelineError> {
    let classes = corpus.classes();
    let model = fit(&corpus.subset(&split.train), &classes, cfg, trainer)?;
    let report = model.evaluate(&corpus.subset(&split.test))?;
    Ok((model, report))
}

pub fn evaluate_folds(
    corpus: &LabeledCorpus,
    folds: &[Fold],
    cfg: &FeatureConfig,
    trainer: &TrainerConfig,
) -> Result<EvaluationReport, PipelineError> {
    let classes = corpus.classes();
    let y = encode_labels(&corpus.labels(), &classes)?;
    run_folds_by(&y, &classes, folds, |fold| -> Result<Vec<usize>, PipelineError> {
        let model = fit(&corpus.subset(&fold.train), &classes, cfg, trainer)?;
        model.predict(&corpus.subset(&fold.test))
    })
}

pub fn cross_validate(
    corpus: &LabeledCorpus,
    k: usize,
    seed: u64,
    cfg: &FeatureConfig,
    trainer: &TrainerConfig,
) -> Result<EvaluationReport, PipelineError> {
    let classes = corpus.classes();
    let y = encode_labels(&corpus.labels(), &classes)?;
    let folds = stratified_folds(&y, &classes, k, seed)?;
    evaluate_folds(corpus, &folds, cfg, trainer)
}

/// Leave-one-group-out: one fold per distinct group.
pub fn lopo(corpus: &LabeledCorpus, cfg: &FeatureConfig, trainer: &TrainerConfig) -> Result<EvaluationReport, PipelineError> {
    let folds = group_folds(&corpus.groups())?;
    evaluate_folds(corpus, &folds, cfg, trainer)
}

/// k-fold grid search with one shared fold assignment; the first entry
/// with the highest mean fold accuracy wins.
pub fn grid_search(
    corpus: &LabeledCorpus,
    grid: &[TrainerConfig],
    k: usize,
    seed: u64,
    cfg: &FeatureConfig,
) -> Result<GridResult, PipelineError> {
    if grid.is_empty() {
        return Err(ModelError::EmptyGrid.into());
    }
    let classes = corpus.classes();
    let y = encode_labels(&corpus.labels(), &classes)?;
    let folds = stratified_folds(&y, &classes, k, seed)?;
    let mut reports = Vec::with_capacity(grid.len());
    for trainer in grid {
        reports.push(evaluate_folds(corpus, &folds, cfg, trainer)?);
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
