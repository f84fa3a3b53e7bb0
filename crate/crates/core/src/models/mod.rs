//! Classifiers and the evaluation protocol around them.
//!
//! Labels are class indices into a sorted class-name list; see
//! [`LabeledCorpus::classes`](crate::traces::LabeledCorpus::classes).

mod evaluation;
mod forest;
mod knn;
mod mlp;
mod svm;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureMatrix;
use crate::simulator::mix_seed;

pub use evaluation::{
    evaluate_predictions, grid_search, group_folds, kfold_cv, lopo_cv, run_folds, run_folds_by, stratified_folds, ClassReport,
    EvaluationReport, Fold, FoldReport, GridResult,
};
pub use forest::{train_rf, DecisionTree, ForestParams, Node, RandomForestModel};
pub use knn::{train_knn, KnnModel, KnnParams};
pub use mlp::{train_mlp, MlpGradients, MlpModel, MlpParams};
pub use svm::{train_linear_svm, LinearSvmModel, SvmParams};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("label {0:?} has fewer than 2 items")]
    LabelTooSmall(String),
    #[error("class {class:?} has {found} items, need {needed}")]
    ClassTooSmall { class: String, found: usize, needed: usize },
    #[error("need at least 2 distinct groups")]
    SingleGroup,
    #[error("empty parameter grid")]
    EmptyGrid,
    #[error("label {0:?} unknown to the model")]
    UnknownLabel(String),
    #[error("k = {k} exceeds {n} training points")]
    KTooLarge { k: usize, n: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

pub(crate) fn check_training_input(x: &FeatureMatrix, y: &[usize], n_classes: usize) -> Result<(), ModelError> {
    if x.n_rows != y.len() {
        return Err(ModelError::DegenerateInput(format!("{} rows but {} labels", x.n_rows, y.len())));
    }
    if x.n_rows == 0 || x.n_cols == 0 {
        return Err(ModelError::DegenerateInput("empty feature matrix".into()));
    }
    if n_classes < 2 {
        return Err(ModelError::DegenerateInput("need at least 2 classes".into()));
    }
    if let Some(bad) = y.iter().find(|&&c| c >= n_classes) {
        return Err(ModelError::DegenerateInput(format!("label index {bad} out of range")));
    }
    if x.data.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::DegenerateInput("non-finite feature value".into()));
    }
    Ok(())
}

/// Index of the largest value; the first one wins ties.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Hyper-parameters of any supported classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainerConfig {
    RandomForest(ForestParams),
    LinearSvm(SvmParams),
    Knn(KnnParams),
    Mlp(MlpParams),
}

impl TrainerConfig {
    pub fn fit(&self, x: &FeatureMatrix, y: &[usize], n_classes: usize) -> Result<Model, ModelError> {
        Ok(match self {
            TrainerConfig::RandomForest(p) => Model::RandomForest(train_rf(x, y, n_classes, p)?),
            TrainerConfig::LinearSvm(p) => Model::LinearSvm(train_linear_svm(x, y, n_classes, p)?),
            TrainerConfig::Knn(p) => Model::Knn(train_knn(x, y, n_classes, p)?),
            TrainerConfig::Mlp(p) => Model::Mlp(train_mlp(x, y, n_classes, p)?),
        })
    }

    /// Copy with its random seed replaced; k-NN has none.
    pub fn with_seed(&self, seed: u64) -> TrainerConfig {
        let mut c = self.clone();
        match &mut c {
            TrainerConfig::RandomForest(p) => p.seed = seed,
            TrainerConfig::LinearSvm(p) => p.seed = seed,
            TrainerConfig::Mlp(p) => p.seed = seed,
            TrainerConfig::Knn(_) => {}
        }
        c
    }

    pub fn name(&self) -> &'static str {
        match self {
            TrainerConfig::RandomForest(_) => "rf",
            TrainerConfig::LinearSvm(_) => "svm",
            TrainerConfig::Knn(_) => "knn",
            TrainerConfig::Mlp(_) => "mlp",
        }
    }

    /// Default configuration for a model name (`rf`, `svm`, `knn`, `mlp`).
    pub fn default_for(name: &str, seed: u64) -> Option<TrainerConfig> {
        let c = match name {
            "rf" => TrainerConfig::RandomForest(ForestParams::default()),
            "svm" => TrainerConfig::LinearSvm(SvmParams::default()),
            "knn" => TrainerConfig::Knn(KnnParams::default()),
            "mlp" => TrainerConfig::Mlp(MlpParams::default()),
            _ => return None,
        };
        Some(c.with_seed(seed))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    RandomForest(RandomForestModel),
    LinearSvm(LinearSvmModel),
    Knn(KnnModel),
    Mlp(MlpModel),
}

impl Model {
    pub fn predict_row(&self, x: &[f64]) -> usize {
        match self {
            Model::RandomForest(m) => m.predict_row(x),
            Model::LinearSvm(m) => m.predict_row(x),
            Model::Knn(m) => m.predict_row(x),
            Model::Mlp(m) => m.predict_row(x),
        }
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<usize> {
        x.rows().map(|r| self.predict_row(r)).collect()
    }

    pub fn n_features(&self) -> usize {
        match self {
            Model::RandomForest(m) => m.n_features,
            Model::LinearSvm(m) => m.weights.first().map_or(0, Vec::len),
            Model::Knn(m) => m.n_features,
            Model::Mlp(m) => m.input_dim,
        }
    }
}

/// Per-label proportional split. Returns sorted (train, test) indices.
/// Each label keeps at least one item on each side.
pub fn stratified_split(labels: &[String], train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), ModelError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(ModelError::InvalidParam(format!("train fraction {train_fraction} not in (0,1)")));
    }
    let mut classes: Vec<&str> = labels.iter().map(String::as_str).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (ci, class) in classes.iter().enumerate() {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == *class).collect();
        if idx.len() < 2 {
            return Err(ModelError::LabelTooSmall(class.to_string()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, ci as u64]));
        idx.shuffle(&mut rng);
        let n_train = ((idx.len() as f64 * train_fraction).round() as usize).clamp(1, idx.len() - 1);
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Maps string labels to indices into `classes`.
pub fn encode_labels(labels: &[String], classes: &[String]) -> Result<Vec<usize>, ModelError> {
    labels
        .iter()
        .map(|l| {
            classes
                .iter()
                .position(|c| c == l)
                .ok_or_else(|| ModelError::UnknownLabel(l.clone()))
        })
        .collect()
}
