//! One-vs-rest linear SVM trained by stochastic subgradient descent on the
//! L2-regularized hinge loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, check_training_input, ModelError};
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    /// Initial step size; decays as `lr / (1 + lr·λ·t)`.
    pub lr: f64,
    pub epochs: usize,
    pub reg_lambda: f64,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams { lr: 0.1, epochs: 50, reg_lambda: 1e-3, seed: 42 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvmModel {
    pub params: SvmParams,
    /// One weight row per class.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl LinearSvmModel {
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b)
            .collect()
    }

    pub fn predict_row(&self, x: &[f64]) -> usize {
        argmax(&self.scores(x))
    }
}

pub fn train_linear_svm(x: &FeatureMatrix, y: &[usize], n_classes: usize, params: &SvmParams) -> Result<LinearSvmModel, ModelError> {
    check_training_input(x, y, n_classes)?;
    if !(params.lr > 0.0) || !(params.reg_lambda >= 0.0) || params.epochs == 0 {
        return Err(ModelError::InvalidParam("svm needs lr > 0, reg_lambda >= 0, epochs >= 1".into()));
    }
    let d = x.n_cols;
    let mut weights = vec![vec![0.0; d]; n_classes];
    let mut bias = vec![0.0; n_classes];
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..x.n_rows).collect();
    let mut t = 0usize;
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let eta = params.lr / (1.0 + params.lr * params.reg_lambda * t as f64);
            let row = x.row(i);
            for c in 0..n_classes {
                let target = if y[i] == c { 1.0 } else { -1.0 };
                let w = &mut weights[c];
                let margin = target * (w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>() + bias[c]);
                let shrink = 1.0 - eta * params.reg_lambda;
                w.iter_mut().for_each(|v| *v *= shrink);
                if margin < 1.0 {
                    for (v, xi) in w.iter_mut().zip(row) {
                        *v += eta * target * xi;
                    }
                    bias[c] += eta * target;
                }
            }
            t += 1;
        }
    }
    Ok(LinearSvmModel { params: params.clone(), weights, bias })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Layout;
    use rand::Rng;

    fn blobs(seed: u64, n: usize) -> (FeatureMatrix, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let (cx, cy) = if c == 0 { (-2.0, -1.0) } else { (2.0, 1.5) };
            rows.push(vec![cx + rng.random_range(-1.0..1.0), cy + rng.random_range(-1.0..1.0)]);
            y.push(c);
        }
        (FeatureMatrix::from_rows(rows, Layout::Stat2, vec!["a".into(), "b".into()]), y)
    }

    #[test]
    fn separable_holdout_is_perfect() {
        let (train, ytr) = blobs(1, 80);
        let (test, yte) = blobs(2, 40);
        let m = train_linear_svm(&train, &ytr, 2, &SvmParams::default()).unwrap();
        let pred: Vec<usize> = test.rows().map(|r| m.predict_row(r)).collect();
        assert_eq!(pred, yte);
    }

    #[test]
    fn deterministic_in_seed() {
        let (train, y) = blobs(3, 40);
        let p = SvmParams::default();
        assert_eq!(train_linear_svm(&train, &y, 2, &p).unwrap(), train_linear_svm(&train, &y, 2, &p).unwrap());
    }

    #[test]
    fn rejects_zero_epochs() {
        let (train, y) = blobs(3, 10);
        let p = SvmParams { epochs: 0, ..Default::default() };
        assert!(matches!(train_linear_svm(&train, &y, 2, &p), Err(ModelError::InvalidParam(_))));
    }
}
