//! One-hidden-layer perceptron `[d, h, c]`: ReLU hidden units, softmax
//! output, mean cross-entropy loss, mini-batch gradient descent.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{argmax, check_training_input, ModelError};
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams { hidden: 32, learning_rate: 0.05, epochs: 200, batch_size: 16, seed: 42 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub params: MlpParams,
    pub input_dim: usize,
    pub hidden: usize,
    pub n_classes: usize,
    /// `hidden × input_dim`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `n_classes × hidden`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Gradient of the mean loss, shaped like the model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl MlpGradients {
    /// Concatenation in the order of [`MlpModel::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }
}

struct Forward {
    pre: Vec<f64>,
    act: Vec<f64>,
    probs: Vec<f64>,
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl MlpModel {
    /// He-initialized weights, zero biases.
    pub fn init(input_dim: usize, n_classes: usize, params: &MlpParams) -> MlpModel {
        let h = params.hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let n1 = Normal::new(0.0, (2.0 / input_dim as f64).sqrt()).expect("finite std");
        let n2 = Normal::new(0.0, (2.0 / h as f64).sqrt()).expect("finite std");
        MlpModel {
            params: params.clone(),
            input_dim,
            hidden: h,
            n_classes,
            w1: (0..h * input_dim).map(|_| n1.sample(&mut rng)).collect(),
            b1: vec![0.0; h],
            w2: (0..n_classes * h).map(|_| n2.sample(&mut rng)).collect(),
            b2: vec![0.0; n_classes],
        }
    }

    fn forward(&self, x: &[f64]) -> Forward {
        let d = self.input_dim;
        let pre: Vec<f64> = (0..self.hidden)
            .map(|j| self.b1[j] + self.w1[j * d..(j + 1) * d].iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        let act: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
        let h = self.hidden;
        let logits: Vec<f64> = (0..self.n_classes)
            .map(|c| self.b2[c] + self.w2[c * h..(c + 1) * h].iter().zip(&act).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        Forward { pre, act, probs: softmax(&logits) }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).probs
    }

    pub fn predict_row(&self, x: &[f64]) -> usize {
        argmax(&self.predict_proba(x))
    }

    /// Mean cross-entropy over the rows in `batch`.
    pub fn loss(&self, x: &FeatureMatrix, y: &[usize], batch: &[usize]) -> f64 {
        let total: f64 = batch
            .iter()
            .map(|&i| -self.forward(x.row(i)).probs[y[i]].max(f64::MIN_POSITIVE).ln())
            .sum();
        total / batch.len() as f64
    }

    /// Analytic gradient of [`loss`](Self::loss) by backpropagation.
    pub fn gradients(&self, x: &FeatureMatrix, y: &[usize], batch: &[usize]) -> MlpGradients {
        let (d, h, c) = (self.input_dim, self.hidden, self.n_classes);
        let mut g = MlpGradients {
            w1: vec![0.0; h * d],
            b1: vec![0.0; h],
            w2: vec![0.0; c * h],
            b2: vec![0.0; c],
        };
        let scale = 1.0 / batch.len() as f64;
        for &i in batch {
            let row = x.row(i);
            let f = self.forward(row);
            let dz: Vec<f64> = (0..c).map(|k| (f.probs[k] - f64::from(u8::from(k == y[i]))) * scale).collect();
            let mut da = vec![0.0; h];
            for k in 0..c {
                g.b2[k] += dz[k];
                for j in 0..h {
                    g.w2[k * h + j] += dz[k] * f.act[j];
                    da[j] += dz[k] * self.w2[k * h + j];
                }
            }
            for j in 0..h {
                if f.pre[j] <= 0.0 {
                    continue;
                }
                g.b1[j] += da[j];
                for (gw, v) in g.w1[j * d..(j + 1) * d].iter_mut().zip(row) {
                    *gw += da[j] * v;
                }
            }
        }
        g
    }

    pub fn flat_params(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    pub fn set_flat_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len());
        let (a, rest) = p.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, e) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2.copy_from_slice(e);
    }

    fn step(&mut self, g: &MlpGradients, lr: f64) {
        for (p, d) in self.w1.iter_mut().zip(&g.w1) {
            *p -= lr * d;
        }
        for (p, d) in self.b1.iter_mut().zip(&g.b1) {
            *p -= lr * d;
        }
        for (p, d) in self.w2.iter_mut().zip(&g.w2) {
            *p -= lr * d;
        }
        for (p, d) in self.b2.iter_mut().zip(&g.b2) {
            *p -= lr * d;
        }
    }
}

pub fn train_mlp(x: &FeatureMatrix, y: &[usize], n_classes: usize, params: &MlpParams) -> Result<MlpModel, ModelError> {
    check_training_input(x, y, n_classes)?;
    if params.hidden == 0 || params.batch_size == 0 || !(params.learning_rate > 0.0) {
        return Err(ModelError::InvalidParam("mlp needs hidden >= 1, batch_size >= 1, learning_rate > 0".into()));
    }
    let mut model = MlpModel::init(x.n_cols, n_classes, params);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..x.n_rows).collect();
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(params.batch_size) {
            let g = model.gradients(x, y, batch);
            model.step(&g, params.learning_rate);
        }
    }
    Ok(model)
}
