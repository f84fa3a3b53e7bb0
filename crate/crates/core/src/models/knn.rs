//! Euclidean k-nearest-neighbour classifier.

use serde::{Deserialize, Serialize};

use super::{check_training_input, ModelError};
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnParams {
    pub k: usize,
}

impl Default for KnnParams {
    fn default() -> Self {
        KnnParams { k: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub n_classes: usize,
    pub n_features: usize,
    /// Row-major training points.
    pub points: Vec<f64>,
    pub labels: Vec<usize>,
}

impl KnnModel {
    /// Majority label among the `k` closest points. Equal distances are
    /// ordered by training index; vote ties go to the smallest class index.
    pub fn predict_row(&self, x: &[f64]) -> usize {
        let d = self.n_features;
        let mut dist: Vec<(f64, usize)> = self
            .points
            .chunks(d)
            .enumerate()
            .map(|(i, p)| (p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut votes = vec![0usize; self.n_classes];
        for &(_, i) in dist.iter().take(self.k) {
            votes[self.labels[i]] += 1;
        }
        let mut best = 0;
        for c in 1..votes.len() {
            if votes[c] > votes[best] {
                best = c;
            }
        }
        best
    }
}

pub fn train_knn(x: &FeatureMatrix, y: &[usize], n_classes: usize, params: &KnnParams) -> Result<KnnModel, ModelError> {
    check_training_input(x, y, n_classes)?;
    if params.k == 0 {
        return Err(ModelError::InvalidParam("k must be at least 1".into()));
    }
    if params.k > x.n_rows {
        return Err(ModelError::KTooLarge { k: params.k, n: x.n_rows });
    }
    Ok(KnnModel {
        k: params.k,
        n_classes,
        n_features: x.n_cols,
        points: x.data.clone(),
        labels: y.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Layout;

    fn m(rows: Vec<Vec<f64>>) -> FeatureMatrix {
        let d = rows[0].len();
        FeatureMatrix::from_rows(rows, Layout::Stat2, (0..d).map(|i| format!("f{i}")).collect())
    }

    #[test]
    fn one_nn_memorizes() {
        let x = m((0..12).map(|i| vec![i as f64, (i * i) as f64]).collect());
        let y: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let model = train_knn(&x, &y, 3, &KnnParams { k: 1 }).unwrap();
        let pred: Vec<usize> = x.rows().map(|r| model.predict_row(r)).collect();
        assert_eq!(pred, y);
    }

    #[test]
    fn vote_tie_goes_to_smallest_class() {
        let x = m(vec![vec![1.0], vec![-1.0]]);
        let model = train_knn(&x, &[1, 0], 2, &KnnParams { k: 2 }).unwrap();
        assert_eq!(model.predict_row(&[0.0]), 0);
    }

    #[test]
    fn k_larger_than_n() {
        let x = m(vec![vec![1.0], vec![2.0]]);
        assert_eq!(train_knn(&x, &[0, 1], 2, &KnnParams { k: 3 }), Err(ModelError::KTooLarge { k: 3, n: 2 }));
        assert!(matches!(train_knn(&x, &[0, 1], 2, &KnnParams { k: 0 }), Err(ModelError::InvalidParam(_))));
    }
}
