//! Random forest of Gini-split classification trees.
//!
//! Splits are `x[feature] <= threshold` with thresholds taken from training
//! values (the lower side of each cut), so predictions are invariant under
//! any strictly increasing transform of a feature column.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmax, check_training_input, ModelError};
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// Candidate features per split; `None` means ⌈√d⌉.
    pub feature_subsample: Option<usize>,
    pub seed: u64,
    /// Grow trees on the rayon pool. Output is identical either way.
    #[serde(default = "yes")]
    pub parallel: bool,
}

fn yes() -> bool {
    true
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
            feature_subsample: None,
            seed: 42,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        /// Class distribution of the training samples reaching the leaf.
        dist: Vec<f64>,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub root: Node,
}

impl DecisionTree {
    pub fn leaf_dist(&self, x: &[f64]) -> &[f64] {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { dist } => return dist,
                Node::Split { feature, threshold, left, right } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn d(n: &Node) -> usize {
            match n {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + d(left).max(d(right)),
            }
        }
        d(&self.root)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    pub params: ForestParams,
    pub n_classes: usize,
    pub n_features: usize,
    pub trees: Vec<DecisionTree>,
}

impl RandomForestModel {
    /// Mean of the trees' leaf distributions.
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_classes];
        for t in &self.trees {
            for (a, p) in acc.iter_mut().zip(t.leaf_dist(x)) {
                *a += p;
            }
        }
        let n = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    pub fn predict_row(&self, x: &[f64]) -> usize {
        argmax(&self.predict_proba(x))
    }
}

struct TreeBuilder<'a> {
    x: &'a FeatureMatrix,
    y: &'a [usize],
    n_classes: usize,
    max_depth: Option<usize>,
    min_samples_split: usize,
    mtry: usize,
}

// Σ c² / n for a class-count vector.
fn purity(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    counts.iter().map(|&c| (c * c) as f64).sum::<f64>() / n as f64
}

impl TreeBuilder<'_> {
    fn leaf(&self, counts: &[usize], n: usize) -> Node {
        Node::Leaf {
            dist: counts.iter().map(|&c| c as f64 / n as f64).collect(),
        }
    }

    fn build(&self, samples: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> Node {
        let n = samples.len();
        let mut counts = vec![0usize; self.n_classes];
        for &s in samples.iter() {
            counts[self.y[s]] += 1;
        }
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || n < self.min_samples_split || self.max_depth.is_some_and(|m| depth >= m) {
            return self.leaf(&counts, n);
        }
        match self.best_split(samples, &counts, rng) {
            None => self.leaf(&counts, n),
            Some((feature, threshold)) => {
                let mut left: Vec<usize> = Vec::with_capacity(n);
                let mut right: Vec<usize> = Vec::with_capacity(n);
                for &s in samples.iter() {
                    if self.x.row(s)[feature] <= threshold {
                        left.push(s);
                    } else {
                        right.push(s);
                    }
                }
                let l = self.build(&mut left, depth + 1, rng);
                let r = self.build(&mut right, depth + 1, rng);
                Node::Split {
                    feature,
                    threshold,
                    left: Box::new(l),
                    right: Box::new(r),
                }
            }
        }
    }

    // Visits features in random order until `mtry` non-constant ones have
    // been drawn, then scans those in ascending index order.
    fn best_split(&self, samples: &[usize], counts: &[usize], rng: &mut ChaCha8Rng) -> Option<(usize, f64)> {
        let d = self.x.n_cols;
        let mut order: Vec<usize> = (0..d).collect();
        let mut candidates = Vec::with_capacity(self.mtry);
        for i in 0..d {
            if candidates.len() == self.mtry {
                break;
            }
            let j = rng.random_range(i..d);
            order.swap(i, j);
            let f = order[i];
            let first = self.x.row(samples[0])[f];
            if samples.iter().any(|&s| self.x.row(s)[f] != first) {
                candidates.push(f);
            }
        }
        candidates.sort_unstable();

        let n = samples.len();
        let parent = purity(counts, n);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(n);
        for &f in &candidates {
            pairs.clear();
            pairs.extend(samples.iter().map(|&s| (self.x.row(s)[f], self.y[s])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = vec![0usize; self.n_classes];
            let mut right = counts.to_vec();
            for i in 0..n - 1 {
                let c = pairs[i].1;
                left[c] += 1;
                right[c] -= 1;
                if pairs[i].0 == pairs[i + 1].0 {
                    continue;
                }
                let nl = i + 1;
                let q = purity(&left, nl) + purity(&right, n - nl);
                if q > parent * (1.0 + 1e-12) && best.is_none_or(|(_, _, bq)| q > bq) {
                    best = Some((f, pairs[i].0, q));
                }
            }
        }
        best.map(|(f, t, _)| (f, t))
    }
}

fn grow_tree(x: &FeatureMatrix, y: &[usize], n_classes: usize, params: &ForestParams, mtry: usize, tree_idx: usize) -> DecisionTree {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(tree_idx as u64);
    let n = x.n_rows;
    let mut samples: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let builder = TreeBuilder {
        x,
        y,
        n_classes,
        max_depth: params.max_depth,
        min_samples_split: params.min_samples_split.max(2),
        mtry,
    };
    DecisionTree {
        root: builder.build(&mut samples, 0, &mut rng),
    }
}

pub fn train_rf(x: &FeatureMatrix, y: &[usize], n_classes: usize, params: &ForestParams) -> Result<RandomForestModel, ModelError> {
    check_training_input(x, y, n_classes)?;
    if params.n_trees == 0 {
        return Err(ModelError::InvalidParam("n_trees must be at least 1".into()));
    }
    let d = x.n_cols;
    let mtry = params
        .feature_subsample
        .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
        .clamp(1, d);
    let trees = if params.parallel {
        (0..params.n_trees)
            .into_par_iter()
            .map(|t| grow_tree(x, y, n_classes, params, mtry, t))
            .collect()
    } else {
        (0..params.n_trees)
            .map(|t| grow_tree(x, y, n_classes, params, mtry, t))
            .collect()
    };
    Ok(RandomForestModel {
        params: params.clone(),
        n_classes,
        n_features: d,
        trees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Layout;
    use proptest::prelude::*;
    use rand::Rng;

    fn matrix(rows: Vec<Vec<f64>>) -> FeatureMatrix {
        let d = rows[0].len();
        FeatureMatrix::from_rows(rows, Layout::Stat2, (0..d).map(|i| format!("f{i}")).collect())
    }

    fn small_params() -> ForestParams {
        ForestParams { n_trees: 15, ..Default::default() }
    }

    #[test]
    fn separable_one_dimensional() {
        let xs: Vec<f64> = (-10..10).map(|v| v as f64 + 0.5).collect();
        let y: Vec<usize> = xs.iter().map(|&v| usize::from(v > 0.0)).collect();
        let x = matrix(xs.iter().map(|&v| vec![v]).collect());
        let m = train_rf(&x, &y, 2, &small_params()).unwrap();
        let pred: Vec<usize> = x.rows().map(|r| m.predict_row(r)).collect();
        assert_eq!(pred, y);
    }

    #[test]
    fn constant_features_predict_majority() {
        let x = matrix(vec![vec![1.0, 1.0]; 10]);
        let y = vec![0, 1, 1, 1, 1, 1, 1, 1, 0, 0];
        let m = train_rf(&x, &y, 2, &small_params()).unwrap();
        assert_eq!(m.predict_row(&[1.0, 1.0]), 1);
        assert!(m.trees.iter().all(|t| t.depth() == 0));
    }

    #[test]
    fn parallel_matches_serial() {
        let rows: Vec<Vec<f64>> = (0..60).map(|i| vec![(i % 7) as f64, (i * 13 % 11) as f64, i as f64 * 0.1]).collect();
        let y: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let x = matrix(rows);
        let par = train_rf(&x, &y, 3, &ForestParams { parallel: true, ..small_params() }).unwrap();
        let ser = train_rf(&x, &y, 3, &ForestParams { parallel: false, ..small_params() }).unwrap();
        assert_eq!(par.trees, ser.trees);
    }

    #[test]
    fn rejects_bad_input() {
        let x = matrix(vec![vec![1.0], vec![2.0]]);
        assert!(matches!(train_rf(&x, &[0, 0], 1, &small_params()), Err(ModelError::DegenerateInput(_))));
        assert!(matches!(train_rf(&x, &[0], 2, &small_params()), Err(ModelError::DegenerateInput(_))));
        let zero = ForestParams { n_trees: 0, ..small_params() };
        assert!(matches!(train_rf(&x, &[0, 1], 2, &zero), Err(ModelError::InvalidParam(_))));
    }

    #[test]
    fn max_depth_respected() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64]).collect();
        let y: Vec<usize> = (0..50).map(|i| i % 2).collect();
        let p = ForestParams { max_depth: Some(2), ..small_params() };
        let m = train_rf(&matrix(rows), &y, 2, &p).unwrap();
        assert!(m.trees.iter().all(|t| t.depth() <= 2));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn increasing_transform_preserves_predictions(
            seed in 0u64..1000,
            col in 0usize..3,
            scale in 0.1f64..10.0,
            shift in -5.0f64..5.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gen = |rng: &mut ChaCha8Rng, n: usize| -> (Vec<Vec<f64>>, Vec<usize>) {
                let mut rows = Vec::new();
                let mut y = Vec::new();
                for _ in 0..n {
                    let c = rng.random_range(0..3usize);
                    rows.push((0..3).map(|j| rng.random_range(-1.0..1.0) + if j == c { 1.0 } else { 0.0 }).collect());
                    y.push(c);
                }
                (rows, y)
            };
            let (train, y) = gen(&mut rng, 60);
            let (test, _) = gen(&mut rng, 40);
            let f = |v: f64| (v * scale + shift).exp() + v.powi(3);
            let warp = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
                rows.iter().map(|r| { let mut r = r.clone(); r[col] = f(r[col]); r }).collect()
            };
            let p = small_params();
            let m1 = train_rf(&matrix(train.clone()), &y, 3, &p).unwrap();
            let m2 = train_rf(&matrix(warp(&train)), &y, 3, &p).unwrap();
            let p1: Vec<usize> = test.iter().map(|r| m1.predict_row(r)).collect();
            let p2: Vec<usize> = warp(&test).iter().map(|r| m2.predict_row(r)).collect();
            prop_assert_eq!(p1, p2);
        }
    }
}
