//! Moments, Pearson correlation, z-scoring and simple least squares.
//!
//! All moments are population (1/n) moments.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("empty input")]
    Empty,
    #[error("regressor is constant")]
    DegenerateX,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub max: f64,
    pub min: f64,
}

/// Single-pass (Welford) accumulator for mean and variance.
#[derive(Debug, Clone, Copy, Default)]
pub struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.m2 / self.n as f64).max(0.0)
        }
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::default();
        for x in iter {
            m.push(x);
        }
        m
    }
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().copied().collect::<Moments>().mean()
}

pub fn std(x: &[f64]) -> f64 {
    x.iter().copied().collect::<Moments>().std()
}

// One-pass co-moments: (Σ(x-x̄)², Σ(y-ȳ)², Σ(x-x̄)(y-ȳ)).
fn comoments(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let (mut mx, mut my) = (0.0, 0.0);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (k, (&a, &b)) in x.iter().zip(y).enumerate() {
        let n = (k + 1) as f64;
        let dx = a - mx;
        let dy = b - my;
        mx += dx / n;
        my += dy / n;
        sxx += dx * (a - mx);
        syy += dy * (b - my);
        sxy += dx * (b - my);
    }
    (sxx, syy, sxy)
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::TooShort { needed: 2, got: x.len() });
    }
    Ok(())
}

/// Pearson correlation. A constant series correlates 0 with anything.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y)?;
    let (sxx, syy, sxy) = comoments(x, y);
    if sxx <= 0.0 || syy <= 0.0 {
        return Ok(0.0);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Standardizes `apply_to` with the mean and population σ of `train`.
/// A constant `train` maps everything to zero.
pub fn zscore_fit_apply(train: &[f64], apply_to: &[f64]) -> Result<(Vec<f64>, f64, f64), StatsError> {
    if train.is_empty() {
        return Err(StatsError::Empty);
    }
    let m: Moments = train.iter().copied().collect();
    let (mu, sigma) = (m.mean(), m.std());
    Ok((zscore_apply(apply_to, mu, sigma), mu, sigma))
}

pub fn zscore_apply(x: &[f64], mu: f64, sigma: f64) -> Vec<f64> {
    if sigma > 0.0 {
        x.iter().map(|v| (v - mu) / sigma).collect()
    } else {
        vec![0.0; x.len()]
    }
}

/// Ordinary least squares for `y = slope·x + intercept`.
pub fn linreg(x: &[f64], y: &[f64]) -> Result<RegressionFit, StatsError> {
    check_pair(x, y)?;
    let (sxx, syy, sxy) = comoments(x, y);
    if sxx <= 0.0 {
        return Err(StatsError::DegenerateX);
    }
    let slope = sxy / sxx;
    let intercept = mean(y) - slope * mean(x);
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| {
            let r = b - (slope * a + intercept);
            r * r
        })
        .sum();
    let r_squared = if syy <= 0.0 {
        1.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(RegressionFit {
        slope,
        intercept,
        r_squared,
    })
}

/// (μ, population σ, max, min).
pub fn summarize(x: &[f64]) -> Result<Summary, StatsError> {
    if x.is_empty() {
        return Err(StatsError::Empty);
    }
    let m: Moments = x.iter().copied().collect();
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(Summary {
        mean: m.mean(),
        std: m.std(),
        max,
        min,
    })
}

/// Median of a non-empty slice (mean of the two middle values for even n).
pub fn median(x: &[f64]) -> Option<f64> {
    if x.is_empty() {
        return None;
    }
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}
