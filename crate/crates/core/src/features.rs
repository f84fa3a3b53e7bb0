//! Fingerprint features: z-normalization, per-metric statistics, padded
//! sequences and fixed windows.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{self, Moments};
use crate::traces::{format_value, LabeledCorpus, TraceError, TraceSet};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("unknown metric {0}")]
    UnknownMetric(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("window {start}+{len} outside trace of {n} s")]
    OutOfRange { start: usize, len: usize, n: usize },
    #[error("trace of {found} s exceeds sequence length {limit}")]
    SequenceTooLong { found: usize, limit: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// (μ, σ, max, min) per metric.
    Stat4,
    /// (μ, σ) per metric.
    Stat2,
    /// Time-major flattened `n × k` series, tail-padded.
    Sequence,
}

impl std::str::FromStr for Layout {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stat4" => Ok(Layout::Stat4),
            "stat2" => Ok(Layout::Stat2),
            "sequence" => Ok(Layout::Sequence),
            other => Err(format!("unknown layout {other:?}")),
        }
    }
}

impl Layout {
    pub fn as_str(self) -> &'static str {
        match self {
            Layout::Stat4 => "stat4",
            Layout::Stat2 => "stat2",
            Layout::Sequence => "sequence",
        }
    }
}

/// Per-metric (μ, σ) fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub metrics: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    pub fn apply(&self, metric_pos: usize, series: &[f64]) -> Vec<f64> {
        stats::zscore_apply(series, self.mean[metric_pos], self.std[metric_pos])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    /// Row-major values.
    pub data: Vec<f64>,
    pub layout: Layout,
    pub col_names: Vec<String>,
}

impl FeatureMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>, layout: Layout, col_names: Vec<String>) -> Self {
        let n_cols = col_names.len();
        assert!(rows.iter().all(|r| r.len() == n_cols), "ragged feature rows");
        FeatureMatrix {
            n_rows: rows.len(),
            n_cols,
            data: rows.into_iter().flatten().collect(),
            layout,
            col_names,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.n_cols.max(1)).take(self.n_rows)
    }

    pub fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.n_cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            n_rows: idx.len(),
            n_cols: self.n_cols,
            data,
            layout: self.layout,
            col_names: self.col_names.clone(),
        }
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    /// CSV with header `col_names..., label`.
    pub fn write_csv<W: Write>(&self, labels: &[String], mut out: W) -> Result<(), FeatureError> {
        writeln!(out, "{},label", self.col_names.join(","))?;
        for (row, label) in self.rows().zip(labels) {
            let vals: Vec<String> = row.iter().map(|v| format_value(*v)).collect();
            writeln!(out, "{},{label}", vals.join(","))?;
        }
        Ok(())
    }
}

fn metric_positions(trace: &TraceSet, metrics: &[String]) -> Result<Vec<usize>, FeatureError> {
    metrics
        .iter()
        .map(|m| trace.metric_index(m).ok_or_else(|| FeatureError::UnknownMetric(m.clone())))
        .collect()
}

/// Fits per-metric μ and population σ over the concatenated training samples.
pub fn fit_normalizer(train: &LabeledCorpus, metrics: &[String]) -> Result<NormalizationStats, FeatureError> {
    let first = train.items.first().ok_or(FeatureError::EmptyCorpus)?;
    let pos = metric_positions(&first.trace, metrics)?;
    let mut acc = vec![Moments::default(); metrics.len()];
    for item in &train.items {
        let pos_i = if item.trace.metrics() == first.trace.metrics() {
            pos.clone()
        } else {
            metric_positions(&item.trace, metrics)?
        };
        for (a, &p) in acc.iter_mut().zip(&pos_i) {
            for &v in item.trace.column(p) {
                a.push(v);
            }
        }
    }
    Ok(NormalizationStats {
        metrics: metrics.to_vec(),
        mean: acc.iter().map(Moments::mean).collect(),
        std: acc.iter().map(Moments::std).collect(),
    })
}

pub fn stat_column_names(metrics: &[String], layout: Layout) -> Vec<String> {
    let suffixes: &[&str] = match layout {
        Layout::Stat4 => &["mean", "std", "max", "min"],
        Layout::Stat2 => &["mean", "std"],
        Layout::Sequence => panic!("sequence layout has no statistic columns"),
    };
    metrics
        .iter()
        .flat_map(|m| suffixes.iter().map(move |s| format!("{m}_{s}")))
        .collect()
}

/// Normalized per-metric statistics for one trace.
pub fn stat_row(trace: &TraceSet, metrics: &[String], norm: &NormalizationStats, layout: Layout) -> Result<Vec<f64>, FeatureError> {
    let pos = metric_positions(trace, metrics)?;
    let npos = norm_positions(norm, metrics)?;
    let mut row = Vec::with_capacity(metrics.len() * 4);
    for (&p, &q) in pos.iter().zip(&npos) {
        let z = norm.apply(q, trace.column(p));
        let s = stats::summarize(&z).expect("traces are nonempty");
        match layout {
            Layout::Stat4 => row.extend([s.mean, s.std, s.max, s.min]),
            Layout::Stat2 => row.extend([s.mean, s.std]),
            Layout::Sequence => panic!("use build_sequences for the sequence layout"),
        }
    }
    Ok(row)
}

fn norm_positions(norm: &NormalizationStats, metrics: &[String]) -> Result<Vec<usize>, FeatureError> {
    metrics
        .iter()
        .map(|m| {
            norm.metrics
                .iter()
                .position(|n| n == m)
                .ok_or_else(|| FeatureError::UnknownMetric(m.clone()))
        })
        .collect()
}

pub fn build_stat_features(
    corpus: &LabeledCorpus,
    metrics: &[String],
    norm: &NormalizationStats,
    layout: Layout,
) -> Result<FeatureMatrix, FeatureError> {
    assert!(layout != Layout::Sequence, "use build_sequences for the sequence layout");
    let rows = corpus
        .items
        .iter()
        .map(|item| stat_row(&item.trace, metrics, norm, layout))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FeatureMatrix::from_rows(rows, layout, stat_column_names(metrics, layout)))
}

/// Normalized series flattened time-major and tail-padded with `pad_value`
/// to `target_len` (or the longest trace when `None`).
pub fn build_sequences(
    corpus: &LabeledCorpus,
    metrics: &[String],
    norm: &NormalizationStats,
    pad_value: f64,
    target_len: Option<usize>,
) -> Result<FeatureMatrix, FeatureError> {
    let longest = corpus.items.iter().map(|i| i.trace.n_seconds()).max().unwrap_or(0);
    let n_max = target_len.unwrap_or(longest);
    if longest > n_max {
        return Err(FeatureError::SequenceTooLong { found: longest, limit: n_max });
    }
    let npos = norm_positions(norm, metrics)?;
    let k = metrics.len();
    let mut rows = Vec::with_capacity(corpus.len());
    for item in &corpus.items {
        let pos = metric_positions(&item.trace, metrics)?;
        let cols: Vec<Vec<f64>> = pos.iter().zip(&npos).map(|(&p, &q)| norm.apply(q, item.trace.column(p))).collect();
        let mut row = vec![pad_value; n_max * k];
        for (j, col) in cols.iter().enumerate() {
            for (t, v) in col.iter().enumerate() {
                row[t * k + j] = *v;
            }
        }
        rows.push(row);
    }
    let names = (0..n_max)
        .flat_map(|t| metrics.iter().map(move |m| format!("{m}_t{t}")))
        .collect();
    Ok(FeatureMatrix::from_rows(rows, Layout::Sequence, names))
}

/// Contiguous `length`-second window starting at sample `t_start`.
pub fn extract_window(trace: &TraceSet, t_start: usize, length: usize) -> Result<TraceSet, FeatureError> {
    let n = trace.n_seconds();
    if length == 0 || t_start + length > n {
        return Err(FeatureError::OutOfRange { start: t_start, len: length, n });
    }
    let w = trace.slice(t_start, length).map_err(|e| match e {
        TraceError::Io(io) => FeatureError::Io(io),
        _ => FeatureError::OutOfRange { start: t_start, len: length, n },
    })?;
    Ok(w.with_meta("window", format!("{t_start}+{length}")))
}

pub const DEFAULT_WINDOW_S: usize = 10;
