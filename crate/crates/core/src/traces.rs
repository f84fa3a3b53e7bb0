//! Per-second metric traces, labeled corpora, and their on-disk formats.
//!
//! The canonical trace format is a wide CSV: header `t_s,<id1>,<id2>,...`,
//! one row per second, LF endings, no quoting. Values are written as the
//! shortest round-trip decimal padded to at least nine significant digits,
//! so reading a written file reproduces every value bit for bit.
//!
//! A corpus manifest is JSON lines, one `{"trace", "label", "group"}` object
//! per item, with trace paths relative to the manifest's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at row {row}, column {col}: {reason}")]
    Parse {
        row: usize,
        col: usize,
        reason: String,
    },
    #[error("row {row} has {found} fields, expected {expected}")]
    RaggedRows {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("missing trace file {0}")]
    MissingTraceFile(PathBuf),
    #[error("item {item} has metrics {found:?}, expected {expected:?}")]
    InconsistentMetrics {
        item: usize,
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("item {item} is shorter than {needed} s")]
    TooShort { item: usize, needed: usize },
    #[error("invalid trace: {0}")]
    Invalid(String),
}

/// A single metric sampled at 1 Hz; sample `k` is time `t0 + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTrace {
    pub metric: String,
    pub samples: Vec<f64>,
    pub t0: i64,
}

/// Aligned multi-metric series, stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    metrics: Vec<String>,
    columns: Vec<Vec<f64>>,
    t0: i64,
    pub meta: BTreeMap<String, String>,
}

impl TraceSet {
    pub fn new(metrics: Vec<String>, columns: Vec<Vec<f64>>, t0: i64) -> Result<Self, TraceError> {
        if metrics.len() != columns.len() {
            return Err(TraceError::Invalid(format!(
                "{} metric ids for {} columns",
                metrics.len(),
                columns.len()
            )));
        }
        if metrics.is_empty() {
            return Err(TraceError::Invalid("no metrics".into()));
        }
        let n = columns[0].len();
        if n == 0 {
            return Err(TraceError::Invalid("empty trace".into()));
        }
        if let Some(bad) = columns.iter().position(|c| c.len() != n) {
            return Err(TraceError::Invalid(format!(
                "column {} has {} samples, expected {n}",
                metrics[bad],
                columns[bad].len()
            )));
        }
        let unique: BTreeSet<_> = metrics.iter().collect();
        if unique.len() != metrics.len() {
            return Err(TraceError::Invalid("duplicate metric id".into()));
        }
        if columns.iter().flatten().any(|v| !v.is_finite()) {
            return Err(TraceError::Invalid("non-finite sample".into()));
        }
        Ok(TraceSet {
            metrics,
            columns,
            t0,
            meta: BTreeMap::new(),
        })
    }

    pub fn from_traces(traces: Vec<MetricTrace>) -> Result<Self, TraceError> {
        let t0 = traces.first().map(|t| t.t0).unwrap_or(0);
        if traces.iter().any(|t| t.t0 != t0) {
            return Err(TraceError::Invalid("traces start at different offsets".into()));
        }
        let (metrics, columns) = traces.into_iter().map(|t| (t.metric, t.samples)).unzip();
        TraceSet::new(metrics, columns, t0)
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }

    pub fn metrics(&self) -> &[String] {
        &self.metrics
    }

    pub fn n_seconds(&self) -> usize {
        self.columns[0].len()
    }

    pub fn n_metrics(&self) -> usize {
        self.metrics.len()
    }

    pub fn t0(&self) -> i64 {
        self.t0
    }

    pub fn column(&self, idx: usize) -> &[f64] {
        &self.columns[idx]
    }

    pub fn column_by_id(&self, id: &str) -> Option<&[f64]> {
        self.metric_index(id).map(|i| self.columns[i].as_slice())
    }

    pub fn metric_index(&self, id: &str) -> Option<usize> {
        self.metrics.iter().position(|m| m == id)
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn metric_trace(&self, idx: usize) -> MetricTrace {
        MetricTrace {
            metric: self.metrics[idx].clone(),
            samples: self.columns[idx].clone(),
            t0: self.t0,
        }
    }

    /// Maps every column through `f(column index, time index, value)`.
    pub fn map_values(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> TraceSet {
        let columns = self
            .columns
            .iter()
            .enumerate()
            .map(|(i, col)| col.iter().enumerate().map(|(t, &v)| f(i, t, v)).collect())
            .collect();
        TraceSet {
            metrics: self.metrics.clone(),
            columns,
            t0: self.t0,
            meta: self.meta.clone(),
        }
    }

    /// Contiguous sub-range `[start, start + len)` of sample indices.
    pub fn slice(&self, start: usize, len: usize) -> Result<TraceSet, TraceError> {
        if len == 0 || start + len > self.n_seconds() {
            return Err(TraceError::Invalid(format!(
                "range {start}..{} outside trace of {} s",
                start + len,
                self.n_seconds()
            )));
        }
        Ok(TraceSet {
            metrics: self.metrics.clone(),
            columns: self.columns.iter().map(|c| c[start..start + len].to_vec()).collect(),
            t0: self.t0 + start as i64,
            meta: self.meta.clone(),
        })
    }
}

/// Formats `v` as its shortest round-trip decimal, zero-padded to at least
/// nine significant digits. Plain notation for moderate exponents,
/// scientific otherwise.
pub fn format_value(v: f64) -> String {
    const MIN_SIG: usize = 9;
    let sci = format!("{v:e}");
    let (mantissa, exp) = sci.split_once('e').expect("`{:e}` always has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let (neg, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => (true, m),
        None => (false, mantissa),
    };
    let mut digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    while digits.len() < MIN_SIG {
        digits.push('0');
    }
    let sign = if neg { "-" } else { "" };
    if (-7..=15).contains(&exp) {
        let ndig = digits.len() as i32;
        if exp >= 0 {
            let int_len = (exp + 1) as usize;
            if int_len >= digits.len() {
                let pad = "0".repeat(int_len - digits.len());
                format!("{sign}{digits}{pad}")
            } else {
                format!("{sign}{}.{}", &digits[..int_len], &digits[int_len..])
            }
        } else {
            let lead = "0".repeat((-exp - 1) as usize);
            debug_assert!(ndig > 0);
            format!("{sign}0.{lead}{digits}")
        }
    } else {
        format!("{sign}{}.{}e{exp}", &digits[..1], &digits[1..])
    }
}

pub fn write_wide_csv<W: Write>(trace: &TraceSet, out: W) -> Result<(), TraceError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .quote_style(csv::QuoteStyle::Never)
        .from_writer(out);
    let mut header = vec!["t_s".to_string()];
    header.extend(trace.metrics.iter().cloned());
    w.write_record(&header).map_err(csv_io)?;
    for t in 0..trace.n_seconds() {
        let mut row = Vec::with_capacity(trace.n_metrics() + 1);
        row.push((trace.t0 + t as i64).to_string());
        row.extend(trace.columns.iter().map(|c| format_value(c[t])));
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_wide_csv(trace: &TraceSet, path: &Path) -> Result<(), TraceError> {
    let file = fs::File::create(path)?;
    write_wide_csv(trace, std::io::BufWriter::new(file))
}

fn csv_io(e: csv::Error) -> TraceError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => TraceError::Io(io),
        other => TraceError::Invalid(format!("{other:?}")),
    }
}

/// Parses a wide CSV. Rows and columns in errors are 1-based; row 1 is the
/// header.
pub fn parse_wide_csv<R: std::io::Read>(input: R) -> Result<TraceSet, TraceError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .quoting(false)
        .from_reader(input);
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| TraceError::Parse {
            row: 1,
            col: 1,
            reason: e.to_string(),
        })?,
        None => {
            return Err(TraceError::Parse {
                row: 1,
                col: 1,
                reason: "missing header".into(),
            })
        }
    };
    if header.get(0) != Some("t_s") {
        return Err(TraceError::Parse {
            row: 1,
            col: 1,
            reason: "first header field must be t_s".into(),
        });
    }
    let metrics: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if let Some(pos) = metrics.iter().position(|m| !crate::catalog::is_valid_id(m)) {
        return Err(TraceError::Parse {
            row: 1,
            col: pos + 2,
            reason: format!("invalid metric id {:?}", metrics[pos]),
        });
    }
    let width = header.len();
    let mut columns = vec![Vec::new(); metrics.len()];
    let mut t0 = 0i64;
    for (i, rec) in records.enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| TraceError::Parse {
            row,
            col: 1,
            reason: e.to_string(),
        })?;
        if rec.len() != width {
            return Err(TraceError::RaggedRows {
                row,
                found: rec.len(),
                expected: width,
            });
        }
        let t: i64 = rec[0].trim().parse().map_err(|_| TraceError::Parse {
            row,
            col: 1,
            reason: format!("bad time {:?}", &rec[0]),
        })?;
        if i == 0 {
            t0 = t;
        } else if t != t0 + i as i64 {
            return Err(TraceError::Parse {
                row,
                col: 1,
                reason: format!("expected t_s = {}, found {t}", t0 + i as i64),
            });
        }
        for (j, field) in rec.iter().skip(1).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| TraceError::Parse {
                row,
                col: j + 2,
                reason: format!("not a number: {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(TraceError::Parse {
                    row,
                    col: j + 2,
                    reason: "non-finite value".into(),
                });
            }
            columns[j].push(v);
        }
    }
    if columns.first().map_or(true, Vec::is_empty) {
        return Err(TraceError::Parse {
            row: 2,
            col: 1,
            reason: "no data rows".into(),
        });
    }
    TraceSet::new(metrics, columns, t0)
}

pub fn read_wide_csv(path: &Path) -> Result<TraceSet, TraceError> {
    let file = fs::File::open(path)?;
    parse_wide_csv(BufReader::new(file))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusItem {
    pub trace: TraceSet,
    pub label: String,
    pub group: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledCorpus {
    pub items: Vec<CorpusItem>,
}

impl LabeledCorpus {
    pub fn new(items: Vec<CorpusItem>) -> Result<Self, TraceError> {
        if let Some(first) = items.first() {
            let expected = first.trace.metrics();
            for (i, item) in items.iter().enumerate().skip(1) {
                if item.trace.metrics() != expected {
                    return Err(TraceError::InconsistentMetrics {
                        item: i,
                        expected: expected.to_vec(),
                        found: item.trace.metrics().to_vec(),
                    });
                }
            }
        }
        Ok(LabeledCorpus { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Metric ids shared by every item; empty for an empty corpus.
    pub fn metrics(&self) -> &[String] {
        self.items.first().map(|i| i.trace.metrics()).unwrap_or(&[])
    }

    /// Distinct labels in sorted order; this is the class index order.
    pub fn classes(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.items.iter().map(|i| i.label.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn labels(&self) -> Vec<String> {
        self.items.iter().map(|i| i.label.clone()).collect()
    }

    pub fn groups(&self) -> Vec<String> {
        self.items.iter().map(|i| i.group.clone()).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledCorpus {
        LabeledCorpus {
            items: indices.iter().map(|&i| self.items[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub trace: String,
    pub label: String,
    pub group: String,
}

pub fn read_manifest(path: &Path) -> Result<LabeledCorpus, TraceError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let file = fs::File::open(path)?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| TraceError::Parse {
            row: i + 1,
            col: e.column(),
            reason: e.to_string(),
        })?;
        let trace_path = base.join(&entry.trace);
        if !trace_path.is_file() {
            return Err(TraceError::MissingTraceFile(trace_path));
        }
        let trace = read_wide_csv(&trace_path)?;
        items.push(CorpusItem {
            trace,
            label: entry.label,
            group: entry.group,
        });
    }
    LabeledCorpus::new(items)
}

/// Writes every trace as `<dir>/<stem>_<index>.csv` plus `<dir>/manifest.jsonl`.
pub fn write_corpus(corpus: &LabeledCorpus, dir: &Path, stem: &str) -> Result<PathBuf, TraceError> {
    fs::create_dir_all(dir)?;
    let width = corpus.len().max(1).to_string().len();
    let mut manifest = String::new();
    for (i, item) in corpus.items.iter().enumerate() {
        let name = format!("{stem}_{i:0width$}.csv");
        save_wide_csv(&item.trace, &dir.join(&name))?;
        let entry = ManifestEntry {
            trace: name,
            label: item.label.clone(),
            group: item.group.clone(),
        };
        manifest.push_str(&serde_json::to_string(&entry).expect("entry serializes"));
        manifest.push('\n');
    }
    let path = dir.join("manifest.jsonl");
    fs::write(&path, manifest)?;
    Ok(path)
}

/// Cuts every trace to its first `n` seconds.
pub fn truncate_align(corpus: &LabeledCorpus, n: usize) -> Result<LabeledCorpus, TraceError> {
    if n == 0 {
        return Err(TraceError::Invalid("alignment length must be positive".into()));
    }
    let mut items = Vec::with_capacity(corpus.len());
    for (i, item) in corpus.items.iter().enumerate() {
        if item.trace.n_seconds() < n {
            return Err(TraceError::TooShort { item: i, needed: n });
        }
        items.push(CorpusItem {
            trace: item.trace.slice(0, n)?,
            label: item.label.clone(),
            group: item.group.clone(),
        });
    }
    Ok(LabeledCorpus { items })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> TraceSet {
        TraceSet::new(
            vec!["a".into(), "b".into()],
            vec![vec![1.0, 2.5, -3.0], vec![0.1, 1e-12, 4e20]],
            0,
        )
        .unwrap()
    }

    #[test]
    fn parse_three_rows_two_metrics() {
        let text = "t_s,a,b\n0,1,2\n1,3,4\n2,5,6\n";
        let t = parse_wide_csv(text.as_bytes()).unwrap();
        assert_eq!(t.n_seconds(), 3);
        assert_eq!(t.n_metrics(), 2);
        assert_eq!(t.column(1), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn t0_from_first_row() {
        let t = parse_wide_csv("t_s,a\n7,1\n8,2\n".as_bytes()).unwrap();
        assert_eq!(t.t0(), 7);
    }

    #[test]
    fn non_numeric_cell_is_parse_error() {
        let err = parse_wide_csv("t_s,a,b\n0,1,x\n".as_bytes()).unwrap_err();
        assert!(matches!(err, TraceError::Parse { row: 2, col: 3, .. }), "{err:?}");
    }

    #[test]
    fn ragged_row_detected() {
        let err = parse_wide_csv("t_s,a,b\n0,1,2\n1,3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, TraceError::RaggedRows { row: 3, .. }));
    }

    #[test]
    fn gap_in_time_column_rejected() {
        assert!(parse_wide_csv("t_s,a\n0,1\n2,1\n".as_bytes()).is_err());
    }

    #[test]
    fn write_then_read_is_identity() {
        let t = small();
        let mut buf = Vec::new();
        write_wide_csv(&t, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t_s,a,b\n0,1.00000000,"));
        assert!(!text.contains('\r'));
        assert_eq!(parse_wide_csv(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn format_pads_to_nine_digits() {
        assert_eq!(format_value(0.5), "0.500000000");
        assert_eq!(format_value(3.0), "3.00000000");
        assert_eq!(format_value(-12.25), "-12.2500000");
        assert_eq!(format_value(0.0), "0.00000000");
        assert_eq!(format_value(123456789012.0), "123456789012");
        assert_eq!(format_value(1e-12), "1.00000000e-12");
        assert_eq!(format_value(0.1 + 0.2), "0.30000000000000004");
    }

    proptest! {
        #[test]
        fn format_round_trips_bitwise(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let s = format_value(v);
            let back: f64 = s.parse().unwrap();
            prop_assert_eq!(back.to_bits(), v.to_bits(), "{}", s);
        }

        #[test]
        fn truncate_is_idempotent(lens in proptest::collection::vec(5usize..40, 1..5), n in 1usize..5) {
            let items = lens.iter().map(|&len| CorpusItem {
                trace: TraceSet::new(vec!["m".into()], vec![(0..len).map(|x| x as f64).collect()], 0).unwrap(),
                label: "l".into(),
                group: "g".into(),
            }).collect();
            let c = LabeledCorpus::new(items).unwrap();
            let once = truncate_align(&c, n).unwrap();
            let twice = truncate_align(&once, n).unwrap();
            prop_assert_eq!(once, twice);
        }
    }

    fn corpus_of_lengths(lens: &[usize]) -> LabeledCorpus {
        LabeledCorpus::new(
            lens.iter()
                .map(|&len| CorpusItem {
                    trace: TraceSet::new(vec!["m".into()], vec![vec![1.0; len]], 0).unwrap(),
                    label: "x".into(),
                    group: "g".into(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn truncate_cuts_to_common_length() {
        let c = truncate_align(&corpus_of_lengths(&[40, 35]), 30).unwrap();
        assert!(c.items.iter().all(|i| i.trace.n_seconds() == 30));
    }

    #[test]
    fn truncate_zero_rejected() {
        assert!(matches!(
            truncate_align(&corpus_of_lengths(&[40]), 0),
            Err(TraceError::Invalid(_))
        ));
    }

    #[test]
    fn truncate_too_short() {
        assert!(matches!(
            truncate_align(&corpus_of_lengths(&[40, 20]), 30),
            Err(TraceError::TooShort { item: 1, needed: 30 })
        ));
    }

    #[test]
    fn manifest_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let t = small();
        let corpus = LabeledCorpus::new(vec![
            CorpusItem { trace: t.clone(), label: "x".into(), group: "p1".into() },
            CorpusItem { trace: t, label: "y".into(), group: "p2".into() },
        ])
        .unwrap();
        let path = write_corpus(&corpus, dir.path(), "trace").unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.labels(), ["x", "y"]);
        assert_eq!(back.groups(), ["p1", "p2"]);

        fs::write(dir.path().join("bad.jsonl"), "{\"trace\":\"nope.csv\",\"label\":\"x\",\"group\":\"g\"}\n").unwrap();
        assert!(matches!(
            read_manifest(&dir.path().join("bad.jsonl")),
            Err(TraceError::MissingTraceFile(_))
        ));

        let three = TraceSet::new(vec!["a".into(), "b".into(), "c".into()], vec![vec![1.0]; 3], 0).unwrap();
        save_wide_csv(&three, &dir.path().join("three.csv")).unwrap();
        fs::write(
            dir.path().join("mixed.jsonl"),
            "{\"trace\":\"trace_0.csv\",\"label\":\"x\",\"group\":\"g\"}\n{\"trace\":\"three.csv\",\"label\":\"y\",\"group\":\"g\"}\n",
        )
        .unwrap();
        assert!(matches!(
            read_manifest(&dir.path().join("mixed.jsonl")),
            Err(TraceError::InconsistentMetrics { item: 1, .. })
        ));
    }
}
