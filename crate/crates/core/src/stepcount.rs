//! Step detection on 1 Hz metric series and participant counting by
//! per-metric majority vote.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::MetricCatalog;
use crate::simulator::{Profile, SceneType};
use crate::traces::{format_value, TraceSet};

pub const DEFAULT_WINDOW_S: usize = 3;
pub const DEFAULT_MIN_GAP_S: usize = 3;
/// Default detection threshold in units of the metric's noise σ.
pub const DEFAULT_JUMP_SIGMAS: f64 = 4.0;

#[derive(Debug, Error, PartialEq)]
pub enum StepError {
    #[error("series of {found} samples is shorter than {needed}")]
    TooShort { found: usize, needed: usize },
    #[error("trace contains no metric with a known direction and threshold")]
    NoKnownMetrics,
    #[error("unknown metric {0}")]
    UnknownMetric(String),
    #[error("no step found in {0}")]
    NoStepFound(String),
    #[error("invalid detector parameter: {0}")]
    InvalidParam(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    /// First sample of the new level.
    pub t: usize,
    pub sign: i8,
    /// Mean after minus mean before.
    pub magnitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub window_w: usize,
    pub min_gap: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams { window_w: DEFAULT_WINDOW_S, min_gap: DEFAULT_MIN_GAP_S }
    }
}

/// Two-sided moving-mean detector. Sample `t` is a candidate when the mean
/// of `[t, t+w)` differs from the mean of `[t-w, t)` by more than
/// `min_jump`; candidates closer than `min_gap` to a stronger one are
/// suppressed.
pub fn detect_steps(series: &[f64], min_jump: f64, params: DetectorParams) -> Result<Vec<StepEvent>, StepError> {
    let w = params.window_w;
    if w == 0 {
        return Err(StepError::InvalidParam("window_w must be at least 1".into()));
    }
    if series.len() < 2 * w {
        return Err(StepError::TooShort { found: series.len(), needed: 2 * w });
    }
    let mut candidates: Vec<(usize, f64)> = Vec::new();
    for t in w..=series.len() - w {
        let before: f64 = series[t - w..t].iter().sum::<f64>() / w as f64;
        let after: f64 = series[t..t + w].iter().sum::<f64>() / w as f64;
        let d = after - before;
        if d.abs() > min_jump {
            candidates.push((t, d));
        }
    }
    candidates.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
    let mut kept: Vec<(usize, f64)> = Vec::new();
    for (t, d) in candidates {
        if kept.iter().all(|&(k, _)| t.abs_diff(k) >= params.min_gap) {
            kept.push((t, d));
        }
    }
    kept.sort_by_key(|&(t, _)| t);
    Ok(kept
        .into_iter()
        .map(|(t, d)| StepEvent { t, sign: if d > 0.0 { 1 } else { -1 }, magnitude: d })
        .collect())
}

/// Detection threshold per metric: `DEFAULT_JUMP_SIGMAS` × the profile's
/// noise σ for `scene`. Metrics with no join response are left out since
/// they carry no vote.
pub fn default_min_jumps(catalog: &MetricCatalog, profile: &Profile, scene: SceneType) -> BTreeMap<String, f64> {
    catalog
        .entries()
        .iter()
        .filter_map(|d| {
            let p = profile.metrics.get(&d.id)?;
            (p.delta > 0.0).then(|| (d.id.clone(), DEFAULT_JUMP_SIGMAS * p.noise(scene)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCount {
    pub metric: String,
    pub count: usize,
    pub events: Vec<StepEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantCount {
    pub count: usize,
    pub per_metric: Vec<MetricCount>,
}

/// Each voting metric counts the events whose sign matches its load
/// direction; the most frequent count wins, ties going to the smaller one.
pub fn count_participants(
    trace: &TraceSet,
    catalog: &MetricCatalog,
    min_jumps: &BTreeMap<String, f64>,
    params: DetectorParams,
) -> Result<ParticipantCount, StepError> {
    let mut per_metric = Vec::new();
    for (i, id) in trace.metrics().iter().enumerate() {
        let (Some(desc), Some(&jump)) = (catalog.get(id), min_jumps.get(id)) else {
            continue;
        };
        let events = detect_steps(trace.column(i), jump, params)?;
        let want = desc.direction.sign() as i8;
        let count = events.iter().filter(|e| e.sign == want).count();
        per_metric.push(MetricCount { metric: id.clone(), count, events });
    }
    if per_metric.is_empty() {
        return Err(StepError::NoKnownMetrics);
    }
    let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
    for m in &per_metric {
        *votes.entry(m.count).or_default() += 1;
    }
    // BTreeMap iterates counts ascending, so the first maximum is the smallest.
    let mut count = 0;
    let mut best = 0;
    for (&c, &v) in &votes {
        if v > best {
            best = v;
            count = c;
        }
    }
    Ok(ParticipantCount { count, per_metric })
}

/// Time of the first step in `metric`, for aligning capture windows.
pub fn find_anchor(trace: &TraceSet, metric: &str, min_jump: f64, params: DetectorParams) -> Result<usize, StepError> {
    let col = trace
        .column_by_id(metric)
        .ok_or_else(|| StepError::UnknownMetric(metric.to_string()))?;
    detect_steps(col, min_jump, params)?
        .first()
        .map(|e| e.t)
        .ok_or_else(|| StepError::NoStepFound(metric.to_string()))
}

/// CSV `t,metric,sign,magnitude`, metrics in vote order.
pub fn write_steps_csv<W: Write>(count: &ParticipantCount, mut out: W) -> std::io::Result<()> {
    writeln!(out, "t,metric,sign,magnitude")?;
    for m in &count.per_metric {
        for e in &m.events {
            writeln!(out, "{},{},{},{}", e.t, m.metric, e.sign, format_value(e.magnitude))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::builtin_catalog;
    use crate::simulator::{avatar_staircase, NoiseSpec, StaircaseOptions};
    use proptest::prelude::*;

    fn staircase(levels: &[usize], lead: usize, hold: usize, step: f64) -> Vec<f64> {
        let mut s = vec![0.0; lead];
        for (k, _) in levels.iter().enumerate() {
            s.extend(std::iter::repeat_n(step * (k + 1) as f64, hold));
        }
        s
    }

    #[test]
    fn noiseless_staircase_four_steps() {
        let s = staircase(&[0; 4], 10, 5, 1.0);
        let e = detect_steps(&s, 0.5, DetectorParams::default()).unwrap();
        assert_eq!(e.iter().map(|e| e.t).collect::<Vec<_>>(), [10, 15, 20, 25]);
        assert!(e.iter().all(|e| e.sign == 1 && (e.magnitude - 1.0).abs() < 1e-12));
    }

    #[test]
    fn flat_series_has_no_steps() {
        assert!(detect_steps(&[3.0; 30], 0.1, DetectorParams::default()).unwrap().is_empty());
    }

    #[test]
    fn too_short() {
        assert_eq!(
            detect_steps(&[1.0; 5], 0.1, DetectorParams::default()),
            Err(StepError::TooShort { found: 5, needed: 6 })
        );
    }

    #[test]
    fn decreasing_metric_steps_down() {
        let cat = builtin_catalog();
        let out = avatar_staircase(4, 5, &cat, &Profile::builtin(), &StaircaseOptions { noise: Some(NoiseSpec::Global(0.0)), ..Default::default() }).unwrap();
        let col = out.traces.column_by_id("prims_trivially_rejected").unwrap();
        let e = detect_steps(col, 1e-6, DetectorParams::default()).unwrap();
        assert_eq!(e.len(), 4);
        assert!(e.iter().all(|e| e.sign == -1));
    }

    #[test]
    fn counts_noiseless_staircases() {
        let cat = builtin_catalog();
        let profile = Profile::builtin();
        let jumps = default_min_jumps(&cat, &profile, SceneType::Vr);
        assert_eq!(jumps.len(), 22);
        for n in [0, 1, 4] {
            let opts = StaircaseOptions { noise: Some(NoiseSpec::Global(0.0)), ..Default::default() };
            let out = avatar_staircase(n, 5, &cat, &profile, &opts).unwrap();
            let c = count_participants(&out.traces, &cat, &jumps, DetectorParams::default()).unwrap();
            assert_eq!(c.count, n);
        }
    }

    #[test]
    fn unknown_metrics_only() {
        let t = TraceSet::new(vec!["x".into()], vec![vec![0.0; 10]], 0).unwrap();
        let cat = builtin_catalog();
        assert_eq!(
            count_participants(&t, &cat, &BTreeMap::new(), DetectorParams::default()),
            Err(StepError::NoKnownMetrics)
        );
    }

    #[test]
    fn anchors() {
        let mut s = vec![0.0; 12];
        s.extend([5.0; 12]);
        let t = TraceSet::new(vec!["m".into()], vec![s], 0).unwrap();
        assert_eq!(find_anchor(&t, "m", 1.0, DetectorParams::default()), Ok(12));
        let flat = TraceSet::new(vec!["m".into()], vec![vec![1.0; 20]], 0).unwrap();
        assert_eq!(find_anchor(&flat, "m", 1.0, DetectorParams::default()), Err(StepError::NoStepFound("m".into())));
        let mut two = vec![0.0; 5];
        two.extend([4.0; 15]);
        two.extend([8.0; 10]);
        let t2 = TraceSet::new(vec!["m".into()], vec![two], 0).unwrap();
        assert_eq!(find_anchor(&t2, "m", 1.0, DetectorParams::default()), Ok(5));
    }

    #[test]
    fn majority_tie_takes_smaller() {
        let cat = builtin_catalog();
        let mut one = vec![0.0; 10];
        one.extend([5.0; 10]);
        let mut two = one.clone();
        two.extend([10.0; 10]);
        one.extend([5.0; 10]);
        let t = TraceSet::new(
            vec!["gpu_bus_busy".into(), "texture_l2_miss".into()],
            vec![one, two],
            0,
        )
        .unwrap();
        let jumps: BTreeMap<String, f64> = [("gpu_bus_busy".to_string(), 1.0), ("texture_l2_miss".to_string(), 1.0)].into();
        let c = count_participants(&t, &cat, &jumps, DetectorParams::default()).unwrap();
        assert_eq!(c.count, 1);
    }

    proptest! {
        #[test]
        fn shift_and_scale(
            steps in proptest::collection::vec((-5.0f64..5.0).prop_filter("nonzero", |v| v.abs() > 0.5), 1..5),
            shift in 0usize..20,
            a in 0.1f64..10.0,
        ) {
            let mut s = vec![0.0; 8];
            let mut level = 0.0;
            for d in &steps {
                level += d;
                s.extend(std::iter::repeat_n(level, 6));
            }
            let p = DetectorParams::default();
            let base = detect_steps(&s, 0.25, p).unwrap();
            let mut shifted = vec![0.0; shift];
            shifted.extend_from_slice(&s);
            let moved = detect_steps(&shifted, 0.25, p).unwrap();
            prop_assert_eq!(base.len(), moved.len());
            for (x, y) in base.iter().zip(&moved) {
                prop_assert_eq!(x.t + shift, y.t);
                prop_assert_eq!(x.sign, y.sign);
            }
            let scaled: Vec<f64> = s.iter().map(|v| v * a).collect();
            let sc = detect_steps(&scaled, 0.25 * a, p).unwrap();
            prop_assert_eq!(base.len(), sc.len());
            for (x, y) in base.iter().zip(&sc) {
                prop_assert_eq!(x.t, y.t);
                prop_assert_eq!(x.sign, y.sign);
                prop_assert!((x.magnitude * a - y.magnitude).abs() < 1e-9 * a.max(1.0) * x.magnitude.abs().max(1.0));
            }
        }
    }
}
