//! Countermeasures: trace-level noise injection, its effect on attack
//! accuracy, and a detector for periodic profiler reads.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::MetricCatalog;
use crate::models::TrainerConfig;
use crate::pipeline::{self, FeatureConfig, PipelineError, Split};
use crate::simulator::{coverage_series, mix_seed, Profile, SceneEvent, SceneType, DEFAULT_FOV_WIDTH, DEFAULT_KAPPA};
use crate::stats;
use crate::traces::{format_value, CorpusItem, LabeledCorpus, TraceSet};

#[derive(Debug, Error)]
pub enum DefenseError {
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error("unknown metric {0}")]
    UnknownMetric(String),
    #[error("noise levels must be nonempty and strictly increasing")]
    InvalidLevels,
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("access log line {line}: {reason}")]
    LogParse { line: usize, reason: String },
}

fn default_hold() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum NoiseStrategy {
    /// Adds Normal(0, sigma·σ_i) to metric i, σ_i being its profile noise.
    Gaussian { sigma: f64, seed: u64 },
    /// Renders static dummy objects arriving as a Poisson process.
    DummyRender {
        rate_per_s: f64,
        size_s: f64,
        depth_z: f64,
        #[serde(default = "default_hold")]
        hold_s: f64,
        seed: u64,
    },
}

impl NoiseStrategy {
    fn validate(&self) -> Result<(), DefenseError> {
        let ok = match *self {
            NoiseStrategy::Gaussian { sigma, .. } => sigma.is_finite() && sigma >= 0.0,
            NoiseStrategy::DummyRender { rate_per_s, size_s, depth_z, hold_s, .. } => {
                rate_per_s.is_finite() && rate_per_s >= 0.0 && size_s >= 0.0 && depth_z > 0.0 && hold_s > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(DefenseError::InvalidStrategy(format!("{self:?}")))
        }
    }

    fn with_seed(&self, s: u64) -> NoiseStrategy {
        let mut c = self.clone();
        match &mut c {
            NoiseStrategy::Gaussian { seed, .. } | NoiseStrategy::DummyRender { seed, .. } => *seed = s,
        }
        c
    }
}

/// Arrival times of dummy objects on `[0, duration)`.
pub fn poisson_arrivals(rate_per_s: f64, duration_s: f64, seed: u64) -> Vec<f64> {
    if rate_per_s <= 0.0 {
        return Vec::new();
    }
    let exp = Exp::new(rate_per_s).expect("positive rate");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0.0;
    let mut out = Vec::new();
    loop {
        t += exp.sample(&mut rng);
        if t >= duration_s {
            return out;
        }
        out.push(t);
    }
}

/// Perturbs every metric of `trace`. Values keep their shape and metric
/// order; every metric must have a catalog entry and a profile entry.
pub fn inject_noise(
    trace: &TraceSet,
    strategy: &NoiseStrategy,
    catalog: &MetricCatalog,
    profile: &Profile,
    scene: SceneType,
) -> Result<TraceSet, DefenseError> {
    strategy.validate()?;
    let mut params = Vec::with_capacity(trace.n_metrics());
    for id in trace.metrics() {
        let desc = catalog.get(id).ok_or_else(|| DefenseError::UnknownMetric(id.clone()))?;
        let p = profile.get(id).map_err(|_| DefenseError::UnknownMetric(id.clone()))?;
        params.push((desc.direction.sign(), *p));
    }
    let n = trace.n_seconds();
    let added: Vec<Vec<f64>> = match *strategy {
        NoiseStrategy::Gaussian { sigma, seed } => params
            .iter()
            .enumerate()
            .map(|(i, (_, p))| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let normal = Normal::new(0.0, 1.0).expect("unit normal");
                (0..n).map(|_| normal.sample(&mut rng) * sigma * p.noise(scene)).collect()
            })
            .collect(),
        NoiseStrategy::DummyRender { rate_per_s, size_s, depth_z, hold_s, seed } => {
            let events: Vec<SceneEvent> = poisson_arrivals(rate_per_s, n as f64, seed)
                .into_iter()
                .map(|t| SceneEvent::StaticObject { size_s, depth_z, t_start: t, t_end: t + hold_s })
                .collect();
            let cover = coverage_series(&events, n, DEFAULT_FOV_WIDTH, DEFAULT_KAPPA);
            params
                .iter()
                .map(|(dir, p)| cover.iter().map(|c| dir * p.g * c).collect())
                .collect()
        }
    };
    Ok(trace.map_values(|i, t, v| v + added[i][t]))
}

/// A countermeasure whose strength is set by one scalar level: σ
/// multiplier for Gaussian noise, arrival rate for dummy rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum Countermeasure {
    Gaussian,
    DummyRender {
        size_s: f64,
        depth_z: f64,
        #[serde(default = "default_hold")]
        hold_s: f64,
    },
}

impl Countermeasure {
    pub fn at_level(&self, level: f64, seed: u64) -> NoiseStrategy {
        match *self {
            Countermeasure::Gaussian => NoiseStrategy::Gaussian { sigma: level, seed },
            Countermeasure::DummyRender { size_s, depth_z, hold_s } => NoiseStrategy::DummyRender {
                rate_per_s: level,
                size_s,
                depth_z,
                hold_s,
                seed,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub level: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationCurve {
    pub points: Vec<CurvePoint>,
}

impl DegradationCurve {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "level,accuracy,macro_f1")?;
        for p in &self.points {
            writeln!(out, "{},{},{}", format_value(p.level), format_value(p.accuracy), format_value(p.macro_f1))?;
        }
        Ok(())
    }
}

/// Everything [`evaluate_countermeasure`] needs besides the corpus.
#[derive(Debug, Clone)]
pub struct CountermeasureSetup<'a> {
    pub features: &'a FeatureConfig,
    pub trainer: &'a TrainerConfig,
    pub catalog: &'a MetricCatalog,
    pub profile: &'a Profile,
    pub scene: SceneType,
}

/// Trains once on a clean stratified 80/20 split, then scores the test
/// part perturbed at each level. Test item `j` uses the same noise seed
/// at every level.
pub fn evaluate_countermeasure(
    corpus: &LabeledCorpus,
    setup: &CountermeasureSetup,
    countermeasure: &Countermeasure,
    levels: &[f64],
    seed: u64,
) -> Result<DegradationCurve, DefenseError> {
    if levels.is_empty() || levels.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(DefenseError::InvalidLevels);
    }
    let split = Split::new(corpus, 0.8, seed).map_err(PipelineError::from)?;
    let (model, _) = pipeline::split_evaluate(corpus, &split, setup.features, setup.trainer)?;
    let test = corpus.subset(&split.test);
    let mut points = Vec::with_capacity(levels.len());
    for &level in levels {
        let items = test
            .items
            .iter()
            .enumerate()
            .map(|(j, item)| {
                let strat = countermeasure.at_level(level, 0).with_seed(mix_seed(&[seed, j as u64]));
                Ok(CorpusItem {
                    trace: inject_noise(&item.trace, &strat, setup.catalog, setup.profile, setup.scene)?,
                    label: item.label.clone(),
                    group: item.group.clone(),
                })
            })
            .collect::<Result<Vec<_>, DefenseError>>()?;
        let noisy = LabeledCorpus::new(items).expect("noise keeps metric sets");
        let r = model.evaluate(&noisy)?;
        points.push(CurvePoint { level, accuracy: r.accuracy, macro_f1: r.macro_f1 });
    }
    Ok(DegradationCurve { points })
}

/// Observed profiler read times in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessLog {
    pub timestamps: Vec<f64>,
}

impl AccessLog {
    pub fn new(mut timestamps: Vec<f64>) -> AccessLog {
        timestamps.sort_by(f64::total_cmp);
        AccessLog { timestamps }
    }

    /// One decimal timestamp per line; blank lines are skipped.
    pub fn parse(text: &str) -> Result<AccessLog, DefenseError> {
        let mut ts = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let s = line.trim();
            if s.is_empty() {
                continue;
            }
            let v: f64 = s.parse().map_err(|_| DefenseError::LogParse { line: i + 1, reason: format!("not a number: {s:?}") })?;
            if !v.is_finite() || v < 0.0 {
                return Err(DefenseError::LogParse { line: i + 1, reason: format!("invalid timestamp {s}") });
            }
            ts.push(v);
        }
        Ok(AccessLog::new(ts))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub min_events: usize,
    pub cv_threshold: f64,
    pub expected_period_s: f64,
    pub period_tolerance: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig { min_events: 20, cv_threshold: 0.1, expected_period_s: 1.0, period_tolerance: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionVerdict {
    pub flagged: bool,
    pub estimated_period_s: Option<f64>,
    /// Coefficient of variation of inter-arrival times (population σ / μ).
    pub cv: Option<f64>,
    pub n_events: usize,
}

/// Flags logs with enough events whose inter-arrival times are regular
/// and close to the expected period.
pub fn detect_profiler_access(log: &AccessLog, cfg: &DetectorConfig) -> DetectionVerdict {
    let n_events = log.timestamps.len();
    let gaps: Vec<f64> = log.timestamps.windows(2).map(|w| w[1] - w[0]).collect();
    if gaps.is_empty() {
        return DetectionVerdict { flagged: false, estimated_period_s: None, cv: None, n_events };
    }
    let mu = stats::mean(&gaps);
    let cv = if mu > 0.0 { stats::std(&gaps) / mu } else { f64::INFINITY };
    let median = stats::median(&gaps).expect("nonempty gaps");
    let flagged = n_events >= cfg.min_events
        && cv < cfg.cv_threshold
        && (median - cfg.expected_period_s).abs() <= cfg.period_tolerance;
    DetectionVerdict {
        flagged,
        estimated_period_s: flagged.then_some(median),
        cv: cv.is_finite().then_some(cv),
        n_events,
    }
}
