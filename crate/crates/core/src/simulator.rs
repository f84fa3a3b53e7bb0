//! Synthetic 1 Hz counter traces driven by declarative scene scripts.
//!
//! Every metric follows the same additive model, sampled at integer seconds:
//!
//! ```text
//! m_i(t) = b_i(scene) + dir_i·g_i·load(t) + dir_i·g_i·app_i(t) + dir_i·Δ_i·joins(t) + ε
//! ```
//!
//! `load(t)` is the clamped screen coverage of visible objects, each
//! contributing `κ·(s/z)²`. An object is visible while its x position lies
//! within `±w·z` of screen center. `app_i(t)` is the active session's
//! intensity with a one-sample half-level ramp on either edge, and `joins(t)`
//! counts avatars that have joined by `t`. Noise is i.i.d. Gaussian; each
//! metric draws from its own ChaCha stream so its noise is independent of
//! which other metrics are simulated.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{MetricCatalog, NON_BASE_LEVEL_TEXTURES};
use crate::traces::{CorpusItem, LabeledCorpus, TraceSet};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid script: {0}")]
    InvalidScript(String),
    #[error("invalid corpus spec: {0}")]
    InvalidSpec(String),
    #[error("profile has no entry for metric {0}")]
    MissingProfile(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// AR passthrough mixes camera feed into the frame; default noise is scaled
/// up by this factor relative to VR.
pub const AR_NOISE_SCALE: f64 = 2.0;
pub const DEFAULT_KAPPA: f64 = 0.02;
pub const DEFAULT_FOV_WIDTH: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SceneType {
    #[serde(rename = "AR")]
    Ar,
    #[serde(rename = "VR")]
    Vr,
}

impl SceneType {
    pub fn as_str(self) -> &'static str {
        match self {
            SceneType::Ar => "AR",
            SceneType::Vr => "VR",
        }
    }
}

impl std::str::FromStr for SceneType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "AR" => Ok(SceneType::Ar),
            "VR" => Ok(SceneType::Vr),
            other => Err(format!("unknown scene type {other:?}")),
        }
    }
}

/// Per-metric response parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricProfile {
    pub b_ar: f64,
    pub b_vr: f64,
    pub g: f64,
    pub delta: f64,
    pub sigma: f64,
}

impl MetricProfile {
    pub fn baseline(&self, scene: SceneType) -> f64 {
        match scene {
            SceneType::Ar => self.b_ar,
            SceneType::Vr => self.b_vr,
        }
    }

    /// Default noise σ for the given scene type.
    pub fn noise(&self, scene: SceneType) -> f64 {
        match scene {
            SceneType::Ar => self.sigma * AR_NOISE_SCALE,
            SceneType::Vr => self.sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Profile {
    pub metrics: BTreeMap<String, MetricProfile>,
}

const DEFAULT_PROFILE_JSON: &str = include_str!("../data/default_profile.json");

impl Profile {
    /// The shipped profile covering the builtin catalog.
    pub fn builtin() -> Profile {
        serde_json::from_str(DEFAULT_PROFILE_JSON).expect("shipped profile parses")
    }

    pub fn load(path: &Path) -> Result<Profile, SimError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn get(&self, id: &str) -> Result<&MetricProfile, SimError> {
        self.metrics
            .get(id)
            .ok_or_else(|| SimError::MissingProfile(id.to_string()))
    }
}

/// Noise setting of a script: one σ for every metric, or σ per metric id.
/// Metrics absent from a per-metric map use the profile default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseSpec {
    Global(f64),
    PerMetric(BTreeMap<String, f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SceneEvent {
    ObjectSweep {
        size_s: f64,
        speed_v: f64,
        depth_z: f64,
        x_start: f64,
        x_end: f64,
        t_start: f64,
    },
    StaticObject {
        size_s: f64,
        depth_z: f64,
        t_start: f64,
        t_end: f64,
    },
    AvatarJoin {
        t_join: f64,
    },
    AppSession {
        app_id: String,
        t_start: f64,
        t_end: f64,
        /// Per-metric gain in catalog order.
        intensity: Vec<f64>,
    },
}

fn default_fov() -> f64 {
    DEFAULT_FOV_WIDTH
}

fn default_kappa() -> f64 {
    DEFAULT_KAPPA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneScript {
    pub scene_type: SceneType,
    pub duration_s: usize,
    pub seed: u64,
    #[serde(default = "default_fov")]
    pub fov_width_w: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default)]
    pub events: Vec<SceneEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<NoiseSpec>,
}

impl SceneScript {
    pub fn new(scene_type: SceneType, duration_s: usize, seed: u64) -> Self {
        SceneScript {
            scene_type,
            duration_s,
            seed,
            fov_width_w: DEFAULT_FOV_WIDTH,
            kappa: DEFAULT_KAPPA,
            events: Vec::new(),
            noise_sigma: None,
        }
    }

    pub fn with_event(mut self, e: SceneEvent) -> Self {
        self.events.push(e);
        self
    }

    pub fn with_noise(mut self, noise: NoiseSpec) -> Self {
        self.noise_sigma = Some(noise);
        self
    }

    pub fn noiseless(self) -> Self {
        self.with_noise(NoiseSpec::Global(0.0))
    }

    pub fn load(path: &Path) -> Result<SceneScript, SimError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn validate(&self, catalog: &MetricCatalog) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScript(m));
        if self.duration_s < 1 {
            return bad("duration_s must be at least 1".into());
        }
        if !(self.fov_width_w > 0.0) || !(self.kappa >= 0.0) {
            return bad("fov_width_w must be positive and kappa nonnegative".into());
        }
        match &self.noise_sigma {
            Some(NoiseSpec::Global(s)) if !(*s >= 0.0) => return bad("noise_sigma must be >= 0".into()),
            Some(NoiseSpec::PerMetric(m)) => {
                if let Some((id, _)) = m.iter().find(|(_, s)| !(**s >= 0.0)) {
                    return bad(format!("noise_sigma for {id} must be >= 0"));
                }
            }
            _ => {}
        }
        let dur = self.duration_s as f64;
        let in_range = |t: f64| (0.0..=dur).contains(&t);
        for (k, e) in self.events.iter().enumerate() {
            let ok = match e {
                SceneEvent::ObjectSweep { size_s, speed_v, depth_z, x_start, x_end, t_start } => {
                    *size_s >= 0.0
                        && *speed_v > 0.0
                        && *depth_z > 0.0
                        && x_start.is_finite()
                        && x_end.is_finite()
                        && in_range(*t_start)
                }
                SceneEvent::StaticObject { size_s, depth_z, t_start, t_end } => {
                    *size_s >= 0.0 && *depth_z > 0.0 && in_range(*t_start) && in_range(*t_end) && t_end > t_start
                }
                SceneEvent::AvatarJoin { t_join } => in_range(*t_join),
                SceneEvent::AppSession { t_start, t_end, intensity, .. } => {
                    if intensity.len() != catalog.len() {
                        return bad(format!(
                            "event {k}: intensity has {} entries, catalog has {}",
                            intensity.len(),
                            catalog.len()
                        ));
                    }
                    in_range(*t_start)
                        && in_range(*t_end)
                        && t_end > t_start
                        && intensity.iter().all(|g| (0.0..=1.0).contains(g))
                }
            };
            if !ok {
                return bad(format!("event {k} violates its constraints: {e:?}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizedEvent {
    pub kind: String,
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput {
    pub traces: TraceSet,
    /// Fraction of the screen covered by visible objects, per second.
    pub ground_truth_pixels: Vec<f64>,
    pub event_log: Vec<RealizedEvent>,
}

/// Coverage of one object at time `t`, or 0 when it is off screen.
fn object_coverage(e: &SceneEvent, t: f64, w: f64, kappa: f64) -> f64 {
    match *e {
        SceneEvent::ObjectSweep { size_s, speed_v, depth_z, x_start, x_end, t_start } => {
            if t < t_start {
                return 0.0;
            }
            let path = (x_end - x_start).abs();
            let travelled = speed_v * (t - t_start);
            if travelled > path + 1e-9 {
                return 0.0;
            }
            let x = x_start + (x_end - x_start).signum() * travelled;
            if x.abs() <= w * depth_z + 1e-9 {
                kappa * (size_s / depth_z).powi(2)
            } else {
                0.0
            }
        }
        SceneEvent::StaticObject { size_s, depth_z, t_start, t_end } => {
            if t >= t_start && t < t_end {
                kappa * (size_s / depth_z).powi(2)
            } else {
                0.0
            }
        }
        _ => 0.0,
    }
}

/// Clamped screen coverage of the given objects at each integer second.
pub fn coverage_series(events: &[SceneEvent], duration_s: usize, w: f64, kappa: f64) -> Vec<f64> {
    (0..duration_s)
        .map(|t| {
            let raw: f64 = events.iter().map(|e| object_coverage(e, t as f64, w, kappa)).sum();
            raw.clamp(0.0, 1.0)
        })
        .collect()
}

// Session level at second t: half level on the first sample and on the first
// sample after t_end, full level in between.
fn session_level(t: f64, t_start: f64, t_end: f64) -> f64 {
    if t < t_start {
        0.0
    } else if t < t_start + 1.0 {
        0.5
    } else if t <= t_end {
        1.0
    } else if t <= t_end + 1.0 {
        0.5
    } else {
        0.0
    }
}

fn realized(e: &SceneEvent) -> RealizedEvent {
    let (kind, t_start, t_end) = match e {
        SceneEvent::ObjectSweep { speed_v, x_start, x_end, t_start, .. } => {
            ("object_sweep".to_string(), *t_start, t_start + (x_end - x_start).abs() / speed_v)
        }
        SceneEvent::StaticObject { t_start, t_end, .. } => ("static_object".to_string(), *t_start, *t_end),
        SceneEvent::AvatarJoin { t_join } => ("avatar_join".to_string(), *t_join, *t_join),
        SceneEvent::AppSession { app_id, t_start, t_end, .. } => (format!("app_session:{app_id}"), *t_start, *t_end),
    };
    RealizedEvent { kind, t_start, t_end }
}

/// Noise σ for each catalog metric under the script's noise setting.
pub fn effective_sigmas(script: &SceneScript, catalog: &MetricCatalog, profile: &Profile) -> Result<Vec<f64>, SimError> {
    catalog
        .entries()
        .iter()
        .map(|d| {
            let default = profile.get(&d.id)?.noise(script.scene_type);
            Ok(match &script.noise_sigma {
                None => default,
                Some(NoiseSpec::Global(s)) => *s,
                Some(NoiseSpec::PerMetric(m)) => m.get(&d.id).copied().unwrap_or(default),
            })
        })
        .collect()
}

pub fn simulate(script: &SceneScript, catalog: &MetricCatalog) -> Result<SimulationOutput, SimError> {
    simulate_with_profile(script, catalog, &Profile::builtin())
}

pub fn simulate_with_profile(
    script: &SceneScript,
    catalog: &MetricCatalog,
    profile: &Profile,
) -> Result<SimulationOutput, SimError> {
    if catalog.is_empty() {
        return Err(SimError::InvalidScript("catalog is empty".into()));
    }
    script.validate(catalog)?;
    let n = script.duration_s;
    let sigmas = effective_sigmas(script, catalog, profile)?;
    let pixels = coverage_series(&script.events, n, script.fov_width_w, script.kappa);

    let joins: Vec<f64> = (0..n)
        .map(|t| {
            script
                .events
                .iter()
                .filter(|e| matches!(e, SceneEvent::AvatarJoin { t_join } if *t_join <= t as f64))
                .count() as f64
        })
        .collect();

    let mut columns = Vec::with_capacity(catalog.len());
    for (i, desc) in catalog.entries().iter().enumerate() {
        let p = profile.get(&desc.id)?;
        let dir = desc.direction.sign();
        let base = p.baseline(script.scene_type);
        let mut rng = ChaCha8Rng::seed_from_u64(script.seed);
        rng.set_stream(i as u64);
        let noise = Normal::new(0.0, 1.0).expect("unit normal");
        let col = (0..n)
            .map(|t| {
                let tf = t as f64;
                let app: f64 = script
                    .events
                    .iter()
                    .map(|e| match e {
                        SceneEvent::AppSession { t_start, t_end, intensity, .. } => {
                            intensity[i] * session_level(tf, *t_start, *t_end)
                        }
                        _ => 0.0,
                    })
                    .sum();
                let eps = noise.sample(&mut rng) * sigmas[i];
                let v = base + dir * p.g * (pixels[t] + app) + dir * p.delta * joins[t] + eps;
                match desc.valid_range() {
                    Some((lo, hi)) => v.clamp(lo, hi),
                    None => v,
                }
            })
            .collect();
        columns.push(col);
    }

    let traces = TraceSet::new(catalog.ids(), columns, 0)
        .map_err(|e| SimError::InvalidScript(e.to_string()))?
        .with_meta("scene_type", script.scene_type.as_str())
        .with_meta("seed", script.seed.to_string());
    Ok(SimulationOutput {
        traces,
        ground_truth_pixels: pixels,
        event_log: script.events.iter().map(realized).collect(),
    })
}

/// A labeled scene template; repetitions differ only in their seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTemplate {
    pub label: String,
    pub script: SceneScript,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub classes: Vec<ClassTemplate>,
    pub repetitions: usize,
    pub seed: u64,
    /// Repetition `r` is attributed to group `p{r % groups}`.
    #[serde(default = "one")]
    pub groups: usize,
}

fn one() -> usize {
    1
}

impl CorpusSpec {
    pub fn load(path: &Path) -> Result<CorpusSpec, SimError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// SplitMix64 finalizer, used to derive independent child seeds.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

pub fn generate_corpus(spec: &CorpusSpec, catalog: &MetricCatalog, profile: &Profile) -> Result<LabeledCorpus, SimError> {
    use rayon::prelude::*;
    if spec.classes.len() < 2 {
        return Err(SimError::InvalidSpec("need at least 2 classes".into()));
    }
    if spec.repetitions < 1 || spec.groups < 1 {
        return Err(SimError::InvalidSpec("repetitions and groups must be at least 1".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..spec.classes.len())
        .flat_map(|c| (0..spec.repetitions).map(move |r| (c, r)))
        .collect();
    let items: Result<Vec<CorpusItem>, SimError> = jobs
        .par_iter()
        .map(|&(c, r)| {
            let class = &spec.classes[c];
            let mut script = class.script.clone();
            script.seed = mix_seed(&[spec.seed, c as u64, r as u64]);
            let out = simulate_with_profile(&script, catalog, profile)?;
            Ok(CorpusItem {
                trace: out.traces.with_meta("label", class.label.clone()),
                label: class.label.clone(),
                group: format!("p{}", r % spec.groups),
            })
        })
        .collect();
    LabeledCorpus::new(items?).map_err(|e| SimError::InvalidSpec(e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaircaseOptions {
    pub scene_type: SceneType,
    pub lead_s: usize,
    pub tail_s: usize,
    pub seed: u64,
    pub noise: Option<NoiseSpec>,
}

impl Default for StaircaseOptions {
    fn default() -> Self {
        StaircaseOptions {
            scene_type: SceneType::Vr,
            lead_s: 10,
            tail_s: 10,
            seed: 0,
            noise: None,
        }
    }
}

/// Avatars join at `lead_s`, `lead_s + hold_s`, ... ; the trace runs for
/// `lead_s + n·hold_s + tail_s` seconds.
pub fn staircase_script(n: usize, hold_s: usize, opts: &StaircaseOptions) -> Result<SceneScript, SimError> {
    if hold_s == 0 {
        return Err(SimError::InvalidScript("hold_s must be positive".into()));
    }
    let duration = opts.lead_s + n * hold_s + opts.tail_s;
    let mut script = SceneScript::new(opts.scene_type, duration.max(1), opts.seed);
    script.noise_sigma = opts.noise.clone();
    for k in 0..n {
        script.events.push(SceneEvent::AvatarJoin {
            t_join: (opts.lead_s + k * hold_s) as f64,
        });
    }
    Ok(script)
}

pub fn avatar_staircase(
    n: usize,
    hold_s: usize,
    catalog: &MetricCatalog,
    profile: &Profile,
    opts: &StaircaseOptions,
) -> Result<SimulationOutput, SimError> {
    let script = staircase_script(n, hold_s, opts)?;
    let out = simulate_with_profile(&script, catalog, profile)?;
    Ok(SimulationOutput {
        traces: out.traces.with_meta("participants", n.to_string()),
        ..out
    })
}

/// One object per second, size uniform in `[size_min, size_max]` at depth
/// `depth_z`, to sample a wide range of pixel coverage.
pub fn size_sweep_script(
    scene_type: SceneType,
    n_samples: usize,
    size_range: (f64, f64),
    depth_z: f64,
    seed: u64,
) -> SceneScript {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x5a5a]));
    let mut script = SceneScript::new(scene_type, n_samples, seed);
    for t in 0..n_samples {
        let size_s = rng.random_range(size_range.0..=size_range.1);
        script.events.push(SceneEvent::StaticObject {
            size_s,
            depth_z,
            t_start: t as f64,
            t_end: (t + 1) as f64,
        });
    }
    script
}

/// Default pixel-correlation sweep: 1000 samples of a single object at
/// depth 2 with sizes between 0.25 and 4 units.
pub fn default_size_sweep(scene_type: SceneType, seed: u64) -> SceneScript {
    size_sweep_script(scene_type, 1000, (0.25, 4.0), 2.0, seed)
}

/// A single object sweeping along x at constant speed.
pub fn sweep_script(scene_type: SceneType, duration_s: usize, size_s: f64, speed_v: f64, depth_z: f64, seed: u64) -> SceneScript {
    SceneScript::new(scene_type, duration_s, seed).with_event(SceneEvent::ObjectSweep {
        size_s,
        speed_v,
        depth_z,
        x_start: -15.0,
        x_end: 15.0,
        t_start: 0.0,
    })
}

/// Number of samples strictly above `threshold`.
pub fn active_width(series: &[f64], threshold: f64) -> usize {
    series.iter().filter(|&&v| v > threshold).count()
}

pub fn nblt_column(out: &SimulationOutput) -> &[f64] {
    out.traces
        .column_by_id(NON_BASE_LEVEL_TEXTURES)
        .expect("catalog includes non-base-level textures")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::builtin_catalog;
    use crate::stats;

    fn cat() -> MetricCatalog {
        builtin_catalog()
    }

    #[test]
    fn builtin_profile_covers_catalog() {
        let p = Profile::builtin();
        for d in cat().entries() {
            p.get(&d.id).unwrap();
        }
        let affected = p.metrics.values().filter(|m| m.delta > 0.0).count();
        assert_eq!(affected, 22);
    }

    #[test]
    fn sweep_width_follows_speed() {
        let base = Profile::builtin().metrics[NON_BASE_LEVEL_TEXTURES].b_vr;
        for (v, expected) in [(1.0, 30.0), (2.0, 15.0)] {
            let out = simulate(&sweep_script(SceneType::Vr, 40, 1.0, v, 2.0, 7).noiseless(), &cat()).unwrap();
            let w = active_width(nblt_column(&out), base + 1e-9) as f64;
            assert!((w - expected).abs() <= 1.0, "v={v}: width {w}");
        }
    }

    #[test]
    fn closer_object_raises_mean() {
        let mean_at = |z| {
            let out = simulate(&sweep_script(SceneType::Vr, 40, 1.0, 1.0, z, 3).noiseless(), &cat()).unwrap();
            stats::mean(nblt_column(&out))
        };
        assert!(mean_at(2.0) > mean_at(3.0));
    }

    #[test]
    fn pixels_stay_in_unit_interval() {
        let script = SceneScript::new(SceneType::Vr, 10, 1).with_event(SceneEvent::StaticObject {
            size_s: 100.0,
            depth_z: 1.0,
            t_start: 0.0,
            t_end: 5.0,
        });
        let out = simulate(&script, &cat()).unwrap();
        assert!(out.ground_truth_pixels.iter().all(|p| (0.0..=1.0).contains(p)));
        assert_eq!(out.ground_truth_pixels[0], 1.0);
        assert_eq!(out.ground_truth_pixels[5], 0.0);
    }

    #[test]
    fn deterministic_for_equal_scripts() {
        let s = default_size_sweep(SceneType::Ar, 11);
        assert_eq!(simulate(&s, &cat()).unwrap(), simulate(&s, &cat()).unwrap());
    }

    #[test]
    fn sub_second_crossing_touches_at_most_one_sample() {
        let mut s = sweep_script(SceneType::Vr, 10, 1.0, 500.0, 0.5, 0).noiseless();
        if let SceneEvent::ObjectSweep { t_start, x_start, x_end, .. } = &mut s.events[0] {
            *t_start = 2.5;
            *x_start = -100.0;
            *x_end = 100.0;
        }
        let out = simulate(&s, &cat()).unwrap();
        assert!(out.ground_truth_pixels.iter().filter(|p| **p > 0.0).count() <= 1);
    }

    #[test]
    fn staircase_levels() {
        let opts = StaircaseOptions { noise: Some(NoiseSpec::Global(0.0)), ..Default::default() };
        let out = avatar_staircase(4, 5, &cat(), &Profile::builtin(), &opts).unwrap();
        let nblt = nblt_column(&out);
        let ups = nblt.windows(2).filter(|w| w[1] > w[0]).count();
        assert_eq!(ups, 4);
        let ptr = out.traces.column_by_id("prims_trivially_rejected").unwrap();
        assert_eq!(ptr.windows(2).filter(|w| w[1] < w[0]).count(), 4);
        assert_eq!(ptr.windows(2).filter(|w| w[1] > w[0]).count(), 0);

        let flat = avatar_staircase(0, 5, &cat(), &Profile::builtin(), &opts).unwrap();
        for col in flat.traces.columns() {
            assert!(col.iter().all(|v| *v == col[0]));
        }
    }

    #[test]
    fn app_session_ramps() {
        let c = cat();
        let mut intensity = vec![0.0; c.len()];
        let idx = c.position(NON_BASE_LEVEL_TEXTURES).unwrap();
        intensity[idx] = 1.0;
        let s = SceneScript::new(SceneType::Vr, 12, 0)
            .with_event(SceneEvent::AppSession { app_id: "a".into(), t_start: 2.0, t_end: 8.0, intensity })
            .noiseless();
        let out = simulate(&s, &c).unwrap();
        let p = Profile::builtin().metrics[NON_BASE_LEVEL_TEXTURES];
        let col = nblt_column(&out);
        let lvl: Vec<f64> = col.iter().map(|v| ((v - p.b_vr) / p.g * 2.0).round() / 2.0).collect();
        assert_eq!(lvl, [0.0, 0.0, 0.5, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn invalid_scripts_rejected() {
        let c = cat();
        let zero = SceneScript::new(SceneType::Vr, 0, 0);
        assert!(matches!(simulate(&zero, &c), Err(SimError::InvalidScript(_))));
        let neg_z = sweep_script(SceneType::Vr, 10, 1.0, 1.0, -1.0, 0);
        assert!(simulate(&neg_z, &c).is_err());
        let late = SceneScript::new(SceneType::Vr, 10, 0).with_event(SceneEvent::AvatarJoin { t_join: 11.0 });
        assert!(simulate(&late, &c).is_err());
        let neg_noise = SceneScript::new(SceneType::Vr, 10, 0).with_noise(NoiseSpec::Global(-1.0));
        assert!(simulate(&neg_noise, &c).is_err());
    }

    #[test]
    fn corpus_generation_is_balanced_and_deterministic() {
        let c = cat();
        let spec = CorpusSpec {
            classes: (0..3)
                .map(|k| ClassTemplate {
                    label: format!("c{k}"),
                    script: SceneScript::new(SceneType::Vr, 5, 0),
                })
                .collect(),
            repetitions: 20,
            seed: 9,
            groups: 4,
        };
        let a = generate_corpus(&spec, &c, &Profile::builtin()).unwrap();
        assert_eq!(a.len(), 60);
        for k in 0..3 {
            assert_eq!(a.items.iter().filter(|i| i.label == format!("c{k}")).count(), 20);
        }
        assert_eq!(a, generate_corpus(&spec, &c, &Profile::builtin()).unwrap());

        let one = CorpusSpec { classes: spec.classes[..1].to_vec(), ..spec };
        assert!(matches!(generate_corpus(&one, &c, &Profile::builtin()), Err(SimError::InvalidSpec(_))));
    }

    #[test]
    fn script_json_round_trip() {
        let s = staircase_script(2, 5, &StaircaseOptions::default()).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        let back: SceneScript = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        let minimal: SceneScript =
            serde_json::from_str(r#"{"scene_type":"AR","duration_s":3,"seed":1,"noise_sigma":{"gpu_bus_busy":0.5}}"#).unwrap();
        assert_eq!(minimal.fov_width_w, DEFAULT_FOV_WIDTH);
        assert!(matches!(minimal.noise_sigma, Some(NoiseSpec::PerMetric(_))));
    }
}
