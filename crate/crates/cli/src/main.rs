//! `counterscope` command-line front end.
//!
//! Every subcommand writes its outputs plus `effective_config.json` into
//! `--out`. Exit codes: 0 success, 1 usage error, 2 data or validation
//! error, 3 internal error.

mod svg;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use counterscope::catalog::{builtin_catalog, load_catalog, MetricCatalog, NON_BASE_LEVEL_TEXTURES};
use counterscope::defense::{
    self, AccessLog, Countermeasure, CountermeasureSetup, DetectorConfig, NoiseStrategy,
};
use counterscope::features::Layout;
use counterscope::fixtures;
use counterscope::models::{EvaluationReport, ForestParams, KnnParams, MlpParams, SvmParams, TrainerConfig};
use counterscope::pipeline::{self, FeatureConfig, SavedModel, Split};
use counterscope::selection::{self, CorrelationBasis, DEFAULT_METRIC_CAP};
use counterscope::simulator::{self, CorpusSpec, Profile, SceneScript, SceneType};
use counterscope::stats;
use counterscope::stepcount::{self, DetectorParams};
use counterscope::traces::{self, LabeledCorpus, TraceSet};

const DEFAULT_SEED: u64 = 42;
const SEED_ENV: &str = "COUNTERSCOPE_SEED";

#[derive(Parser)]
#[command(name = "counterscope", version, about = "GPU performance-counter side-channel toolkit")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Serialize)]
struct GlobalArgs {
    /// Seed for all randomized steps. Falls back to the config file, then
    /// the COUNTERSCOPE_SEED environment variable, then 42.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file with defaults for options not given on the command line.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Metric catalog JSON; the builtin 30-metric catalog when omitted.
    #[arg(long, global = true)]
    catalog: Option<PathBuf>,
    /// Simulator profile JSON; the builtin profile when omitted.
    #[arg(long, global = true)]
    profile: Option<PathBuf>,
    /// Output directory, created if needed.
    #[arg(long, global = true, default_value = "counterscope-out")]
    out: PathBuf,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scene script into a trace and pixel-coverage series.
    Simulate(SimulateArgs),
    /// Generate a labeled corpus from a corpus spec.
    GenCorpus(GenCorpusArgs),
    /// Drop metrics that are highly correlated with an earlier one.
    Prune(PruneArgs),
    /// Rank metrics by single-metric classification accuracy.
    Screen(ScreenArgs),
    /// Train a classifier on a stratified split and save it.
    Train(TrainArgs),
    /// Evaluate a saved model on a corpus.
    Eval(EvalArgs),
    /// Stratified k-fold cross-validation.
    Cv(CvArgs),
    /// Leave-one-group-out cross-validation.
    Lopo(ModelArgs),
    /// Grid search with k-fold cross-validation.
    Grid(GridArgs),
    /// Count participants from step changes in a trace.
    Count(CountArgs),
    /// Regress a metric on pixel coverage.
    Correlate(CorrelateArgs),
    /// Countermeasures: noise injection, access detection, degradation curves.
    #[command(subcommand)]
    Defend(DefendCommand),
    /// Write reference datasets.
    #[command(subcommand)]
    Fixture(FixtureCommand),
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    /// Scene script JSON.
    scene: PathBuf,
    /// Metric plotted in fingerprint.svg.
    #[arg(long, default_value = NON_BASE_LEVEL_TEXTURES)]
    plot_metric: String,
}

#[derive(Args, Serialize)]
struct GenCorpusArgs {
    /// Corpus spec JSON.
    spec: PathBuf,
}

#[derive(Args, Serialize)]
struct PruneArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Absolute correlation above which the later metric is dropped [default: 0.90].
    #[arg(long)]
    threshold: Option<f64>,
    /// Correlate raw values or per-item z-scores.
    #[arg(long, value_parser = ["raw", "per-item-zscore"], default_value = "raw")]
    basis: String,
}

#[derive(Args, Serialize)]
struct ScreenArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Accuracy a metric must exceed [default: 0.60].
    #[arg(long)]
    threshold_acc: Option<f64>,
    /// Maximum number of metrics kept.
    #[arg(long, default_value_t = DEFAULT_METRIC_CAP)]
    cap: usize,
}

#[derive(Args, Serialize)]
struct ModelArgs {
    /// JSON-lines corpus manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Classifier family: rf, svm, knn or mlp [default: rf].
    #[arg(long, value_parser = ["rf", "svm", "knn", "mlp"])]
    model: Option<String>,
    /// Feature layout: stat4, stat2 or sequence [default: stat4].
    #[arg(long, value_parser = parse_layout)]
    layout: Option<Layout>,
    /// Comma-separated metric ids [default: every corpus metric].
    #[arg(long, value_delimiter = ',')]
    metrics: Option<Vec<String>>,
    /// Take metrics from a prune report, screen output or JSON id list.
    #[arg(long, conflicts_with = "metrics")]
    metrics_from: Option<PathBuf>,
    /// Full trainer configuration JSON; the run seed replaces its seed.
    #[arg(long)]
    trainer: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Fraction of each class used for training [default: 0.8].
    #[arg(long)]
    train_fraction: Option<f64>,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    /// Saved model from `train`.
    #[arg(long)]
    model_file: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Split from `train`; only its test items are scored.
    #[arg(long)]
    split: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct CvArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Number of folds [default: 5].
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args, Serialize)]
struct GridArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// JSON array of trainer configurations [default: a small grid for --model].
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Number of folds [default: 5].
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args, Serialize)]
struct CountArgs {
    /// Wide-CSV trace.
    #[arg(long)]
    trace: PathBuf,
    /// Per-metric threshold as `metric=value`; repeatable. Overrides the
    /// profile-derived default for that metric.
    #[arg(long = "min-jump", value_parser = parse_key_value)]
    min_jump: Vec<(String, f64)>,
    /// Default threshold in multiples of each metric's profile σ.
    #[arg(long, default_value_t = stepcount::DEFAULT_JUMP_SIGMAS)]
    jump_sigmas: f64,
    /// Scene type the trace was captured in (ar or vr) [default: vr].
    #[arg(long, value_parser = parse_scene)]
    scene: Option<SceneType>,
    #[arg(long, default_value_t = stepcount::DEFAULT_WINDOW_S)]
    window: usize,
    #[arg(long, default_value_t = stepcount::DEFAULT_MIN_GAP_S)]
    min_gap: usize,
}

#[derive(Args, Serialize)]
struct CorrelateArgs {
    /// Pixel-coverage CSV (`t_s,pixels`) as written by `simulate`.
    #[arg(long)]
    pixels: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, default_value = NON_BASE_LEVEL_TEXTURES)]
    metric: String,
}

#[derive(Subcommand)]
enum DefendCommand {
    /// Perturb a trace with a countermeasure.
    Inject(InjectArgs),
    /// Check a profiler access log for periodic reads.
    Detect(DetectArgs),
    /// Attack accuracy as a function of countermeasure strength.
    Curve(CurveArgs),
}

#[derive(Args, Serialize, Clone)]
struct StrategyArgs {
    /// gaussian or dummy-render.
    #[arg(long, value_parser = ["gaussian", "dummy-render"], default_value = "gaussian")]
    strategy: String,
    /// Dummy object size (scene units).
    #[arg(long, default_value_t = 1.0)]
    size: f64,
    /// Dummy object depth (scene units).
    #[arg(long, default_value_t = 2.0)]
    depth: f64,
    /// Seconds each dummy object stays visible.
    #[arg(long, default_value_t = 1.0)]
    hold: f64,
    /// Scene type of the traces (ar or vr) [default: vr].
    #[arg(long, value_parser = parse_scene)]
    scene: Option<SceneType>,
}

impl StrategyArgs {
    fn countermeasure(&self) -> Countermeasure {
        match self.strategy.as_str() {
            "gaussian" => Countermeasure::Gaussian,
            _ => Countermeasure::DummyRender { size_s: self.size, depth_z: self.depth, hold_s: self.hold },
        }
    }
}

#[derive(Args, Serialize)]
struct InjectArgs {
    #[arg(long)]
    trace: PathBuf,
    #[command(flatten)]
    strategy: StrategyArgs,
    /// Noise σ multiplier (gaussian).
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Dummy objects per second (dummy-render).
    #[arg(long, default_value_t = 0.5)]
    rate: f64,
}

#[derive(Args, Serialize)]
struct DetectArgs {
    /// Access log: one timestamp in seconds per line.
    #[arg(long)]
    log: PathBuf,
    #[arg(long, default_value_t = 20)]
    min_events: usize,
    #[arg(long, default_value_t = 0.1)]
    cv_threshold: f64,
    #[arg(long, default_value_t = 1.0)]
    expected_period: f64,
    #[arg(long, default_value_t = 0.25)]
    period_tolerance: f64,
}

#[derive(Args, Serialize)]
struct CurveArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    strategy: StrategyArgs,
    /// Comma-separated, strictly increasing strength levels.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum FixtureCommand {
    /// Corpus whose correlations reproduce the reference pruning table.
    Pruning(PruningFixtureArgs),
    /// Corpus spec for the 20-app fingerprinting demo.
    DemoSpec,
    /// The metric catalog as JSON.
    Catalog,
}

#[derive(Args, Serialize)]
struct PruningFixtureArgs {
    #[arg(long, default_value_t = 4)]
    items: usize,
    #[arg(long, default_value_t = 100)]
    seconds: usize,
}

fn parse_layout(s: &str) -> Result<Layout, String> {
    s.parse()
}

fn parse_scene(s: &str) -> Result<SceneType, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_key_value(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected metric=value, got {s:?}"))?;
    let v: f64 = v.parse().map_err(|_| format!("not a number: {v:?}"))?;
    Ok((k.to_string(), v))
}

/// Defaults read from `--config`. Relative paths are resolved against the
/// config file's directory.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    seed: Option<u64>,
    catalog: Option<PathBuf>,
    profile: Option<PathBuf>,
    model: Option<String>,
    layout: Option<Layout>,
    metrics: Option<Vec<String>>,
    trainer: Option<TrainerConfig>,
    threshold: Option<f64>,
    threshold_acc: Option<f64>,
    train_fraction: Option<f64>,
    k: Option<usize>,
    scene: Option<SceneType>,
    levels: Option<Vec<f64>>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

macro_rules! data_errors {
    ($($t:ty),* $(,)?) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        })*
    };
}

data_errors!(
    counterscope::Error,
    counterscope::catalog::CatalogError,
    counterscope::traces::TraceError,
    counterscope::simulator::SimError,
    counterscope::stats::StatsError,
    counterscope::selection::SelectionError,
    counterscope::features::FeatureError,
    counterscope::models::ModelError,
    counterscope::pipeline::PipelineError,
    counterscope::stepcount::StepError,
    counterscope::defense::DefenseError,
);

type CliResult<T> = std::result::Result<T, CliError>;

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

struct Ctx {
    seed: u64,
    out: PathBuf,
    config: ConfigFile,
    catalog: MetricCatalog,
    profile: Profile,
    /// Resolved settings echoed to effective_config.json.
    effective: BTreeMap<String, Value>,
}

impl Ctx {
    fn new(global: &GlobalArgs) -> CliResult<Ctx> {
        let config = match &global.config {
            None => ConfigFile::default(),
            Some(p) => {
                let mut c: ConfigFile = read_json(p)?;
                let base = p.parent().unwrap_or(Path::new("."));
                c.catalog = c.catalog.map(|x| base.join(x));
                c.profile = c.profile.map(|x| base.join(x));
                c
            }
        };
        let env_seed = match std::env::var(SEED_ENV) {
            Ok(s) => Some(s.trim().parse::<u64>().map_err(|_| CliError::Usage(format!("{SEED_ENV}={s:?} is not a u64")))?),
            Err(_) => None,
        };
        let seed = global.seed.or(config.seed).or(env_seed).unwrap_or(DEFAULT_SEED);
        log::info!("seed {seed}");
        let catalog_path = global.catalog.clone().or(config.catalog.clone());
        let profile_path = global.profile.clone().or(config.profile.clone());
        let catalog = match &catalog_path {
            Some(p) => load_catalog(p)?,
            None => builtin_catalog(),
        };
        let profile = match &profile_path {
            Some(p) => Profile::load(p)?,
            None => Profile::builtin(),
        };
        fs::create_dir_all(&global.out).map_err(|e| CliError::Internal(format!("{}: {e}", global.out.display())))?;
        let mut effective = BTreeMap::new();
        effective.insert("seed".into(), json!(seed));
        effective.insert("catalog".into(), json!(path_or_builtin(&catalog_path)));
        effective.insert("profile".into(), json!(path_or_builtin(&profile_path)));
        effective.insert("out".into(), json!(global.out));
        effective.insert("config".into(), json!(global.config));
        Ok(Ctx { seed, out: global.out.clone(), config, catalog, profile, effective })
    }

    fn set(&mut self, key: &str, v: impl Serialize) {
        self.effective.insert(key.into(), serde_json::to_value(v).expect("serializable"));
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> CliResult<PathBuf> {
        let p = self.out.join(name);
        fs::write(&p, contents).map_err(|e| CliError::Internal(format!("{}: {e}", p.display())))?;
        Ok(p)
    }

    fn write_json(&self, name: &str, v: &impl Serialize) -> CliResult<PathBuf> {
        let mut s = serde_json::to_string_pretty(v).expect("serializable");
        s.push('\n');
        self.write(name, s)
    }

    fn finish(&self) -> CliResult<()> {
        self.write_json("effective_config.json", &self.effective).map(|_| ())
    }

    fn scene(&self, flag: Option<SceneType>) -> SceneType {
        flag.or(self.config.scene).unwrap_or(SceneType::Vr)
    }
}

fn path_or_builtin(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(|| "builtin".to_string(), |p| p.display().to_string())
}

/// Corpus metrics sorted by catalog position; unknown ids keep corpus order
/// at the end.
fn catalog_ordered(metrics: &[String], catalog: &MetricCatalog) -> Vec<String> {
    let mut m = metrics.to_vec();
    m.sort_by_key(|id| catalog.position(id).unwrap_or(usize::MAX));
    m
}

fn metrics_from_file(path: &Path) -> CliResult<Vec<String>> {
    let v: Value = read_json(path)?;
    let list = match &v {
        Value::Object(o) => o
            .get("retained")
            .or_else(|| o.get("selected"))
            .cloned()
            .ok_or_else(|| CliError::Data(format!("{}: no \"retained\" or \"selected\" list", path.display())))?,
        _ => v.clone(),
    };
    let arr = list.as_array().ok_or_else(|| CliError::Data(format!("{}: expected a list of metrics", path.display())))?;
    arr.iter()
        .map(|e| {
            e.as_str()
                .or_else(|| e.get("metric").and_then(Value::as_str))
                .map(str::to_string)
                .ok_or_else(|| CliError::Data(format!("{}: bad metric entry {e}", path.display())))
        })
        .collect()
}

struct Resolved {
    corpus: LabeledCorpus,
    features: FeatureConfig,
    trainer: TrainerConfig,
}

fn resolve_model(ctx: &mut Ctx, args: &ModelArgs) -> CliResult<Resolved> {
    let corpus = traces::read_manifest(&args.manifest)?;
    if corpus.is_empty() {
        return Err(CliError::Data(format!("{}: empty manifest", args.manifest.display())));
    }
    let metrics = match (&args.metrics, &args.metrics_from) {
        (Some(m), _) => m.clone(),
        (None, Some(p)) => metrics_from_file(p)?,
        (None, None) => ctx.config.metrics.clone().unwrap_or_else(|| catalog_ordered(corpus.metrics(), &ctx.catalog)),
    };
    let metrics = selection::enforce_cap(&metrics, DEFAULT_METRIC_CAP).ids;
    let layout = args.layout.or(ctx.config.layout).unwrap_or(Layout::Stat4);
    let trainer = match &args.trainer {
        Some(p) => read_json::<TrainerConfig>(p)?,
        None => match (&args.model, &ctx.config.trainer) {
            (None, Some(t)) => t.clone(),
            (m, _) => {
                let name = m.clone().or(ctx.config.model.clone()).unwrap_or_else(|| "rf".into());
                TrainerConfig::default_for(&name, ctx.seed).ok_or_else(|| CliError::Usage(format!("unknown model {name:?}")))?
            }
        },
    }
    .with_seed(ctx.seed);
    ctx.set("manifest", &args.manifest);
    ctx.set("metrics", &metrics);
    ctx.set("layout", layout);
    ctx.set("trainer", &trainer);
    Ok(Resolved {
        corpus,
        features: FeatureConfig { metrics, layout, pad_value: 0.0 },
        trainer,
    })
}

fn write_report(ctx: &Ctx, report: &EvaluationReport, title: &str) -> CliResult<()> {
    ctx.write_json("report.json", report)?;
    ctx.write("report.csv", report.to_csv())?;
    ctx.write("confusion.svg", svg::confusion_heatmap(title, &report.classes, &report.confusion))?;
    Ok(())
}

fn summary_line(report: &EvaluationReport) -> String {
    match (report.fold_accuracy_mean, report.fold_accuracy_std) {
        (Some(m), Some(s)) => format!(
            "accuracy {:.4} (folds {:.4} ± {:.4}), macro-F1 {:.4}",
            report.accuracy, m, s, report.macro_f1
        ),
        _ => format!("accuracy {:.4}, macro-F1 {:.4}", report.accuracy, report.macro_f1),
    }
}

fn check_fraction(name: &str, v: f64, lo_open: f64, hi: f64, hi_inclusive: bool) -> CliResult<()> {
    let ok = v > lo_open && if hi_inclusive { v <= hi } else { v < hi };
    if ok {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--{name} {v} out of range")))
    }
}

fn cmd_simulate(ctx: &mut Ctx, a: &SimulateArgs) -> CliResult<()> {
    let script = SceneScript::load(&a.scene)?;
    let out = simulator::simulate_with_profile(&script, &ctx.catalog, &ctx.profile)?;
    let mut trace_csv = Vec::new();
    traces::write_wide_csv(&out.traces, &mut trace_csv)?;
    ctx.write("trace.csv", trace_csv)?;
    let pixels = TraceSet::new(vec!["pixels".into()], vec![out.ground_truth_pixels.clone()], out.traces.t0())?;
    let mut pix_csv = Vec::new();
    traces::write_wide_csv(&pixels, &mut pix_csv)?;
    ctx.write("pixels.csv", pix_csv)?;
    ctx.write_json("events.json", &out.event_log)?;
    if let Some(col) = out.traces.column_by_id(&a.plot_metric) {
        let series = [svg::Series {
            name: &a.plot_metric,
            points: col.iter().enumerate().map(|(t, v)| (t as f64, *v)).collect(),
        }];
        ctx.write("fingerprint.svg", svg::line_chart("Metric fingerprint", "time (s)", &a.plot_metric, &series))?;
    }
    ctx.set("scene", &a.scene);
    ctx.set("script", &script);
    println!("simulated {} s × {} metrics", out.traces.n_seconds(), out.traces.n_metrics());
    Ok(())
}

fn cmd_gen_corpus(ctx: &mut Ctx, a: &GenCorpusArgs) -> CliResult<()> {
    let spec = CorpusSpec::load(&a.spec)?;
    let corpus = simulator::generate_corpus(&spec, &ctx.catalog, &ctx.profile)?;
    let manifest = traces::write_corpus(&corpus, &ctx.out, "trace")?;
    ctx.set("spec", &a.spec);
    ctx.set("corpus_seed", spec.seed);
    println!("wrote {} traces to {}", corpus.len(), manifest.display());
    Ok(())
}

fn cmd_prune(ctx: &mut Ctx, a: &PruneArgs) -> CliResult<()> {
    let threshold = a.threshold.or(ctx.config.threshold).unwrap_or(0.90);
    check_fraction("threshold", threshold, 0.0, 1.0, true)?;
    let corpus = traces::read_manifest(&a.manifest)?;
    let basis = if a.basis == "raw" { CorrelationBasis::Raw } else { CorrelationBasis::PerItemZscore };
    let order = catalog_ordered(corpus.metrics(), &ctx.catalog);
    let report = selection::correlation_prune(&corpus, &order, threshold, basis)?;
    ctx.write_json("prune_report.json", &report)?;
    ctx.set("manifest", &a.manifest);
    ctx.set("threshold", threshold);
    ctx.set("basis", basis);
    println!("retained {} of {} metrics: {}", report.retained.len(), order.len(), report.retained.join(","));
    Ok(())
}

fn cmd_screen(ctx: &mut Ctx, a: &ScreenArgs) -> CliResult<()> {
    let threshold = a.threshold_acc.or(ctx.config.threshold_acc).unwrap_or(0.60);
    check_fraction("threshold-acc", threshold, 0.0, 1.0, true)?;
    let r = resolve_model(ctx, &a.model)?;
    let passed = selection::accuracy_screen(&r.corpus, &r.features.metrics, &r.trainer, threshold, ctx.seed)?;
    let ids: Vec<String> = passed.iter().map(|p| p.metric.clone()).collect();
    let capped = selection::enforce_cap(&ids, a.cap);
    ctx.write_json(
        "screened_metrics.json",
        &json!({ "threshold_acc": threshold, "metrics": passed, "selected": capped.ids, "truncated": capped.truncated }),
    )?;
    ctx.set("threshold_acc", threshold);
    ctx.set("cap", a.cap);
    println!("{} metrics above {threshold}", passed.len());
    Ok(())
}

fn cmd_train(ctx: &mut Ctx, a: &TrainArgs) -> CliResult<()> {
    let frac = a.train_fraction.or(ctx.config.train_fraction).unwrap_or(0.8);
    check_fraction("train-fraction", frac, 0.0, 1.0, false)?;
    let r = resolve_model(ctx, &a.model)?;
    let split = Split::new(&r.corpus, frac, ctx.seed)?;
    let (model, report) = pipeline::split_evaluate(&r.corpus, &split, &r.features, &r.trainer)?;
    ctx.write("model.json", model.to_json() + "\n")?;
    ctx.write_json("split.json", &split)?;
    write_report(ctx, &report, "Held-out confusion")?;
    ctx.set("train_fraction", frac);
    println!("{}", summary_line(&report));
    Ok(())
}

fn cmd_eval(ctx: &mut Ctx, a: &EvalArgs) -> CliResult<()> {
    let model = SavedModel::from_json(&read_text(&a.model_file)?)?;
    let corpus = traces::read_manifest(&a.manifest)?;
    let subset = match &a.split {
        Some(p) => {
            let split: Split = read_json(p)?;
            if let Some(bad) = split.test.iter().find(|&&i| i >= corpus.len()) {
                return Err(CliError::Data(format!("split index {bad} outside a corpus of {}", corpus.len())));
            }
            corpus.subset(&split.test)
        }
        None => corpus,
    };
    let report = model.evaluate(&subset)?;
    write_report(ctx, &report, "Confusion")?;
    ctx.set("model_file", &a.model_file);
    ctx.set("manifest", &a.manifest);
    ctx.set("split", &a.split);
    println!("{}", summary_line(&report));
    Ok(())
}

fn cmd_cv(ctx: &mut Ctx, a: &CvArgs) -> CliResult<()> {
    let k = a.k.or(ctx.config.k).unwrap_or(5);
    let r = resolve_model(ctx, &a.model)?;
    let report = pipeline::cross_validate(&r.corpus, k, ctx.seed, &r.features, &r.trainer)?;
    write_report(ctx, &report, &format!("{k}-fold confusion"))?;
    ctx.set("k", k);
    println!("{}", summary_line(&report));
    Ok(())
}

fn cmd_lopo(ctx: &mut Ctx, a: &ModelArgs) -> CliResult<()> {
    let r = resolve_model(ctx, a)?;
    let report = pipeline::lopo(&r.corpus, &r.features, &r.trainer)?;
    write_report(ctx, &report, "Leave-one-group-out confusion")?;
    println!("{}", summary_line(&report));
    Ok(())
}

fn default_grid(base: &TrainerConfig) -> Vec<TrainerConfig> {
    match base {
        TrainerConfig::RandomForest(p) => [50, 100]
            .into_iter()
            .flat_map(|n| [None, Some(8)].into_iter().map(move |d| (n, d)))
            .map(|(n_trees, max_depth)| TrainerConfig::RandomForest(ForestParams { n_trees, max_depth, ..p.clone() }))
            .collect(),
        TrainerConfig::LinearSvm(p) => [1e-4, 1e-3, 1e-2]
            .into_iter()
            .map(|reg_lambda| TrainerConfig::LinearSvm(SvmParams { reg_lambda, ..p.clone() }))
            .collect(),
        TrainerConfig::Knn(_) => [1, 3, 5, 7].into_iter().map(|k| TrainerConfig::Knn(KnnParams { k })).collect(),
        TrainerConfig::Mlp(p) => [16, 32]
            .into_iter()
            .flat_map(|h| [0.01, 0.05].into_iter().map(move |lr| (h, lr)))
            .map(|(hidden, learning_rate)| TrainerConfig::Mlp(MlpParams { hidden, learning_rate, ..p.clone() }))
            .collect(),
    }
}

fn cmd_grid(ctx: &mut Ctx, a: &GridArgs) -> CliResult<()> {
    let k = a.k.or(ctx.config.k).unwrap_or(5);
    let r = resolve_model(ctx, &a.model)?;
    let grid: Vec<TrainerConfig> = match &a.grid {
        Some(p) => read_json::<Vec<TrainerConfig>>(p)?.into_iter().map(|t| t.with_seed(ctx.seed)).collect(),
        None => default_grid(&r.trainer),
    };
    let result = pipeline::grid_search(&r.corpus, &grid, k, ctx.seed, &r.features)?;
    ctx.write_json("grid.json", &result)?;
    write_report(ctx, &result.report, "Best configuration confusion")?;
    ctx.set("k", k);
    ctx.set("grid", &grid);
    println!("best entry {} of {}: {}", result.best_index, grid.len(), summary_line(&result.report));
    Ok(())
}

fn cmd_count(ctx: &mut Ctx, a: &CountArgs) -> CliResult<()> {
    if !(a.jump_sigmas > 0.0) {
        return Err(CliError::Usage("--jump-sigmas must be positive".into()));
    }
    let trace = traces::read_wide_csv(&a.trace)?;
    let scene = ctx.scene(a.scene);
    let mut jumps: BTreeMap<String, f64> = stepcount::default_min_jumps(&ctx.catalog, &ctx.profile, scene)
        .into_iter()
        .map(|(k, v)| (k, v / stepcount::DEFAULT_JUMP_SIGMAS * a.jump_sigmas))
        .collect();
    for (k, v) in &a.min_jump {
        jumps.insert(k.clone(), *v);
    }
    let params = DetectorParams { window_w: a.window, min_gap: a.min_gap };
    let count = stepcount::count_participants(&trace, &ctx.catalog, &jumps, params)?;
    let mut steps = Vec::new();
    stepcount::write_steps_csv(&count, &mut steps).map_err(|e| CliError::Internal(e.to_string()))?;
    ctx.write("steps.csv", steps)?;
    ctx.write_json("count.json", &count)?;
    ctx.set("trace", &a.trace);
    ctx.set("scene", scene);
    ctx.set("min_jumps", &jumps);
    ctx.set("detector", params);
    println!("participants: {}", count.count);
    Ok(())
}

fn cmd_correlate(ctx: &mut Ctx, a: &CorrelateArgs) -> CliResult<()> {
    let pixels = traces::read_wide_csv(&a.pixels)?;
    let trace = traces::read_wide_csv(&a.trace)?;
    let x = pixels
        .column_by_id("pixels")
        .ok_or_else(|| CliError::Data(format!("{}: no pixels column", a.pixels.display())))?;
    let y = trace
        .column_by_id(&a.metric)
        .ok_or_else(|| CliError::Data(format!("{}: no column {}", a.trace.display(), a.metric)))?;
    let fit = stats::linreg(x, y)?;
    let r = stats::pearson(x, y)?;
    let result = json!({
        "metric": a.metric,
        "n": x.len(),
        "slope": fit.slope,
        "intercept": fit.intercept,
        "r_squared": fit.r_squared,
        "pearson": r,
    });
    ctx.write_json("correlation.json", &result)?;
    ctx.set("pixels", &a.pixels);
    ctx.set("trace", &a.trace);
    ctx.set("metric", &a.metric);
    println!("{}", serde_json::to_string(&result).expect("serializable"));
    Ok(())
}

fn cmd_inject(ctx: &mut Ctx, a: &InjectArgs) -> CliResult<()> {
    let trace = traces::read_wide_csv(&a.trace)?;
    let scene = ctx.scene(a.strategy.scene);
    let level = if a.strategy.strategy == "gaussian" { a.sigma } else { a.rate };
    let strategy: NoiseStrategy = a.strategy.countermeasure().at_level(level, ctx.seed);
    let out = defense::inject_noise(&trace, &strategy, &ctx.catalog, &ctx.profile, scene)?;
    let mut csv = Vec::new();
    traces::write_wide_csv(&out, &mut csv)?;
    ctx.write("trace.csv", csv)?;
    ctx.set("trace", &a.trace);
    ctx.set("scene", scene);
    ctx.set("strategy", &strategy);
    Ok(())
}

fn cmd_detect(ctx: &mut Ctx, a: &DetectArgs) -> CliResult<()> {
    let log = AccessLog::parse(&read_text(&a.log)?)?;
    let cfg = DetectorConfig {
        min_events: a.min_events,
        cv_threshold: a.cv_threshold,
        expected_period_s: a.expected_period,
        period_tolerance: a.period_tolerance,
    };
    let verdict = defense::detect_profiler_access(&log, &cfg);
    ctx.write_json("verdict.json", &verdict)?;
    ctx.set("log", &a.log);
    ctx.set("detector", cfg);
    println!("{}", serde_json::to_string(&verdict).expect("serializable"));
    Ok(())
}

fn cmd_curve(ctx: &mut Ctx, a: &CurveArgs) -> CliResult<()> {
    let levels = a
        .levels
        .clone()
        .or(ctx.config.levels.clone())
        .unwrap_or_else(|| vec![0.0, 1.0, 10.0, 100.0, 1000.0]);
    let r = resolve_model(ctx, &a.model)?;
    let scene = ctx.scene(a.strategy.scene);
    let cm = a.strategy.countermeasure();
    let setup = CountermeasureSetup {
        features: &r.features,
        trainer: &r.trainer,
        catalog: &ctx.catalog,
        profile: &ctx.profile,
        scene,
    };
    let curve = defense::evaluate_countermeasure(&r.corpus, &setup, &cm, &levels, ctx.seed)?;
    let mut csv = Vec::new();
    curve.write_csv(&mut csv).map_err(|e| CliError::Internal(e.to_string()))?;
    ctx.write("degradation.csv", csv)?;
    ctx.write_json("curve.json", &curve)?;
    let series = [
        svg::Series { name: "accuracy", points: curve.points.iter().map(|p| (p.level, p.accuracy)).collect() },
        svg::Series { name: "macro-F1", points: curve.points.iter().map(|p| (p.level, p.macro_f1)).collect() },
    ];
    ctx.write("degradation.svg", svg::line_chart("Attack accuracy under noise", "noise level", "score", &series))?;
    ctx.set("levels", &levels);
    ctx.set("scene", scene);
    ctx.set("countermeasure", &cm);
    for p in &curve.points {
        println!("level {}: accuracy {:.4}, macro-F1 {:.4}", p.level, p.accuracy, p.macro_f1);
    }
    Ok(())
}

fn cmd_fixture(ctx: &mut Ctx, f: &FixtureCommand) -> CliResult<()> {
    match f {
        FixtureCommand::Pruning(a) => {
            if a.items == 0 || a.items * a.seconds <= 30 {
                return Err(CliError::Usage("pruning fixture needs more than 30 samples in total".into()));
            }
            let corpus = fixtures::pruning_fixture(&ctx.catalog, a.items, a.seconds, ctx.seed);
            let manifest = traces::write_corpus(&corpus, &ctx.out, "fixture")?;
            ctx.set("fixture", "pruning");
            ctx.set("items", a.items);
            ctx.set("seconds", a.seconds);
            println!("wrote {}", manifest.display());
        }
        FixtureCommand::DemoSpec => {
            let spec = fixtures::demo_app_corpus_spec(&ctx.catalog, ctx.seed);
            let p = ctx.write_json("demo_app_corpus.json", &spec)?;
            ctx.set("fixture", "demo_spec");
            println!("wrote {}", p.display());
        }
        FixtureCommand::Catalog => {
            let p = ctx.write("catalog.json", ctx.catalog.to_json())?;
            ctx.set("fixture", "catalog");
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    let mut ctx = Ctx::new(&cli.global)?;
    let name = match &cli.command {
        Command::Simulate(a) => {
            cmd_simulate(&mut ctx, a)?;
            "simulate"
        }
        Command::GenCorpus(a) => {
            cmd_gen_corpus(&mut ctx, a)?;
            "gen-corpus"
        }
        Command::Prune(a) => {
            cmd_prune(&mut ctx, a)?;
            "prune"
        }
        Command::Screen(a) => {
            cmd_screen(&mut ctx, a)?;
            "screen"
        }
        Command::Train(a) => {
            cmd_train(&mut ctx, a)?;
            "train"
        }
        Command::Eval(a) => {
            cmd_eval(&mut ctx, a)?;
            "eval"
        }
        Command::Cv(a) => {
            cmd_cv(&mut ctx, a)?;
            "cv"
        }
        Command::Lopo(a) => {
            cmd_lopo(&mut ctx, a)?;
            "lopo"
        }
        Command::Grid(a) => {
            cmd_grid(&mut ctx, a)?;
            "grid"
        }
        Command::Count(a) => {
            cmd_count(&mut ctx, a)?;
            "count"
        }
        Command::Correlate(a) => {
            cmd_correlate(&mut ctx, a)?;
            "correlate"
        }
        Command::Defend(DefendCommand::Inject(a)) => {
            cmd_inject(&mut ctx, a)?;
            "defend inject"
        }
        Command::Defend(DefendCommand::Detect(a)) => {
            cmd_detect(&mut ctx, a)?;
            "defend detect"
        }
        Command::Defend(DefendCommand::Curve(a)) => {
            cmd_curve(&mut ctx, a)?;
            "defend curve"
        }
        Command::Fixture(f) => {
            cmd_fixture(&mut ctx, f)?;
            "fixture"
        }
    };
    ctx.set("command", name);
    ctx.finish()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match std::panic::catch_unwind(|| run(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("counterscope: {e}");
            ExitCode::from(e.exit_code())
        }
        Err(_) => ExitCode::from(3),
    }
}
