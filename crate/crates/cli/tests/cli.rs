use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use counterscope::catalog::builtin_catalog;
use counterscope::fixtures::demo_app_corpus_spec;
use counterscope::simulator::{avatar_staircase, default_size_sweep, NoiseSpec, Profile, SceneType, StaircaseOptions};
use counterscope::traces::save_wide_csv;
use serde_json::Value;
use tempfile::TempDir;

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_counterscope"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("COUNTERSCOPE_SEED")
        .output()
        .unwrap()
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = run(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Three-class, eight-repetition slice of the demo corpus.
fn small_corpus(tmp: &TempDir) -> PathBuf {
    let mut spec = demo_app_corpus_spec(&builtin_catalog(), 42);
    spec.classes.truncate(3);
    spec.repetitions = 8;
    let spec_path = tmp.path().join("spec.json");
    fs::write(&spec_path, serde_json::to_string(&spec).unwrap()).unwrap();
    let dir = tmp.path().join("corpus");
    ok(&dir, &["gen-corpus", spec_path.to_str().unwrap()]);
    dir.join("manifest.jsonl")
}

#[test]
fn help_and_usage_exit_codes() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(run(tmp.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(run(tmp.path(), &["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(tmp.path(), &["train", "--manifest", "m", "--model", "tree"]).status.code(), Some(1));
    assert_eq!(run(tmp.path(), &["prune", "--manifest", "m", "--threshold", "1.5"]).status.code(), Some(1));
}

#[test]
fn data_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("missing.jsonl");
    assert_eq!(run(tmp.path(), &["cv", "--manifest", missing.to_str().unwrap()]).status.code(), Some(2));
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{not json").unwrap();
    assert_eq!(run(tmp.path(), &["simulate", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn seed_precedence() {
    let tmp = TempDir::new().unwrap();
    let seed_of = |args: &[&str], env: Option<&str>| -> u64 {
        let out = tmp.path().join("o");
        let mut c = Command::new(env!("CARGO_BIN_EXE_counterscope"));
        c.arg("--out").arg(&out).args(args).args(["fixture", "catalog"]);
        match env {
            Some(v) => c.env("COUNTERSCOPE_SEED", v),
            None => c.env_remove("COUNTERSCOPE_SEED"),
        };
        assert!(c.output().unwrap().status.success());
        read_json(&out.join("effective_config.json"))["seed"].as_u64().unwrap()
    };
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"seed": 5}"#).unwrap();
    let cfg = cfg.to_str().unwrap();
    assert_eq!(seed_of(&[], None), 42);
    assert_eq!(seed_of(&[], Some("9")), 9);
    assert_eq!(seed_of(&["--config", cfg], Some("9")), 5);
    assert_eq!(seed_of(&["--config", cfg, "--seed", "3"], Some("9")), 3);
}

#[test]
fn config_rejects_unknown_keys() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"sede": 5}"#).unwrap();
    assert_eq!(run(tmp.path(), &["--config", cfg.to_str().unwrap(), "fixture", "catalog"]).status.code(), Some(2));
}

#[test]
fn simulate_then_correlate() {
    let tmp = TempDir::new().unwrap();
    let scene = tmp.path().join("scene.json");
    fs::write(&scene, serde_json::to_string(&default_size_sweep(SceneType::Vr, 1)).unwrap()).unwrap();
    let before = fs::read(&scene).unwrap();
    let sim = tmp.path().join("sim");
    ok(&sim, &["simulate", scene.to_str().unwrap()]);
    assert_eq!(fs::read(&scene).unwrap(), before);
    for f in ["trace.csv", "pixels.csv", "events.json", "fingerprint.svg", "effective_config.json"] {
        assert!(sim.join(f).exists(), "{f}");
    }
    let out = ok(
        &tmp.path().join("corr"),
        &[
            "correlate",
            "--pixels",
            sim.join("pixels.csv").to_str().unwrap(),
            "--trace",
            sim.join("trace.csv").to_str().unwrap(),
        ],
    );
    let v: Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["n"], 1000);
    assert!(v["pearson"].as_f64().unwrap() >= 0.95);
    assert!(v["r_squared"].as_f64().unwrap() >= 0.90);
}

#[test]
fn model_commands_on_small_corpus() {
    let tmp = TempDir::new().unwrap();
    let manifest = small_corpus(&tmp);
    let m = manifest.to_str().unwrap();
    let before = fs::read(&manifest).unwrap();

    let screen = tmp.path().join("screen");
    ok(&screen, &["screen", "--manifest", m, "--threshold-acc", "0.5", "--cap", "5"]);
    let s = read_json(&screen.join("screened_metrics.json"));
    assert!(s["selected"].as_array().unwrap().len() <= 5);

    let train = tmp.path().join("train");
    ok(&train, &["train", "--manifest", m, "--metrics-from", screen.join("screened_metrics.json").to_str().unwrap()]);
    for f in ["model.json", "split.json", "report.json", "report.csv", "confusion.svg"] {
        assert!(train.join(f).exists(), "{f}");
    }
    let eff = read_json(&train.join("effective_config.json"));
    assert_eq!(eff["metrics"], s["selected"]);
    assert_eq!(eff["command"], "train");

    for model in ["svm", "knn", "mlp"] {
        let d = tmp.path().join(format!("cv_{model}"));
        ok(&d, &["cv", "--manifest", m, "--model", model, "--k", "4", "--layout", "stat2"]);
        assert!(read_json(&d.join("report.json"))["fold_accuracy_mean"].as_f64().is_some());
    }

    let lopo = tmp.path().join("lopo");
    ok(&lopo, &["lopo", "--manifest", m, "--model", "knn"]);
    assert_eq!(read_json(&lopo.join("report.json"))["folds"].as_array().unwrap().len(), 4);

    let grid = tmp.path().join("grid");
    ok(&grid, &["grid", "--manifest", m, "--model", "knn", "--k", "4"]);
    assert_eq!(read_json(&grid.join("grid.json"))["scores"].as_array().unwrap().len(), 4);

    let seq = tmp.path().join("seq");
    ok(&seq, &["train", "--manifest", m, "--model", "mlp", "--layout", "sequence"]);

    assert_eq!(fs::read(&manifest).unwrap(), before);
}

#[test]
fn cv_is_byte_identical_across_runs() {
    let tmp = TempDir::new().unwrap();
    let manifest = small_corpus(&tmp);
    let m = manifest.to_str().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&a, &["cv", "--manifest", m, "--k", "4"]);
    ok(&b, &["cv", "--manifest", m, "--k", "4"]);
    for f in ["report.json", "report.csv", "confusion.svg"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn count_and_defend_commands() {
    let tmp = TempDir::new().unwrap();
    let cat = builtin_catalog();
    let opts = StaircaseOptions { noise: Some(NoiseSpec::Global(0.0)), ..Default::default() };
    let out = avatar_staircase(3, 5, &cat, &Profile::builtin(), &opts).unwrap();
    let trace = tmp.path().join("stairs.csv");
    save_wide_csv(&out.traces, &trace).unwrap();
    let t = trace.to_str().unwrap();

    let count = tmp.path().join("count");
    let stdout = ok(&count, &["count", "--trace", t]);
    assert!(stdout.contains("participants: 3"), "{stdout}");
    assert_eq!(read_json(&count.join("count.json"))["count"], 3);
    assert!(fs::read_to_string(count.join("steps.csv")).unwrap().starts_with("t,metric,sign,magnitude"));

    let inj = tmp.path().join("inj");
    ok(&inj, &["defend", "inject", "--trace", t, "--sigma", "5"]);
    ok(&tmp.path().join("inj2"), &["defend", "inject", "--trace", t, "--strategy", "dummy-render", "--rate", "1"]);
    let noisy = fs::read_to_string(inj.join("trace.csv")).unwrap();
    assert_ne!(noisy, fs::read_to_string(&trace).unwrap());
    assert_eq!(noisy.lines().count(), fs::read_to_string(&trace).unwrap().lines().count());

    let log = tmp.path().join("access.log");
    fs::write(&log, (0..30).map(|i| format!("{}.0\n", 100 + i)).collect::<String>()).unwrap();
    let det = tmp.path().join("det");
    ok(&det, &["defend", "detect", "--log", log.to_str().unwrap()]);
    assert_eq!(read_json(&det.join("verdict.json"))["flagged"], true);

    fs::write(&log, "1.0\nabc\n").unwrap();
    assert_eq!(run(&det, &["defend", "detect", "--log", log.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn curve_with_dummy_render() {
    let tmp = TempDir::new().unwrap();
    let manifest = small_corpus(&tmp);
    let d = tmp.path().join("curve");
    ok(&d, &["defend", "curve", "--manifest", manifest.to_str().unwrap(), "--strategy", "dummy-render", "--levels", "0,2"]);
    let csv = fs::read_to_string(d.join("degradation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(fs::read_to_string(d.join("degradation.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn fixtures_and_catalog_export() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path().join("fx");
    ok(&d, &["fixture", "catalog"]);
    let cat = fs::read_to_string(d.join("catalog.json")).unwrap();
    assert_eq!(counterscope::catalog::MetricCatalog::from_json(&cat).unwrap(), builtin_catalog());
    ok(&d, &["fixture", "demo-spec"]);
    let shipped = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/demo_app_corpus.json")).unwrap();
    assert_eq!(fs::read_to_string(d.join("demo_app_corpus.json")).unwrap(), shipped);
    ok(&d, &["--catalog", d.join("catalog.json").to_str().unwrap(), "fixture", "pruning", "--items", "2", "--seconds", "50"]);
    assert!(d.join("manifest.jsonl").exists());
}
