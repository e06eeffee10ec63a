use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_pathssl");

fn pathssl(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = pathssl(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &str = r#"
master_seed = 11

[synth]
write_png = true

[[synth.benchmark.tasks]]
name = "hue"
label_region = "whole"
label_mode = "per_slide"
patches_per_slide = 4
slides = { train = 10, tune = 4, test = 6 }
classes = [
  { base_hue = 0.85, blob_density = 4.0, blob_radius = [3.0, 6.0], texture_freq = 3.0, noise_sigma = 0.02 },
  { base_hue = 0.05, blob_density = 4.0, blob_radius = [3.0, 6.0], texture_freq = 3.0, noise_sigma = 0.02 },
]

[[synth.benchmark.tasks]]
name = "density"
label_region = "whole"
label_mode = "per_patch"
patches_per_slide = 4
slides = { train = 10, tune = 4, test = 6 }
classes = [
  { base_hue = 0.9, blob_density = 1.0, blob_radius = [3.0, 6.0], texture_freq = 3.0, noise_sigma = 0.02 },
  { base_hue = 0.9, blob_density = 16.0, blob_radius = [3.0, 6.0], texture_freq = 3.0, noise_sigma = 0.02 },
]

[augment]
max_images = 10
n_preview = 1

[rebalance]
k = 3
total = 30

[loss]
instances = 2

[probe.sizes]
bootstrap_replicates = 50

[weak]
task = "hue"
sample_n = 8
bootstrap_replicates = 20

[titrate]
task = "density"
fractions = [0.5, 1.0]
subsamples = 2
"#;

fn setup(dir: &Path, text: &str) -> String {
    let cfg = dir.join("pipeline.toml");
    std::fs::write(&cfg, text).unwrap();
    cfg.to_str().unwrap().to_string()
}

fn finished(run: &Path) {
    assert!(run.join("config.resolved.toml").exists(), "{} lacks the resolved config", run.display());
    assert!(!run.join(".incomplete").exists(), "{} still marked incomplete", run.display());
}

#[test]
fn missing_config_names_the_path() {
    let out = pathssl(&["probe", "--config", "/definitely/not/here.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/definitely/not/here.toml"));
}

#[test]
fn unknown_keys_are_all_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "master_seed = 1\nspeed = 3\n[probe]\nfeature = \"x\"\n[loss.params]\ntemp = 1\n");
    let out = pathssl(&["loss-bench", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for k in ["speed", "probe.feature", "loss.params.temp"] {
        assert!(err.contains(k), "{k} not reported in {err}");
    }
}

#[test]
fn missing_inputs_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "master_seed = 1\n");
    let out = pathssl(&["probe", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("corpus"));
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), SMALL);
    let d = dir.path();
    ok(&["synth-gen", "--config", &cfg]);
    finished(&d.join("corpus"));
    assert!(d.join("corpus/patches/hue/10x/hue-train-s000-p000.png").exists());
    assert!(d.join("corpus/cases/hue/train.tsv").exists());
    assert!(!d.join("corpus/cases/density").exists());
    ok(&["embed-toy", "--config", &cfg]);
    for m in ["5x", "10x", "20x"] {
        assert!(d.join(format!("stores/{m}.pseb")).exists());
    }

    ok(&["probe", "--config", &cfg]);
    let first = std::fs::read(d.join("reports/probe/probe_result.json")).unwrap();
    ok(&["probe", "--config", &cfg, "--threads", "1"]);
    let second = std::fs::read(d.join("reports/probe/probe_result.json")).unwrap();
    assert_eq!(first, second, "probe output differs between runs");
    finished(&d.join("reports/probe"));
    let result: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert!(result["composite"].as_f64().unwrap() > 0.9);

    ok(&["weak-eval", "--config", &cfg]);
    ok(&["titrate", "--config", &cfg]);
    ok(&["rebalance", "--config", &cfg]);
    let ids = std::fs::read_to_string(d.join("reports/rebalance/selected_ids.txt")).unwrap();
    assert_eq!(ids.lines().count(), 30);
    ok(&["loss-bench", "--config", &cfg]);
    ok(&["fit-template", "--config", &cfg]);
    ok(&["augment-preview", "--config", &cfg]);
    let table = ok(&["report", "--config", &cfg]);
    assert!(table.contains("Linear Probe Metric [95% CI]"));
    assert!(d.join("reports/report/bars/probe_hue.tsv").exists());
    assert!(d.join("reports/report/bars/weak_hue.tsv").exists());
    for run in ["weak-eval", "titrate", "rebalance", "loss-bench", "fit-template", "augment-preview", "report"] {
        finished(&d.join("reports").join(run));
    }

    // A different seed lands in a separate run directory and is recorded there.
    let other = d.join("seed99");
    ok(&["probe", "--config", &cfg, "--seed", "99", "--out", other.to_str().unwrap()]);
    let echoed = std::fs::read_to_string(other.join("config.resolved.toml")).unwrap();
    assert!(echoed.contains("master_seed = 99"));
}

#[test]
fn failed_runs_keep_the_marker() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("fractions = [0.5, 1.0]", "fractions = [0.1, 1.0]").replace("task = \"density\"", "task = \"hue\"");
    let cfg = setup(dir.path(), &text);
    ok(&["synth-gen", "--config", &cfg]);
    ok(&["embed-toy", "--config", &cfg]);
    // A single training slide never covers both classes.
    let out = pathssl(&["titrate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3));
    assert!(dir.path().join("reports/titrate/.incomplete").exists());
}

#[test]
fn renders_without_pngs() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("write_png = true", "write_png = false");
    let cfg = setup(dir.path(), &text);
    ok(&["synth-gen", "--config", &cfg]);
    assert!(!dir.path().join("corpus/patches").exists());
    ok(&["embed-toy", "--config", &cfg]);
    ok(&["probe", "--config", &cfg]);
}
