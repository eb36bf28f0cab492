use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fallsel::io::{load_feedback, save_feedback, Format};
use fallsel::simfeed::{generate_stream, StreamSpec};
use fallsel::FeedbackSample;

const SMALL: &str = r#"
seeds = [3]
rounds = 2

[benchmark]
evaluation_windows = 60

[benchmark.population]
subjects = 4

[benchmark.deployment]
windows_per_round = 80

[snn]
epochs = 3

[detector]
epochs = 5
"#;

fn fallsel(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fallsel"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(o));
}

#[test]
fn select_keeps_a_fifth_of_the_pool() {
    let dir = setup();
    let d = dir.path();
    ok(&fallsel(d, &["--config", "small.toml", "--out-dir", "gen", "generate"]));
    ok(&fallsel(d, &["--config", "small.toml", "--out-dir", "snn", "train-snn", "--input", "gen/base.csv"]));

    let rounds = generate_stream(&StreamSpec { rounds: 1, windows_per_round: 100, fall_probability: 0.2, ..Default::default() }).unwrap();
    let pool: Vec<FeedbackSample> = rounds[0].iter().map(|w| FeedbackSample::from_oracle(w.clone(), 1).unwrap()).collect();
    save_feedback(&pool, &d.join("pool.csv"), Format::Csv).unwrap();

    let o = fallsel(d, &["--out-dir", "sel", "select", "--model", "snn/embedder.json", "--input", "pool.csv", "--fraction", "0.2"]);
    ok(&o);
    let selected = load_feedback(&d.join("sel/selected.csv"), Format::Csv).unwrap();
    assert_eq!(selected.len(), 20);
    let trace = fs::read_to_string(d.join("sel/selection.csv")).unwrap();
    assert_eq!(trace.lines().filter(|l| l.ends_with(",true")).count(), 20, "{trace}");
    assert!(d.join("sel/manifest.json").exists());
}

#[test]
fn missing_input_is_an_io_error_naming_the_path() {
    let dir = setup();
    let o = fallsel(dir.path(), &["--out-dir", "x", "featurize", "--input", "no_such_file.csv"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("no_such_file.csv"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
}

#[test]
fn invalid_values_are_config_errors() {
    let dir = setup();
    let d = dir.path();
    fs::write(d.join("bad.toml"), "rounds = 0\n").unwrap();
    let o = fallsel(d, &["--config", "bad.toml", "generate"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    fs::write(d.join("broken.toml"), "rounds = [\n").unwrap();
    assert_eq!(fallsel(d, &["--config", "broken.toml", "generate"]).status.code(), Some(1));
    let o = fallsel(d, &["--config", "small.toml", "experiment", "--fraction", "1.5"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let o = fallsel(d, &["--config", "small.toml", "experiment", "--mode", "XYZ"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(fallsel(d, &["no-such-command"]).status.code(), Some(1));
    assert_eq!(fallsel(d, &["--help"]).status.code(), Some(0));
}

#[test]
fn experiment_reports_are_reproducible() {
    let dir = setup();
    let d = dir.path();
    for out in ["a", "b"] {
        ok(&fallsel(d, &["--config", "small.toml", "--seed", "9", "--out-dir", out, "experiment", "--strategy", "selective"]));
    }
    for name in ["rounds.csv", "rounds_summary.txt", "manifest.json"] {
        let a = fs::read(d.join("a").join(name)).unwrap();
        let b = fs::read(d.join("b").join(name)).unwrap();
        assert!(a == b, "{name} differs");
    }
    let rounds = fs::read_to_string(d.join("a/rounds.csv")).unwrap();
    assert!(rounds.contains("# seeds: 9"));
    // Base round plus two personalization rounds for the one seed.
    assert_eq!(rounds.lines().filter(|l| l.starts_with("9,")).count(), 3);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(d.join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "experiment");
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 2);
}

#[test]
fn stage_commands_chain() {
    let dir = setup();
    let d = dir.path();
    let c = ["--config", "small.toml"];
    let run = |extra: &[&str]| {
        let args: Vec<&str> = c.iter().chain(extra).copied().collect();
        let o = fallsel(d, &args);
        ok(&o);
        o
    };
    run(&["--out-dir", "gen", "generate"]);
    run(&["--out-dir", "feat", "featurize", "--input", "gen/base.csv", "--normalize"]);
    let features = fs::read_to_string(d.join("feat/features.csv")).unwrap();
    assert_eq!(features.lines().next().unwrap().split(',').count(), 10);
    run(&["--out-dir", "base", "retrain", "--mode", "base", "--base-data", "gen/base.csv", "--test", "gen/evaluation.csv"]);
    assert!(d.join("base/metrics.json").exists());
    run(&["--out-dir", "sim", "simulate", "--model", "base/detector.json", "--input", "gen/stream.csv"]);
    run(&["--out-dir", "fsl", "retrain", "--mode", "FSL", "--base-data", "gen/base.csv", "--feedback", "sim/feedback.csv", "--base-model", "base/detector.json"]);
    let o = fallsel(d, &["--config", "small.toml", "--out-dir", "tl", "retrain", "--mode", "TL", "--base-data", "gen/base.csv"]);
    assert_eq!(o.status.code(), Some(1), "TL without a start model");
    run(&["--out-dir", "snn", "train-snn", "--input", "gen/base.csv"]);
    let o = run(&["--out-dir", "cl", "cluster", "--model", "snn/embedder.json", "--input", "gen/evaluation.csv"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("purity"));
}
