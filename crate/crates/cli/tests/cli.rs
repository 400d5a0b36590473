use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_crtconf");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("crtconf runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

/// One small dumped replicate: returns (replicate dir, analysis seed).
fn dumped(root: &Path) -> (std::path::PathBuf, String) {
    let out = root.join("sim");
    ok(&[
        "simulate",
        "--preset",
        "fig1",
        "--replicates",
        "1",
        "--set",
        "m=40",
        "--set",
        "n_test=30",
        "--regressor",
        "ols",
        "--set",
        "endpoint_regressor=\"ols\"",
        "--dump",
        "--full-precision",
        "--out",
        &s(&out),
    ]);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("dump/manifest.json")).unwrap()).unwrap();
    let rep = &manifest["replicates"][0];
    (out.join("dump").join(rep["dir"].as_str().unwrap()), rep["analysis_seed"].to_string())
}

fn analyze_args<'a>(dir: &'a str, data: &'a str, test: &'a str, seed: &'a str) -> Vec<&'a str> {
    vec![
        "analyze",
        "--data",
        data,
        "--test",
        test,
        "--preset",
        "fig1",
        "--regressor",
        "ols",
        "--set",
        "endpoint_regressor=\"ols\"",
        "--seed",
        seed,
        "--full-precision",
        "--out",
        dir,
    ]
}

#[test]
fn dumped_trial_round_trips_through_analyze() {
    let tmp = tempfile::tempdir().unwrap();
    let (rep, seed) = dumped(tmp.path());
    let data = s(&rep.join("data.csv"));
    let test = s(&rep.join("test.csv"));
    let out = s(&tmp.path().join("an"));
    let mut args = analyze_args(&out, &data, &test, &seed);
    ok(&args);
    let ours = std::fs::read(tmp.path().join("an/intervals.csv")).unwrap();
    assert_eq!(ours, std::fs::read(rep.join("intervals-cluster-marginal.csv")).unwrap());

    let local = s(&tmp.path().join("an-local"));
    *args.last_mut().unwrap() = &local;
    args.extend(["--subgroup", "r1 >= 2 & r2 = 1"]);
    ok(&args);
    assert_eq!(
        std::fs::read(tmp.path().join("an-local/intervals.csv")).unwrap(),
        std::fs::read(rep.join("intervals-cluster-local.csv")).unwrap()
    );
}

#[test]
fn saved_model_predicts_without_refitting() {
    let tmp = tempfile::tempdir().unwrap();
    let (rep, seed) = dumped(tmp.path());
    let (data, test) = (s(&rep.join("data.csv")), s(&rep.join("test.csv")));
    let out = s(&tmp.path().join("an"));
    let mut args = analyze_args(&out, &data, &test, &seed);
    args.push("--save-model");
    ok(&args);

    let pred = s(&tmp.path().join("pred"));
    ok(&["predict", "--model", &out, "--input", &test, "--full-precision", "--out", &pred]);
    let predictions = std::fs::read_to_string(tmp.path().join("pred/predictions.csv")).unwrap();
    let analyzed = std::fs::read_to_string(tmp.path().join("an/intervals.csv")).unwrap();
    let direct: Vec<String> = analyzed.lines().filter(|l| l.contains(",B-direct,")).map(|l| l.to_string()).collect();
    let predicted: Vec<String> =
        predictions.lines().filter(|l| l.contains(",B-direct,")).map(|l| l.to_string()).collect();
    assert_eq!(direct, predicted);

    let model: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("an/model.json")).unwrap()).unwrap();
    let radius = model["models"][0]["predictors"][0]["control"]["radius"].as_f64().unwrap();
    let first = predictions.lines().find(|l| l.contains(",Y(0),")).unwrap();
    let f: Vec<f64> = first.split(',').skip(4).map(|v| v.parse().unwrap()).collect();
    assert!(((f[1] - f[0]) / 2.0 - radius).abs() < 1e-9);

    let empty = tmp.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let pe = s(&tmp.path().join("pe"));
    ok(&["predict", "--model", &out, "--input", &s(&empty), "--out", &pe]);
    assert_eq!(std::fs::read_to_string(tmp.path().join("pe/predictions.csv")).unwrap().lines().count(), 1);

    let narrow = tmp.path().join("narrow.csv");
    let text: String = std::fs::read_to_string(&test)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string() + "\n")
        .collect();
    std::fs::write(&narrow, text).unwrap();
    let bad = run(&["predict", "--model", &out, "--input", &s(&narrow), "--out", &pe]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("dimension mismatch"));

    let missing = run(&["predict", "--model", &s(&tmp.path().join("nowhere")), "--input", &test]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("model not found"));
}

#[test]
fn configuration_errors_exit_with_two_and_write_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let r = run(&["simulate", "--config", &s(&tmp.path().join("missing.toml")), "--out", &s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!out.exists());

    let file = tmp.path().join("bad.toml");
    std::fs::write(&file, "m = 30\nreplicats = 3\n").unwrap();
    let r = run(&["simulate", "--config", &s(&file), "--out", &s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("replicats"));

    std::fs::write(&file, "m = \"thirty\"\n").unwrap();
    assert_eq!(run(&["simulate", "--config", &s(&file)]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--preset", "fig9"]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--set", "gamma=2"]).status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn schema_violations_list_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data.csv");
    std::fs::write(&data, "cluster_id,treatment,outcome,x_1\na,2,1,0\nb,1,,0\nc,1,1,zz\n").unwrap();
    let r = run(&["analyze", "--data", &s(&data), "--test", &s(&data)]);
    assert_eq!(r.status.code(), Some(2));
    let err = String::from_utf8_lossy(&r.stderr);
    for line in ["line 2", "line 3", "line 4"] {
        assert!(err.contains(line), "{err}");
    }
}

#[test]
fn small_calibration_warns_and_gives_the_real_line() {
    let tmp = tempfile::tempdir().unwrap();
    let (rep, _) = dumped(tmp.path());
    let out = s(&tmp.path().join("an"));
    let r = ok(&[
        "analyze",
        "--data",
        &s(&rep.join("data.csv")),
        "--test",
        &s(&rep.join("test.csv")),
        "--regressor",
        "ols",
        "--set",
        "split=\"calibration_count:5\"",
        "--set",
        "methods=[\"O\",\"B-direct\"]",
        "--format",
        "json",
        "--out",
        &out,
    ]);
    assert!(String::from_utf8_lossy(&r.stderr).contains("5 calibration clusters"));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("an/intervals.json")).unwrap()).unwrap();
    let rows = v.as_array().unwrap();
    assert!(!rows.is_empty());
    for row in rows {
        assert!(row["lower"].is_null() && row["lower_infinite"] == true);
        assert!(row["upper"].is_null() && row["upper_infinite"] == true);
    }
}

#[test]
fn repeated_splits_are_summarized() {
    let tmp = tempfile::tempdir().unwrap();
    let (rep, _) = dumped(tmp.path());
    let out = s(&tmp.path().join("an"));
    ok(&[
        "analyze",
        "--data",
        &s(&rep.join("data.csv")),
        "--test",
        &s(&rep.join("test.csv")),
        "--regressor",
        "ols",
        "--set",
        "methods=[\"B-direct\"]",
        "--splits",
        "4",
        "--out",
        &out,
    ]);
    let summary = std::fs::read_to_string(tmp.path().join("an/summary.csv")).unwrap();
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[4], "4");
    let sd: f64 = row[6].parse().unwrap();
    assert!(sd > 0.0);
}

#[test]
fn config_printing() {
    let defaults = String::from_utf8(ok(&["config", "--defaults"]).stdout).unwrap();
    let table: toml::Table = defaults.parse().unwrap();
    assert_eq!(table["m"].as_integer(), Some(100));
    assert!(defaults.lines().filter(|l| l.starts_with('#')).count() >= table.len());
    let d1 = String::from_utf8(ok(&["config", "--preset", "tableD1", "--alpha", "0.05"]).stdout).unwrap();
    let table: toml::Table = d1.parse().unwrap();
    assert_eq!(table["m"].as_integer(), Some(30));
    assert_eq!(table["alpha"].as_array().unwrap().len(), 1);
}
