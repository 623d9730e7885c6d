use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ftucker::data::read_index_csv;
use ftucker::model::FittedModel;
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ftucker"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

fn synth_and_fit(dir: &Path, n: &str, seed: &str) {
    ok(&["synth", "--n", n, "--seed", seed, "--out", p(dir)]);
    ok(&[
        "fit",
        "--data",
        p(&dir.join("data.csv")),
        "--nu",
        "1.5",
        "--lengthscale",
        "0.1",
        "--variance",
        "1.0",
        "--rank",
        "1",
        "--iters",
        "20",
        "--seed",
        seed,
        "--out",
        p(&dir.join("fit")),
    ]);
}

#[test]
fn synth_row_counts_and_byte_identity() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(&["synth", "--out", p(a.path())]);
    assert_eq!(rows(&a.path().join("data.csv")), 650);
    assert_eq!(rows(&a.path().join("truth.csv")), 2500);
    ok(&["synth", "--n", "130", "--out", p(b.path())]);
    assert_eq!(rows(&b.path().join("data.csv")), 130);
    ok(&["synth", "--out", p(b.path())]);
    assert_eq!(
        fs::read(a.path().join("data.csv")).unwrap(),
        fs::read(b.path().join("data.csv")).unwrap()
    );
}

#[test]
fn fit_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth_and_fit(a.path(), "200", "3");
    synth_and_fit(b.path(), "200", "3");
    for f in ["metrics.json", "trace.csv", "model.json"] {
        assert_eq!(
            fs::read(a.path().join("fit").join(f)).unwrap(),
            fs::read(b.path().join("fit").join(f)).unwrap(),
            "{f}"
        );
    }
    let manifest = |d: &Path| -> Value {
        let mut v: Value = serde_json::from_str(&fs::read_to_string(d.join("fit/manifest.json")).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("timings");
        v.as_object_mut().unwrap().remove("data");
        v
    };
    assert_eq!(manifest(a.path()), manifest(b.path()));
    let m = manifest(a.path());
    assert_eq!(m["seed"], 3);
    assert_eq!(m["observations"], 200);
    assert_eq!(m["trace"].as_array().unwrap().len(), m["iterations"].as_u64().unwrap() as usize);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--n", "150", "--out", p(dir.path())]);
    let data = dir.path().join("data.csv");
    for t in ["1", "3"] {
        ok(&["fit", "--data", p(&data), "--iters", "10", "--threads", t, "--out", p(&dir.path().join(t))]);
    }
    assert_eq!(
        fs::read(dir.path().join("1/model.json")).unwrap(),
        fs::read(dir.path().join("3/model.json")).unwrap()
    );
}

#[test]
fn predict_matches_library_and_eval_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    synth_and_fit(dir.path(), "120", "1");
    let model_path = dir.path().join("fit/model.json");
    let data = dir.path().join("data.csv");
    let pred = dir.path().join("pred.csv");
    ok(&["predict", "--model", p(&model_path), "--index", p(&data), "--with-var", "--out", p(&pred)]);

    let model = FittedModel::<f64>::load_json(&model_path).unwrap();
    let idx = read_index_csv::<f64>(&data, 2).unwrap();
    let text = fs::read_to_string(&pred).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "i_1,i_2,mean,var");
    let mut count = 0;
    for (line, x) in lines.zip(&idx) {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cols[2], model.predict_mean(x).unwrap());
        assert_eq!(cols[3], model.predict(x).unwrap().1);
        count += 1;
    }
    assert_eq!(count, 120);

    let metrics = dir.path().join("eval.json");
    ok(&["eval", "--model", p(&model_path), "--data", p(&data), "--out", p(&metrics)]);
    let v: Value = serde_json::from_str(&fs::read_to_string(&metrics).unwrap()).unwrap();
    let expected = model.evaluate(&ftucker::Dataset::load_csv(&data, 2).unwrap()).unwrap();
    assert_eq!(v["rmse"].as_f64().unwrap(), expected.rmse);
    assert_eq!(v["mae"].as_f64().unwrap(), expected.mae);
}

#[test]
fn export_traj_writes_grid_rows_per_mode() {
    let dir = tempfile::tempdir().unwrap();
    synth_and_fit(dir.path(), "100", "2");
    let out = dir.path().join("traj");
    ok(&["export-traj", "--model", p(&dir.path().join("fit/model.json")), "--grid", "200", "--out", p(&out)]);
    for k in 1..=2 {
        let f = out.join(format!("mode_{k}.csv"));
        assert_eq!(rows(&f), 200);
        assert_eq!(fs::read_to_string(&f).unwrap().lines().next().unwrap(), "index,mean_1,std_1");
    }
}

#[test]
fn cp_with_rank_list_runs() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--n", "80", "--out", p(dir.path())]);
    ok(&[
        "fit",
        "--data",
        p(&dir.path().join("data.csv")),
        "--model",
        "cp",
        "--rank",
        "2,2",
        "--iters",
        "5",
        "--out",
        p(&dir.path().join("cp")),
    ]);
    let v: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("cp/metrics.json")).unwrap()).unwrap();
    assert!(v["rmse"].as_f64().unwrap().is_finite());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--n", "30", "--out", p(dir.path())]);
    let data = dir.path().join("data.csv");
    let out = dir.path().join("o");
    // unknown flag and bad value are usage errors
    assert_eq!(run(&["fit", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["fit", "--data", p(&data), "--nu", "2.5", "--out", p(&out)]).status.code(), Some(2));
    assert_eq!(run(&["fit", "--data", p(&data), "--rank", "1,2,3", "--out", p(&out)]).status.code(), Some(2));
    assert_eq!(run(&["fit", "--data", p(&data), "--damping", "0", "--out", p(&out)]).status.code(), Some(2));
    // missing file is an I/O error
    assert_eq!(
        run(&["fit", "--data", p(&dir.path().join("none.csv")), "--out", p(&out)]).status.code(),
        Some(1)
    );
    // an extreme noise prior breaks the Cholesky factorization
    let code = run(&["fit", "--data", p(&data), "--b0", "1e-320", "--a0", "1e300", "--out", p(&out)])
        .status
        .code();
    assert_eq!(code, Some(3));
}

#[test]
fn mode_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    synth_and_fit(dir.path(), "40", "0");
    let four = dir.path().join("four.csv");
    fs::write(&four, "i_1,i_2,i_3,i_4,y\n0.1,0.2,0.3,0.4,1.0\n").unwrap();
    let out = run(&[
        "predict",
        "--model",
        p(&dir.path().join("fit/model.json")),
        "--index",
        p(&four),
        "--out",
        p(&dir.path().join("x.csv")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("column"));
}

#[test]
fn noiseless_fit_evaluates_below_noise_floor() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--n", "300", "--noise-sd", "0", "--out", p(dir.path())]);
    let data = dir.path().join("data.csv");
    ok(&["fit", "--data", p(&data), "--iters", "100", "--b0", "1e-3", "--out", p(&dir.path().join("fit"))]);
    let out = run(&["eval", "--model", p(&dir.path().join("fit/model.json")), "--data", p(&data)]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    // default synthetic noise std is sqrt(0.02) ≈ 0.14
    assert!(v["rmse"].as_f64().unwrap() < 0.01, "{v}");
}
