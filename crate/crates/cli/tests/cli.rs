use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nalgebra::DMatrix;
use odl_core::data::{gen_advection1, save_dataset, Dataset, Grid};
use serde_json::{json, Value};

fn odl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odl"))
        .args(args)
        .env_remove("ODL_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, value: &Value) -> String {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(value).unwrap()).unwrap();
    p.to_str().unwrap().to_string()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn generate_advection1(dir: &Path, train: usize, test: usize) -> String {
    let out = dir.join("adv1");
    let s = out.to_str().unwrap().to_string();
    ok(&odl(&[
        "generate", "advection1", "--train", &train.to_string(), "--test", &test.to_string(), "--seed", "7",
        "--out", &s,
    ]));
    s
}

fn csv_rows(p: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(p).unwrap();
    r.records().map(|x| x.unwrap()).collect()
}

fn csv_column(p: &Path, name: &str) -> usize {
    let mut r = csv::Reader::from_path(p).unwrap();
    r.headers().unwrap().iter().position(|h| h == name).unwrap()
}

#[test]
fn generate_writes_container_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let stdout = ok(&odl(&[
            "generate", "advection1", "--train", "40", "--test", "10", "--seed", "7", "--out",
            d.to_str().unwrap(),
        ]));
        assert!(stdout.contains("manifest sha256"));
    }
    for f in ["train_inputs.bin", "train_outputs.bin", "test_inputs.bin", "test_outputs.bin"] {
        let x = fs::read(a.join(f)).unwrap();
        assert_eq!(x, fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(fs::read(a.join("train_inputs.bin")).unwrap().len(), 40 * 40 * 8);
    assert!(a.join("manifest.json").is_file());
}

#[test]
fn unknown_problem_is_usage_error() {
    let out = odl(&["generate", "helmholtz", "--out", "/tmp/never"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for p in ["advection1", "advection2", "burgers", "darcy"] {
        assert!(err.contains(p), "{err}");
    }
}

#[test]
fn generate_needs_an_output_location() {
    let out = odl(&["generate", "darcy", "--train", "2", "--test", "1", "--grid-size", "9"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_linear_advection_interpolates() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_advection1(dir.path(), 400, 20);
    let model = dir.path().join("model");
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({"dataset": data, "kernel": {"family": "linear"}, "gamma": 1e-12}),
    );
    let stdout = ok(&odl(&["train", "--config", &cfg, "--out", model.to_str().unwrap()]));
    assert!(stdout.contains("training interpolation residual"));
    assert!(stdout.contains("rkhs_norm_squared"));
    let report = read_json(&model.join("train_report.json"));
    assert_eq!(report["report_version"], 1);
    assert!(report["training_residual"].as_f64().unwrap() <= 1e-8);
    assert!(report["rkhs_norm_squared"].as_f64().unwrap() > 0.0);
    assert!(model.join("run_config.json").is_file());
}

#[test]
fn tuning_lists_every_candidate() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model");
    let grid: Vec<Value> = [1.0, 3.0, 9.0]
        .iter()
        .map(|l| json!({"family": "matern", "nu": 2.5, "lengthscale": l, "gamma": 1e-8}))
        .collect();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({
            "generator": {"problem": "advection1", "train": 60, "test": 10},
            "tuning": {"objective": "lml", "grid": grid},
            "seed": 3
        }),
    );
    let stdout = ok(&odl(&["train", "--config", &cfg, "--out", model.to_str().unwrap()]));
    let listed = stdout.lines().filter(|l| l.trim_start().starts_with('[')).count();
    assert_eq!(listed, 3, "{stdout}");
    assert_eq!(stdout.matches("<- selected").count(), 1);
    assert!(stdout.contains("(argmax)"));
    let report = read_json(&model.join("train_report.json"));
    assert_eq!(report["tuning"]["scores"].as_array().unwrap().len(), 3);
}

#[test]
fn missing_dataset_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({"dataset": dir.path().join("nope"), "kernel": {"family": "linear"}}),
    );
    let out = odl(&["train", "--config", &cfg, "--out", dir.path().join("m").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = odl(&["train", "--config", dir.path().join("absent.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn relative_dataset_resolves_against_data_dir() {
    let dir = tempfile::tempdir().unwrap();
    generate_advection1(dir.path(), 30, 5);
    let cfg = write_config(dir.path(), "c.json", &json!({"dataset": "adv1", "kernel": {"family": "linear"}}));
    let out = Command::new(env!("CARGO_BIN_EXE_odl"))
        .args(["train", "--config", &cfg, "--out", dir.path().join("m").to_str().unwrap()])
        .env("ODL_DATA_DIR", dir.path())
        .output()
        .unwrap();
    ok(&out);
}

#[test]
fn eval_reports_interpolation_uq_and_flops() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_advection1(dir.path(), 50, 10);
    let model = dir.path().join("model");
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({"dataset": data, "kernel": {"family": "matern", "nu": 2.5, "lengthscale": 4.0}, "gamma": 0.0}),
    );
    ok(&odl(&["train", "--config", &cfg, "--out", model.to_str().unwrap()]));
    let reports = dir.path().join("reports");
    ok(&odl(&[
        "eval", "--model", model.to_str().unwrap(), "--split", "train", "--with-uq", "--flops", "--out",
        reports.to_str().unwrap(),
    ]));
    let r = read_json(&reports.join("eval_train.json"));
    assert_eq!(r["report_version"], 1);
    assert!(r["mean_relative_l2"].as_f64().unwrap() <= 1e-6);
    assert_eq!(r["per_sample"].as_array().unwrap().len(), 50);
    assert!(r["uq"]["max_std"].as_f64().unwrap() <= 1e-7);
    // 40 grid points, no encoding, N = 50, m = 40, 40 queries:
    // kernel row 50*3*40, regression 40*(2*50 - 1), recovery 40*(2*40 - 1)
    assert_eq!(r["flops"]["per_query_flops"].as_u64().unwrap(), 6000 + 3960 + 3160);
    assert_eq!(r["config"]["gamma"], 0.0);
    assert_eq!(r["dataset_manifest_sha256"].as_str().unwrap().len(), 64);
    let rows = csv_rows(&reports.join("eval_train.csv"));
    assert_eq!(rows.len(), 1);
    let col = csv_column(&reports.join("eval_train.csv"), "flops_per_query");
    assert_eq!(&rows[0][col], "13120");
}

#[test]
fn eval_shape_mismatch_names_dims() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_advection1(dir.path(), 20, 5);
    let model = dir.path().join("model");
    let cfg = write_config(dir.path(), "c.json", &json!({"dataset": data, "kernel": {"family": "linear"}}));
    ok(&odl(&["train", "--config", &cfg, "--out", model.to_str().unwrap()]));
    let other = dir.path().join("other");
    ok(&odl(&[
        "generate", "advection1", "--train", "5", "--test", "2", "--grid-size", "25", "--out",
        other.to_str().unwrap(),
    ]));
    let out = odl(&["eval", "--model", model.to_str().unwrap(), "--dataset", other.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("40") && err.contains("25"), "{err}");
}

#[test]
fn train_and_eval_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let model = dir.path().join(run);
        let cfg = write_config(
            dir.path(),
            "c.json",
            &json!({
                "generator": {"problem": "advection2", "train": 40, "test": 10, "grid_size": 50},
                "kernel": {"family": "matern", "nu": 2.5, "lengthscale": 5.0},
                "gamma": 1e-8,
                "preconditioner": "cholesky",
                "pca": {"enabled": true, "input_fraction": 0.99},
                "seed": 5
            }),
        );
        ok(&odl(&["train", "--config", &cfg, "--out", model.to_str().unwrap()]));
        ok(&odl(&["eval", "--model", model.to_str().unwrap(), "--with-uq", "--flops"]));
        let mut r = read_json(&model.join("eval_test.json"));
        r["config"].as_object_mut().unwrap().remove("output_dir");
        reports.push(serde_json::to_string(&r).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn sweep_linear_beats_matern_on_advection1() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_advection1(dir.path(), 100, 20);
    let out = dir.path().join("sweep");
    let cfg = write_config(
        dir.path(),
        "s.json",
        &json!({
            "dataset": data,
            "gamma": 1e-10,
            "variants": [
                {"label": "linear", "kernel": {"family": "linear"}},
                {"label": "matern", "kernel": {"family": "matern", "nu": 2.5, "lengthscale": 4.0}}
            ]
        }),
    );
    ok(&odl(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]));
    let csv = out.join("cost_accuracy.csv");
    let rows = csv_rows(&csv);
    assert_eq!(rows.len(), 2);
    let err = csv_column(&csv, "mean_rel_l2");
    let label = csv_column(&csv, "label");
    let flops = csv_column(&csv, "flops_per_query");
    assert_eq!(&rows[0][label], "linear");
    let e: Vec<f64> = rows.iter().map(|r| r[err].parse().unwrap()).collect();
    assert!(e[0] < e[1], "{e:?}");
    assert!(rows.iter().all(|r| r[flops].parse::<u64>().unwrap() > 0));
    assert!(out.join("variant-0").join("manifest.json").is_file());
    assert_eq!(read_json(&out.join("sweep_report.json"))["report_version"], 1);

    // parallel variants give the same numbers
    let par = dir.path().join("par");
    ok(&odl(&["sweep", "--config", &cfg, "--out", par.to_str().unwrap(), "--jobs", "2"]));
    let prow = csv_rows(&par.join("cost_accuracy.csv"));
    for (a, b) in rows.iter().zip(&prow) {
        let (x, y): (f64, f64) = (a[err].parse().unwrap(), b[err].parse().unwrap());
        assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300));
    }
}

#[test]
fn sweep_without_variants_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_advection1(dir.path(), 10, 2);
    let cfg = write_config(dir.path(), "s.json", &json!({"dataset": data, "kernel": {"family": "linear"}}));
    let out = odl(&["sweep", "--config", &cfg, "--out", dir.path().join("s").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failing_variant_becomes_error_row() {
    // Every training input is the zero function, so the linear Gram matrix is
    // identically zero and the gamma = 0 fallback ridge is zero as well.
    let dir = tempfile::tempdir().unwrap();
    let real = gen_advection1(8, 3, 4, 1).unwrap();
    let ds = Dataset {
        name: "duplicated".into(),
        train_inputs: DMatrix::zeros(8, 4),
        test_inputs: DMatrix::zeros(3, 4),
        input_grid: Grid::uniform_1d(4, 0.0, 1.0, false).unwrap(),
        ..real
    };
    let data = dir.path().join("dup");
    save_dataset(&ds, &data).unwrap();
    let out = dir.path().join("sweep");
    let cfg = write_config(
        dir.path(),
        "s.json",
        &json!({
            "dataset": data,
            "variants": [
                {"label": "linear-gamma0", "kernel": {"family": "linear"}, "gamma": 0.0},
                {"label": "matern", "kernel": {"family": "matern", "nu": 2.5, "lengthscale": 1.0}, "gamma": 1e-6},
                {"label": "bad-kernel", "kernel": {"family": "matern", "nu": 0.7, "lengthscale": 1.0}}
            ]
        }),
    );
    ok(&odl(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]));
    let csv = out.join("cost_accuracy.csv");
    let rows = csv_rows(&csv);
    let status = csv_column(&csv, "status");
    let error = csv_column(&csv, "error");
    let err = csv_column(&csv, "mean_rel_l2");
    assert_eq!(rows.len(), 3);
    assert_eq!(&rows[0][status], "error");
    assert!(rows[0][error].contains("gamma"), "{}", &rows[0][error]);
    assert_eq!(&rows[1][status], "ok");
    assert!(rows[1][err].parse::<f64>().unwrap().is_finite());
    assert_eq!(&rows[2][status], "error");
}

#[test]
fn all_variants_failing_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_advection1(dir.path(), 10, 2);
    let cfg = write_config(
        dir.path(),
        "s.json",
        &json!({"dataset": data, "variants": [{"kernel": {"family": "rq", "lengthscale": 1.0}}]}),
    );
    let out = odl(&["sweep", "--config", &cfg, "--out", dir.path().join("s").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}
