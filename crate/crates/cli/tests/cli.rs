use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn l2rnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_l2rnn"))
        .args(args)
        .env_remove("L2RNN_THREADS")
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = l2rnn(args);
    assert!(
        out.status.success(),
        "{args:?} failed ({:?}): {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn generate_writes_three_datasets_and_manifest() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("arith");
    ok(&[
        "generate",
        "--task",
        "arithmetic",
        "--n",
        "1000",
        "--sigma2",
        "0",
        "--out",
        s(&out),
    ]);
    let m = read_json(&out.join("manifest.json"));
    let train: Vec<&str> = m["train"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert_eq!(train, ["train_len2.jsonl", "train_len4.jsonl", "train_len5.jsonl"]);
    for (f, len) in train.iter().zip([2, 4, 5]) {
        let text = std::fs::read_to_string(out.join(f)).unwrap();
        assert_eq!(text.lines().count(), 1000);
        let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["x"].as_array().unwrap().len(), len);
    }
    assert_eq!(m["task"], "arithmetic");
    assert_eq!(m["n_train"], 1000);
    assert_eq!(m["seed"], 0);
    assert!(out.join("test.jsonl").exists() && out.join("target.json").exists());
}

#[test]
fn regeneration_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    let args = [
        "generate",
        "--task",
        "random-rnn",
        "--n",
        "50",
        "--sigma2",
        "0.1",
        "--seed",
        "7",
        "--test-size",
        "20",
    ];
    ok(&[&args[..], &["--out", s(&a)]].concat());
    ok(&[&args[..], &["--out", s(&b)]].concat());
    // the manifest alone reproduces the run
    ok(&["generate", "--config", s(&a.join("manifest.json")), "--out", s(&c)]);
    for f in [
        "train_len2.jsonl",
        "train_len4.jsonl",
        "train_len5.jsonl",
        "test.jsonl",
        "target.json",
        "manifest.json",
    ] {
        let x = std::fs::read(a.join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.join(f)).unwrap(), "{f}");
        assert_eq!(x, std::fs::read(c.join(f)).unwrap(), "{f} via manifest");
    }
}

#[test]
fn least_squares_recovers_random_rnn_exactly() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("d");
    ok(&[
        "generate",
        "--task",
        "random-rnn",
        "--sizes",
        "9,81,243",
        "--seed",
        "3",
        "--out",
        s(&data),
    ]);
    let model = dir.path().join("model.json");
    ok(&[
        "learn",
        "--data",
        s(&data),
        "--method",
        "ls",
        "--rank",
        "5",
        "--out",
        s(&model),
    ]);
    let report = read_json(&dir.path().join("model.report.json"));
    let test_mse = report["test"]["mse"].as_f64().unwrap();
    assert!(test_mse < 1e-8, "test mse {test_mse}");
    assert_eq!(report["fallback"], false);
    assert_eq!(report["diagnostics"]["numerical_rank"], 5);
    assert_eq!(report["recovery"].as_array().unwrap().len(), 3);
}

#[test]
fn tiht_overestimated_rank_converges_on_arithmetic() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("d");
    ok(&[
        "generate",
        "--task",
        "arithmetic",
        "--n",
        "1000",
        "--test-size",
        "200",
        "--out",
        s(&data),
    ]);
    let model = dir.path().join("m.json");
    ok(&[
        "learn",
        "--data",
        s(&data),
        "--method",
        "tiht",
        "--rank",
        "5",
        "--out",
        s(&model),
    ]);
    let report = read_json(&dir.path().join("m.report.json"));
    assert_eq!(report["converged"], true);
    assert!(report["test"]["mse"].as_f64().unwrap() < 1e-4);
}

#[test]
fn refine_and_general_paths_run() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("d");
    ok(&[
        "generate",
        "--task",
        "random-rnn",
        "--n",
        "300",
        "--sigma2",
        "0.1",
        "--all-lengths",
        "--test-size",
        "100",
        "--out",
        s(&data),
    ]);
    let m1 = dir.path().join("refined.json");
    ok(&[
        "learn",
        "--data",
        s(&data),
        "--method",
        "tiht",
        "--rank",
        "5",
        "--refine",
        "--refine-epochs",
        "5",
        "--out",
        s(&m1),
    ]);
    let r1 = read_json(&dir.path().join("refined.report.json"));
    let rep = &r1["refine"];
    assert!(rep["best_loss"].as_f64().unwrap() <= rep["initial_loss"].as_f64().unwrap());
    let m2 = dir.path().join("general.json");
    ok(&[
        "learn",
        "--data",
        s(&data),
        "--general",
        "--method",
        "ls",
        "--rank",
        "5",
        "--out",
        s(&m2),
    ]);
    let r2 = read_json(&dir.path().join("general.report.json"));
    assert_eq!(r2["general"], true);
    assert_eq!(r2["recovery"].as_array().unwrap().len(), 6);
}

#[test]
fn config_file_with_flag_override() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("d");
    ok(&[
        "generate",
        "--task",
        "random-rnn",
        "--sizes",
        "9,81,243",
        "--test-size",
        "50",
        "--out",
        s(&data),
    ]);
    let cfg = dir.path().join("learn.toml");
    std::fs::write(&cfg, "method = \"iht\"\nrank = 3\nmax_iters = 7\n").unwrap();
    let model = dir.path().join("m.json");
    ok(&[
        "learn",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--method",
        "ls",
        "--out",
        s(&model),
    ]);
    let r = read_json(&dir.path().join("m.report.json"));
    assert_eq!(r["method"], "ls");
    assert_eq!(r["rank"], 3);
    assert_eq!(r["config"]["recovery"]["max_iters"], 7);
}

#[test]
fn invalid_method_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = l2rnn(&[
        "learn",
        "--train",
        "x.jsonl",
        "--method",
        "magic",
        "--rank",
        "2",
        "--out",
        s(&dir.path().join("m")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
}

#[test]
fn user_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let missing = l2rnn(&[
        "evaluate",
        "--model",
        "/nonexistent/m.json",
        "--data",
        "/nonexistent/d.jsonl",
    ]);
    assert_eq!(missing.status.code(), Some(1));
    let no_task = l2rnn(&["generate", "--n", "5", "--out", s(dir.path())]);
    assert_eq!(no_task.status.code(), Some(1));
    let threads = Command::new(env!("CARGO_BIN_EXE_l2rnn"))
        .args(["experiment", "--out", s(&dir.path().join("r.csv"))])
        .env("L2RNN_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(threads.status.code(), Some(1));
    assert_eq!(l2rnn(&["--help"]).status.code(), Some(0));
    assert_eq!(l2rnn(&[]).status.code(), Some(1));
}

#[test]
fn evaluate_exact_model_scores_zero() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("d");
    ok(&[
        "generate",
        "--task",
        "random-rnn",
        "--n",
        "5",
        "--test-size",
        "30",
        "--out",
        s(&data),
    ]);
    let out = ok(&[
        "evaluate",
        "--model",
        s(&data.join("target.json")),
        "--data",
        s(&data.join("test.jsonl")),
    ]);
    let m: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(m["mse"], 0.0);
    assert_eq!(m["examples"], 30);
}

#[test]
fn evaluate_zero_model_on_zero_targets() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("zero.json");
    std::fs::write(
        &model,
        r#"{"n":2,"d":2,"p":1,"h0":[0,0],"A":[0,0,0,0,0,0,0,0],"Omega":[[0,0]]}"#,
    )
    .unwrap();
    let data = dir.path().join("z.jsonl");
    std::fs::write(&data, "{\"x\":[[1,2]],\"y\":[0]}\n{\"x\":[[3,4],[5,6]],\"y\":[0]}\n").unwrap();
    let out = ok(&["evaluate", "--model", s(&model), "--data", s(&data)]);
    let m: Value = serde_json::from_str(&out).unwrap();
    assert_eq!((m["mse"].as_f64(), m["mae"].as_f64()), (Some(0.0), Some(0.0)));
    assert!(m["mape"].is_null());
}

#[test]
fn evaluate_hand_computed_metrics() {
    let dir = TempDir::new().unwrap();
    // inputs (v, 1); output is the running sum of v
    let model = dir.path().join("sum.json");
    std::fs::write(
        &model,
        r#"{"n":2,"d":2,"p":1,"h0":[1,0],"A":[0,1,1,0,0,0,0,1],"Omega":[[0,1]]}"#,
    )
    .unwrap();
    let data = dir.path().join("d.jsonl");
    // predictions 5 and 1 against targets 4 and 2
    std::fs::write(&data, "{\"x\":[[2,1],[3,1]],\"y\":[4]}\n{\"x\":[[1,1]],\"y\":[2]}\n").unwrap();
    let metrics_out = dir.path().join("metrics.json");
    ok(&[
        "evaluate",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--out",
        s(&metrics_out),
    ]);
    let m = read_json(&metrics_out);
    assert_eq!(m["mse"], 1.0);
    assert_eq!(m["rmse"], 1.0);
    assert_eq!(m["mae"], 1.0);
    assert_eq!(m["mape"], 37.5);
}

fn read_csv(p: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(p).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

#[test]
fn experiment_smoke_run_emits_tidy_csv() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("results.csv");
    ok(&[
        "experiment",
        "--task",
        "random-rnn",
        "--methods",
        "ls,tiht",
        "--sizes",
        "20,300",
        "--noise",
        "0",
        "--seeds",
        "2",
        "--test-size",
        "200",
        "--threads",
        "2",
        "--out",
        s(&out),
    ]);
    let (header, rows) = read_csv(&out);
    assert_eq!(
        header,
        [
            "method",
            "N",
            "sigma2",
            "R",
            "seed",
            "train_mse",
            "test_mse",
            "wall_time",
            "status"
        ]
    );
    assert_eq!(rows.len(), 8);
    for r in &rows {
        assert!(!r[8].starts_with("error"), "{r:?}");
        let _: f64 = r[6].parse().unwrap();
    }
    // N >= d^(2L+1) makes least squares exact
    for r in rows.iter().filter(|r| r[0] == "ls" && r[1] == "300") {
        assert!(r[6].parse::<f64>().unwrap() < 1e-8, "{r:?}");
    }
    let (sh, srows) = read_csv(&dir.path().join("results.summary.csv"));
    assert_eq!(
        sh,
        [
            "method",
            "N",
            "sigma2",
            "R",
            "runs",
            "errors",
            "train_mse",
            "test_mse",
            "wall_time"
        ]
    );
    assert_eq!(srows.len(), 4);
    assert!(srows.iter().all(|r| r[4] == "2"));
}

#[test]
fn experiment_more_data_helps_every_method_under_noise() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("noisy.csv");
    let summary = dir.path().join("noisy_summary.csv");
    ok(&[
        "experiment",
        "--task",
        "random-rnn",
        "--sizes",
        "100,20000",
        "--noise",
        "1",
        "--seeds",
        "2",
        "--test-size",
        "300",
        "--out",
        s(&out),
        "--summary",
        s(&summary),
    ]);
    let (_, rows) = read_csv(&summary);
    assert_eq!(rows.len(), 12);
    for m in ["ls", "nuclear", "iht", "tiht", "tiht-sgd", "tiht-tt"] {
        let mse = |n: &str| -> f64 {
            rows.iter().find(|r| r[0] == m && r[1] == n).unwrap()[7]
                .parse()
                .unwrap()
        };
        assert!(mse("20000") < mse("100"), "{m}: {} vs {}", mse("20000"), mse("100"));
    }
}

#[test]
fn learns_and_evaluates_from_time_series_csv() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("load.csv");
    // `lag` repeats the previous hour's `load`, so the next `lag` is the last `load`
    let mut text = String::from("time,load,lag\n");
    let mut state = 12345u64;
    let mut prev = 0.0;
    for h in 0..200 {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let load = (state >> 11) as f64 / (1u64 << 53) as f64 + 0.5;
        // two readings per hour, averaged by the schema
        for (m, off) in [(0, 0.1), (30, -0.1)] {
            text.push_str(&format!(
                "2024-01-{:02} {:02}:{m:02}:00,{},{}\n",
                1 + h / 24,
                h % 24,
                load + off,
                prev + off
            ));
        }
        prev = load;
    }
    std::fs::write(&csv, text).unwrap();
    let schema = dir.path().join("schema.toml");
    std::fs::write(
        &schema,
        "timestamp_col = \"time\"\nvalue_cols = [\"load\", \"lag\"]\ntarget_col = \"lag\"\nwindow = 3\nbias = true\n",
    )
    .unwrap();
    let model = dir.path().join("m.json");
    ok(&[
        "learn",
        "--csv",
        s(&csv),
        "--csv-schema",
        s(&schema),
        "--method",
        "ls",
        "--rank",
        "2",
        "--l",
        "1",
        "--out",
        s(&model),
    ]);
    let report = read_json(&dir.path().join("m.report.json"));
    assert_eq!(report["recovery"].as_array().unwrap().len(), 3);
    for r in report["recovery"].as_array().unwrap() {
        assert!(r["rel_residual"].as_f64().unwrap() < 1e-10);
    }
    // the last-value map is invisible to length-1 suffixes: rank 1 on this basis
    assert_eq!(report["diagnostics"]["numerical_rank"], 1);
    assert_eq!(report["diagnostics"]["warning"], true);
    let out = ok(&[
        "evaluate",
        "--model",
        s(&model),
        "--data",
        s(&csv),
        "--csv-schema",
        s(&schema),
    ]);
    let m: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(m["examples"], 197);
    assert!(m["mse"].as_f64().unwrap().is_finite());
}
