//! End-to-end tests of the binary: exit codes, artifact shapes, and
//! determinism of the simulation output.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mesreg"))
}

fn data(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(file)
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mesreg_cli_{}_{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

#[test]
fn fit_smoke_on_bundled_data() {
    let dir = tmp_dir("fit");
    let out_base = dir.join("fit");
    let out = run(&[
        "fit",
        "--input",
        data("example_fit.csv").to_str().unwrap(),
        "--y",
        "y",
        "--x",
        "x",
        "--zv",
        "1,z1,z2",
        "--zm",
        "1,z1,z2",
        "--beta",
        "0.9",
        "--out",
        out_base.to_str().unwrap(),
        "--paths",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    // result data goes to stdout, never stderr
    assert!(out.stderr.is_empty());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("fit.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    let params = report["parameters"].as_array().unwrap();
    assert_eq!(params.len(), 6);
    let se_entries = params.iter().filter(|p| p["se"].is_number()).count();
    assert_eq!(se_entries, 6, "expected p + q standard errors");
    let paths = std::fs::read_to_string(dir.join("fit_paths.csv")).unwrap();
    assert_eq!(paths.lines().count(), 501);
    assert!(paths.starts_with("t,x,y,var_fitted,mes_fitted,exceed"));
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn missing_beta_is_usage_error() {
    let out = run(&[
        "fit",
        "--input",
        data("example_fit.csv").to_str().unwrap(),
        "--y",
        "y",
        "--x",
        "x",
        "--zv",
        "1,z1",
        "--zm",
        "1,z1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--beta"), "stderr: {err}");
}

#[test]
fn out_of_range_beta_names_the_constraint() {
    let out = run(&[
        "fit",
        "--input",
        data("example_fit.csv").to_str().unwrap(),
        "--y",
        "y",
        "--x",
        "x",
        "--zv",
        "1,z1",
        "--zm",
        "1,z1",
        "--beta",
        "1.5",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("0 < beta < 1"), "stderr: {err}");
}

#[test]
fn unparsable_cell_is_a_data_error() {
    let dir = tmp_dir("baddata");
    let path = dir.join("bad.csv");
    std::fs::write(&path, "y,x,z1\n1,2,3\n4,NaN,6\n7,8,9\n1,2,3\n4,5,6\n1,2,3\n").unwrap();
    let out = run(&[
        "fit",
        "--input",
        path.to_str().unwrap(),
        "--y",
        "y",
        "--x",
        "x",
        "--zv",
        "1,z1",
        "--zm",
        "1,z1",
        "--beta",
        "0.9",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 2"), "stderr: {err}");
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn estimation_failure_exit_code() {
    // all-equal distress series: the quantile fit is exact with zero
    // exceedances, so the second step cannot run
    let dir = tmp_dir("estfail");
    let path = dir.join("flat.csv");
    let mut csv = String::from("y,x,z1\n");
    for i in 0..30 {
        csv.push_str(&format!("{},5.0,{}\n", i, i % 7));
    }
    std::fs::write(&path, csv).unwrap();
    let out = run(&[
        "fit",
        "--input",
        path.to_str().unwrap(),
        "--y",
        "y",
        "--x",
        "x",
        "--zv",
        "1",
        "--zm",
        "1",
        "--beta",
        "0.9",
    ]);
    assert_eq!(out.status.code(), Some(4), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn simulate_is_deterministic_across_threads_and_env_seed_wins() {
    let dir = tmp_dir("sim");
    let args = |out: &Path, threads: &str| {
        vec![
            "simulate".to_string(),
            "--beta".into(),
            "0.9".into(),
            "--n".into(),
            "300".into(),
            "--reps".into(),
            "24".into(),
            "--seed".into(),
            "1".into(),
            "--threads".into(),
            threads.to_string(),
            "--out".into(),
            out.to_str().unwrap().to_string(),
        ]
    };
    let a = dir.join("a");
    let b = dir.join("b");
    let out1 = bin().args(args(&a, "1")).output().unwrap();
    assert_eq!(out1.status.code(), Some(0));
    let out2 = bin().args(args(&b, "4")).output().unwrap();
    assert_eq!(out2.status.code(), Some(0));
    let csv_a = std::fs::read(dir.join("a.csv")).unwrap();
    let csv_b = std::fs::read(dir.join("b.csv")).unwrap();
    assert_eq!(csv_a, csv_b, "summary CSV must not depend on --threads");

    // MESREG_SEED overrides --seed
    let c = dir.join("c");
    let out3 = bin()
        .args(args(&c, "1"))
        .env("MESREG_SEED", "777")
        .output()
        .unwrap();
    assert_eq!(out3.status.code(), Some(0));
    let csv_c = std::fs::read(dir.join("c.csv")).unwrap();
    assert_ne!(csv_a, csv_c, "environment seed must take precedence");
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn simulate_single_replication_marks_columns_absent() {
    let out = run(&[
        "simulate", "--beta", "0.9", "--n", "300", "--reps", "1", "--seed", "3",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let line = stdout.lines().nth(1).unwrap();
    // bias present, sd_emp and coverage empty
    let fields: Vec<&str> = line.split(',').collect();
    assert!(!fields[1].is_empty());
    assert!(fields[2].is_empty());
    assert!(fields[4].is_empty());
}

#[test]
fn brs_window_defaults_to_250() {
    let dir = tmp_dir("brs");
    let out_base = dir.join("brs");
    let out = run(&[
        "brs",
        "--input",
        data("example_fit.csv").to_str().unwrap(),
        "--y",
        "y",
        "--x",
        "x",
        "--zm",
        "1,z1,z2",
        "--beta",
        "0.9",
        "--out",
        out_base.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("brs.json")).unwrap()).unwrap();
    assert_eq!(report["window"], 250);
    assert_eq!(report["n_used"], 250); // 500 rows minus the window
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn decompose_emits_one_es_and_d_mes_fits() {
    let dir = tmp_dir("decomp");
    // components that sum exactly to the aggregate under constant weights
    let path = dir.join("agg.csv");
    let mut csv = String::from("x,c1,c2,z\n");
    let mut state = 0x42_u64;
    let mut unif = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    for _ in 0..200 {
        let z = 2.0 * unif() - 1.0;
        let c1 = z + 2.0 * (unif() + unif() - 1.0);
        let c2 = 0.5 * z + 1.5 * (unif() + unif() - 1.0);
        let x = 0.4 * c1 + 0.6 * c2;
        csv.push_str(&format!("{x},{c1},{c2},{z}\n"));
    }
    std::fs::write(&path, csv).unwrap();
    let out_base = dir.join("dec");
    let out = run(&[
        "decompose",
        "--input",
        path.to_str().unwrap(),
        "--x",
        "x",
        "--components",
        "c1,c2",
        "--zv",
        "1,z",
        "--zm",
        "1,z",
        "--beta",
        "0.85",
        "--weights",
        "0.4,0.6",
        "--out",
        out_base.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("dec.json")).unwrap()).unwrap();
    let fits = report["fits"].as_array().unwrap();
    assert_eq!(fits.len(), 3, "one ES fit plus D = 2 MES fits");
    assert_eq!(fits[0]["kind"], "es");
    assert_eq!(fits[1]["kind"], "mes");
    // exact aggregation: reconciliation residual is numerically tiny
    let rec = report["reconciliation"].as_array().unwrap();
    for v in rec {
        assert!(v.as_f64().unwrap().abs() < 1e-8);
    }
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn erc_weight_rows_sum_to_one() {
    let dir = tmp_dir("erc");
    let out_base = dir.join("erc");
    let out = run(&[
        "erc",
        "--input",
        data("portfolio_losses.csv").to_str().unwrap(),
        "--components",
        "a1,a2,a3,a4,a5",
        "--z",
        "1,vix",
        "--beta",
        "0.9",
        "--start",
        "560",
        "--out",
        out_base.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let weights = std::fs::read_to_string(dir.join("erc_weights.csv")).unwrap();
    let mut rows = 0;
    for line in weights.lines().skip(1) {
        let fields: Vec<f64> = line
            .split(',')
            .skip(1)
            .take(5)
            .map(|f| f.parse().unwrap())
            .collect();
        let sum: f64 = fields.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-9, "weight row sums to {sum}");
        rows += 1;
    }
    assert_eq!(rows, 40);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("erc.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert!(report["metrics"]["erc"]["es"].is_number());
    assert!(report["metrics"]["ew"]["es"].is_number());
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn oracle_reports_consistent_constants() {
    let out = run(&["oracle", "--beta", "0.9", "--draws", "100000", "--json"]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();
    let q = report["q_tilde"].as_f64().unwrap();
    assert!((q - 1.4398).abs() < 5e-5);
    let mc = report["m_tilde_mc"].as_f64().unwrap();
    let se = report["m_tilde_mc_se"].as_f64().unwrap();
    let cached = report["m_tilde_cached"].as_f64().unwrap();
    assert!((mc - cached).abs() <= 5.0 * se.max(1e-3));
}
