use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn fna(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fna"))
        .args(args)
        .env_remove("FNA_FOLDS")
        .env_remove("FNA_LEVEL")
        .output()
        .expect("binary runs")
}

fn report(args: &[&str]) -> Value {
    let out = fna(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn error_kind(out: &Output) -> String {
    assert!(!out.status.success());
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    v["error"]["kind"].as_str().unwrap().to_string()
}

fn generate(dir: &Path, case: &str, n: usize) -> String {
    let path = dir.join(format!("{case}.csv"));
    let p = path.to_str().unwrap().to_string();
    report(&["generate", "--case", case, "--n", &n.to_string(), "--seed", "5", "--output", &p]);
    p
}

#[test]
fn bounds_report_has_fh_and_feasible_range() {
    let v = report(&["bounds", "--mu0", "0.69", "--mu1", "0.842"]);
    let r = &v["results"];
    assert!(r["fh"]["lower"].as_f64().unwrap().abs() < 1e-12);
    assert!((r["fh"]["upper"].as_f64().unwrap() - 0.158).abs() < 1e-12);
    let (lo, hi) = (r["feasible_rho"]["rho_l"].as_f64().unwrap(), r["feasible_rho"]["rho_u"].as_f64().unwrap());
    // L = -min(0.31 * 0.158, 0.69 * 0.842) / sd, U = min(0.69 * 0.158, 0.842 * 0.31) / sd
    let sd = (0.69f64 * 0.31 * 0.842 * 0.158).sqrt();
    assert!((lo + 0.31 * 0.158 / sd).abs() < 1e-12);
    assert!((hi - 0.69 * 0.158 / sd).abs() < 1e-12);
    assert_eq!(v["config"]["command"], "bounds");
    assert!(v["timing"].is_null());
    assert_eq!(v["warnings"].as_array().unwrap().len(), 0);
}

#[test]
fn bounds_with_interval() {
    let v = report(&["bounds", "--mu0", "0.69", "--mu1", "0.842", "--rho-l", "0", "--rho-u", "0.3"]);
    let b = &v["results"]["bounds"];
    assert!((b["lower"].as_f64().unwrap() - (0.10902 - 0.3 * 0.16869)).abs() < 1e-4);
    assert!((b["upper"].as_f64().unwrap() - 0.10902).abs() < 1e-12);
    assert_eq!(v["results"]["harmful_best_case"], true);
}

#[test]
fn invalid_inputs_give_error_objects() {
    assert_eq!(error_kind(&fna(&["bounds", "--mu0", "1.5", "--mu1", "0.2"])), "invalid_probability");
    assert_eq!(
        error_kind(&fna(&["bounds", "--mu0", "0.7", "--mu1", "0.4", "--rho-l", "0.8", "--rho-u", "1"])),
        "empty_feasible_set"
    );
    let out = fna(&["curve", "--input", "/nonexistent/file.csv", "--seed", "1"]);
    assert_eq!(error_kind(&out), "io_error");
}

#[test]
fn schema_error_names_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    let mut text = String::from("y,a,x\n");
    for i in 1..=9 {
        let y = if i == 7 { 2 } else { i % 2 };
        text.push_str(&format!("{y},{},{i}\n", (i / 2) % 2));
    }
    fs::write(&path, text).unwrap();
    let out = fna(&["ate", "--input", path.to_str().unwrap(), "--seed", "1"]);
    assert_eq!(error_kind(&out), "schema_error");
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 7"));
}

#[test]
fn curve_csv_layout_and_input_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let input = generate(dir.path(), "C1", 1500);
    let before = fs::read(&input).unwrap();
    let csv = dir.path().join("curve.csv");
    let v = report(&["curve", "--input", &input, "--rho-grid", "0:0.3:0.05", "--seed", "2", "--output", csv.to_str().unwrap()]);
    assert_eq!(fs::read(&input).unwrap(), before);

    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "rho,estimate,se,ci_lower,ci_upper,fh_lower,fh_upper");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|c| c.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 7);
    assert_eq!(rows[6][0], 0.3);
    assert!(rows.windows(2).all(|w| w[1][1] <= w[0][1]), "estimates fall with rho");
    for r in &rows {
        assert!(r[3] <= r[1] && r[1] <= r[4]);
        assert!(r[5] <= r[1] + 0.05 && r[1] <= r[6]);
    }
    let curve = &v["results"]["curve"];
    assert_eq!(curve["estimates"][0].as_f64().unwrap(), rows[0][1]);
    assert_eq!(v["results"]["data"]["n"], 1500);
}

#[test]
fn estimate_matches_curve_point_and_env_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let input = generate(dir.path(), "C2", 800);
    let e = report(&["estimate", "--input", &input, "--rho", "0.2", "--seed", "4"]);
    let c = report(&["curve", "--input", &input, "--rho-grid", "0.2", "--seed", "4"]);
    assert_eq!(e["results"]["estimate"]["estimate"], c["results"]["curve"]["estimates"][0]);

    let out = Command::new(env!("CARGO_BIN_EXE_fna"))
        .args(["estimate", "--input", &input, "--rho", "0.2", "--seed", "4"])
        .env("FNA_LEVEL", "0.9")
        .env("FNA_FOLDS", "3")
        .output()
        .unwrap();
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["config"]["level"], 0.9);
    assert_eq!(v["config"]["folds"], 3);
    assert_eq!(v["results"]["estimate"]["level"], 0.9);
}

#[test]
fn absent_seed_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let input = generate(dir.path(), "C1", 400);
    let v = report(&["ate", "--input", &input]);
    let seed = v["config"]["seed"].as_u64().expect("resolved seed in config");
    let again = report(&["ate", "--input", &input, "--seed", &seed.to_string()]);
    assert_eq!(v["results"], again["results"]);
    assert!(!v["warnings"].as_array().unwrap().is_empty());
}

#[test]
fn rho_range_writes_per_unit_table() {
    let dir = tempfile::tempdir().unwrap();
    let input = generate(dir.path(), "C3", 600);
    let table = dir.path().join("units.csv");
    let v = report(&["rho-range", "--input", &input, "--seed", "1", "--output", table.to_str().unwrap()]);
    let text = fs::read_to_string(&table).unwrap();
    assert_eq!(text.lines().count(), 601);
    let mut upper: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    upper.sort_by(f64::total_cmp);
    // Type-7 95% quantile recomputed from the table.
    let h = 599.0f64 * 0.95;
    let q = upper[h as usize] + (h - h.floor()) * (upper[h as usize + 1] - upper[h as usize]);
    assert!((v["results"]["rho_u"].as_f64().unwrap() - q).abs() < 1e-12);
}

#[test]
fn simulate_is_byte_identical() {
    let args = ["simulate", "--case", "C1", "--rho", "0", "--n", "1000", "--reps", "500", "--seed", "7"];
    let a = fna(&args);
    let b = fna(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    let row = &v["results"]["rows"][0];
    assert_eq!(row["replications"], 500);
    assert!(row["bias"].as_f64().unwrap().abs() < 0.006);
}

#[test]
fn simulate_writes_metrics_csv_and_report_file() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("metrics.csv");
    let json = dir.path().join("report.json");
    let out = fna(&[
        "simulate", "--case", "C2", "--case", "C3", "--rho", "0", "--rho", "0.3", "--n", "300", "--reps", "4", "--seed", "1",
        "--truth-outer", "10000", "--truth-inner", "200", "--output", csv.to_str().unwrap(), "--report",
        json.to_str().unwrap(), "--timing",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("case_id,rho,beta_true,bias,sd,ese,cp95,n,replications\n"));
    assert_eq!(text.lines().count(), 5);
    let v: Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert!(v["timing"]["elapsed_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn grid_and_model_parsing() {
    use fna_cli::{parse_grid, parse_model};
    use fna_core::nuisance::ModelSpec;
    assert_eq!(parse_grid("0:0.3:0.1").unwrap().0, vec![0.0, 0.1, 0.2, 0.3]);
    assert_eq!(parse_grid("-0.2,0,0.4").unwrap().0, vec![-0.2, 0.0, 0.4]);
    assert!(parse_grid("0.3,0.1").is_err());
    assert!(parse_grid("0:2:0.5").is_err());
    assert_eq!(parse_model("l1-cv").unwrap(), ModelSpec::L1Cv { folds: 5 });
    assert_eq!(parse_model("l1:0.01").unwrap(), ModelSpec::L1Fixed { lambda: 0.01 });
    assert!(parse_model("forest").is_err());
}
