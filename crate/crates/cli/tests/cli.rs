use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn coxlin(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coxlin"))
        .args(args)
        .current_dir(dir)
        .env_remove("COXLIN_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Every record parsed as numbers; the header is returned separately.
fn table(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|f| f.parse::<f64>().unwrap()).collect())
        .collect();
    (header, rows)
}

fn workspace() -> TempDir {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "three.csv", "time,event,z1\n1,1,1\n2,1,0\n3,1,1\n");
    write(dir.path(), "constant.csv", "time,event,z1\n1,1,2\n2,1,2\n3,0,2\n");
    write(dir.path(), "plain.csv", "time,event\n1,1\n2,0\n3,1\n");
    dir
}

#[test]
fn fit_three_points() {
    let ws = workspace();
    let out = coxlin(&["fit", "--input", "three.csv", "--output-dir", "o"], ws.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let fit = json(&ws.path().join("o/fit.json"));
    let beta = fit["beta_hat"][0].as_f64().unwrap();
    assert!((beta + 0.3465736).abs() < 1e-7);
    assert_eq!(fit["status"], "converged");
    assert!(fit["information"][0][0].as_f64().unwrap() > 0.0);
}

#[test]
fn constant_covariate_is_singular() {
    let ws = workspace();
    let out = coxlin(&["fit", "--input", "constant.csv", "--output-dir", "o"], ws.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("singular_information"));
    assert_eq!(json(&ws.path().join("o/fit.json"))["status"], "singular_information");
}

#[test]
fn missing_input_is_an_io_error() {
    let ws = workspace();
    let out = coxlin(&["fit", "--input", "absent.csv"], ws.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn malformed_input_is_an_io_error() {
    let ws = workspace();
    write(ws.path(), "bad.csv", "time,event,z1\n1,yes,0\n");
    let out = coxlin(&["fit", "--input", "bad.csv"], ws.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 1"));
}

#[test]
fn unknown_flags_are_rejected() {
    let ws = workspace();
    let out = coxlin(&["fit", "--input", "three.csv", "--colour"], ws.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn breslow_curves() {
    let ws = workspace();
    let out = coxlin(&["breslow", "--input", "three.csv", "--output-dir", "o"], ws.path());
    assert_eq!(out.status.code(), Some(0));
    let (header, rows) = table(&ws.path().join("o/breslow.csv"));
    assert_eq!(header, ["time", "cumulative_hazard"]);
    let expected = [(1.0, 0.4142136), (2.0, 1.0), (3.0, 2.4142136)];
    assert_eq!(rows.len(), 3);
    for (row, (t, v)) in rows.iter().zip(expected) {
        assert_eq!(row[0], t);
        assert!((row[1] - v).abs() < 1e-7);
    }
    let (header, rows) = table(&ws.path().join("o/a_n.csv"));
    assert_eq!(header, ["time", "a1"]);
    assert_eq!(rows.len(), 3);

    let out = coxlin(
        &["breslow", "--input", "three.csv", "--output-dir", "j", "--format", "json"],
        ws.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let b = json(&ws.path().join("j/breslow.json"));
    assert_eq!(b["times"].as_array().unwrap().len(), 3);
    assert!(b["form_discrepancy"].as_f64().unwrap() <= 1e-10);
}

#[test]
fn breslow_at_zero_is_nelson_aalen() {
    let ws = workspace();
    let out = coxlin(&["breslow", "--input", "plain.csv", "--beta", "0", "--output-dir", "o"], ws.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, rows) = table(&ws.path().join("o/breslow.csv"));
    assert_eq!(rows, vec![vec![1.0, 1.0 / 3.0], vec![3.0, 1.0 / 3.0 + 1.0]]);
    let (header, _) = table(&ws.path().join("o/a_n.csv"));
    assert_eq!(header, ["time"]);
}

#[test]
fn explicit_negative_beta() {
    let ws = workspace();
    let out = coxlin(&["breslow", "--input", "three.csv", "--beta", "-0.5", "--output-dir", "o"], ws.path());
    assert_eq!(out.status.code(), Some(0));
    let out = coxlin(&["breslow", "--input", "three.csv", "--beta", "1,2"], ws.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn injected_form_fault_fails_the_self_check() {
    let ws = workspace();
    let out = coxlin(&["breslow", "--input", "three.csv", "--inject-form-fault"], ws.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(!String::from_utf8_lossy(&Command::new(env!("CARGO_BIN_EXE_coxlin"))
        .args(["breslow", "--help"])
        .output()
        .unwrap()
        .stdout)
        .contains("inject"));
}

#[test]
fn influence_outputs() {
    let ws = workspace();
    let data: String = std::iter::once("time,event,z1\n".to_string())
        .chain((1..=40).map(|i| format!("{},{},{}\n", i as f64 * 0.1, (i % 3 != 0) as u8, (i % 2) as f64)))
        .collect();
    write(ws.path(), "forty.csv", &data);
    let out = coxlin(
        &["influence", "--input", "forty.csv", "--grid-points", "16", "--matrix", "--output-dir", "o"],
        ws.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = table(&ws.path().join("o/influence.csv"));
    assert_eq!(header, ["x", "cumulative_hazard", "variance", "std_error", "xi_only_variance"]);
    assert_eq!(rows.len(), 16);
    assert!(rows.iter().all(|r| r[2] >= 0.0));
    let (header, rows) = table(&ws.path().join("o/influence_matrix.csv"));
    assert_eq!(header.len(), 17);
    assert_eq!(rows.len(), 40);

    let out = coxlin(
        &["influence", "--input", "forty.csv", "--format", "json", "--output-dir", "j"],
        ws.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&ws.path().join("j/influence.json"))["grid"].as_array().unwrap().len(), 512);
}

#[test]
fn decompose_outputs() {
    let ws = workspace();
    let out = coxlin(&["decompose", "--n", "400", "--seed", "2", "--output-dir", "o"], ws.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = table(&ws.path().join("o/decomposition.csv"));
    assert_eq!(header.last().unwrap(), "a0_1");
    for r in &rows {
        // t_n2 = b_n + c_n + r_n3 + r_n4
        assert!((r[2] - (r[3] + r[4] + r[5] + r[6])).abs() < 1e-8);
    }
    let out = coxlin(
        &["decompose", "--n", "400", "--seed", "2", "--at-truth", "--format", "json", "--output-dir", "j"],
        ws.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let d = json(&ws.path().join("j/decomposition.json"));
    assert_eq!(d["report"]["sup_norms"]["t_n1"].as_f64(), Some(0.0));
    let out = coxlin(&["decompose"], ws.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn rate_lab_artifacts_and_determinism() {
    let ws = workspace();
    let args = ["rate-lab", "--claim", "theorem", "--n", "250,500,1000", "--reps", "20", "--seed", "7"];
    let first = coxlin(&[&args[..], &["--output-dir", "a"]].concat(), ws.path());
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(String::from_utf8_lossy(&first.stdout).contains("seed 7"));
    let second = coxlin(&[&args[..], &["--output-dir", "b"]].concat(), ws.path());
    assert_eq!(second.status.code(), Some(0));
    let a = fs::read(ws.path().join("a/rates.json")).unwrap();
    let b = fs::read(ws.path().join("b/rates.json")).unwrap();
    assert_eq!(a, b);

    let r = json(&ws.path().join("a/rates.json"));
    assert_eq!(r["seed"], 7);
    assert!(r["quantities"][0]["fitted_slope"].is_number());
    for n in [250, 500, 1000] {
        let (header, rows) = table(&ws.path().join(format!("a/rates_n{n}.csv")));
        assert_eq!(header[0], "replicate");
        assert_eq!(rows.len(), 20);
    }
    let mut r = csv::Reader::from_path(ws.path().join("a/rates_summary.csv")).unwrap();
    assert_eq!(r.records().count(), 4 * 3);
}

#[test]
fn rate_lab_reads_config_and_env() {
    let ws = workspace();
    write(
        ws.path(),
        "exp.cfg",
        "# small lemma 1 run\nclaim = lemma1\nsample_sizes = 100,200,400\nreplications = 3\nseed = 5\ngrid_points = 64\nM_policy = fixed:1.5\n",
    );
    let out = Command::new(env!("CARGO_BIN_EXE_coxlin"))
        .args(["rate-lab", "--config", "exp.cfg", "--seed", "6"])
        .current_dir(ws.path())
        .env("COXLIN_OUTPUT_DIR", ws.path().join("env_out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&ws.path().join("env_out/rates.json"));
    assert_eq!(r["seed"], 6);
    assert_eq!(r["horizon"], 1.5);
    assert_eq!(r["grid_points"], 64);
    assert_eq!(r["claim"], "lemma1");
}

#[test]
fn rate_lab_validity_failures() {
    let ws = workspace();
    let out = coxlin(&["rate-lab", "--claim", "lemma1", "--n", "500,250", "--reps", "2"], ws.path());
    assert_eq!(out.status.code(), Some(4));
    let out = coxlin(&["rate-lab", "--n", "250", "--reps", "2"], ws.path());
    assert_eq!(out.status.code(), Some(4));
    write(ws.path(), "bad.cfg", "claim = lemma1\nunknown_key = 3\n");
    let out = coxlin(&["rate-lab", "--config", "bad.cfg"], ws.path());
    assert_eq!(out.status.code(), Some(4));
    // Tiny samples separate often; too many dropped fits invalidate the run.
    let out = coxlin(
        &["rate-lab", "--claim", "theorem", "--n", "3,4", "--reps", "50", "--output-dir", "o"],
        ws.path(),
    );
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("excluded"));
}
