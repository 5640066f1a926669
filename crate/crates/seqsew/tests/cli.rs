use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_seqsew");

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn seqsew(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("SEQSEW_THREADS", "2").output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn csv_rows(p: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(p).unwrap();
    text.lines().skip(2).map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn run_writes_schema_tagged_outputs_and_jumps_on_cue() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("adaptive_jump.json");
    let out = seqsew(&["run", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let text = std::fs::read_to_string(dir.path().join("run.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("# schema: seqsew.run.v1"));
    assert_eq!(text.lines().nth(1), Some("t,y,yhat,loss,cumloss,B_t,eta_t,regime,ess"));
    let rows = csv_rows(&dir.path().join("run.csv"));
    assert_eq!(rows.len(), 100);

    // the amplitude switches after round 50; the first large outcome lifts the threshold one round later
    let b: Vec<f64> = rows.iter().map(|r| r[5].parse().unwrap()).collect();
    assert_eq!(b[50], b[49]);
    assert!(b[51] > b[50]);
    assert!(b[10..50].windows(2).all(|w| w[0] == w[1]));

    let summary = read_json(&dir.path().join("summary.json"));
    assert_eq!(summary["schema"], "seqsew.summary.v1");
    assert_eq!(summary["T"], 100);
    let last_cum: f64 = rows[99][4].parse().unwrap();
    assert!((summary["cumulative_loss"].as_f64().unwrap() - last_cum).abs() <= 1e-9 * last_cum);
}

#[test]
fn same_seed_same_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = configs().join("sparse_importance.json");
    for d in [&a, &b] {
        assert_eq!(code(&seqsew(&["run", "--config", s(&cfg), "--out", s(d.path()), "--samples", "300"])), 0);
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("run.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn unknown_bound_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("adaptive_jump.json");
    let out = seqsew(&["verify", "--config", s(&cfg), "--out", s(dir.path()), "--bounds", "prop5,nope"]);
    assert_eq!(code(&out), 2);
    assert!(!dir.path().join("bounds.json").exists());
}

#[test]
fn unknown_backend_and_variant_are_usage_errors() {
    let cfg = configs().join("adaptive_jump.json");
    assert_eq!(code(&seqsew(&["run", "--config", s(&cfg), "--backend", "gpu"])), 2);
    assert_eq!(code(&seqsew(&["batch", "--config", s(&cfg), "--variant", "thm99"])), 2);
    assert_eq!(code(&seqsew(&["frobnicate"])), 2);
}

#[test]
fn stochastic_backend_reports_allowance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("adaptive_jump.json");
    let out = seqsew(&[
        "verify", "--config", s(&cfg), "--out", s(dir.path()), "--backend", "importance", "--samples", "400", "--bounds", "prop5",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let reports = read_json(&dir.path().join("bounds.json"));
    let r = &reports[0];
    assert_eq!(r["schema"], "seqsew.bounds.v1");
    assert_eq!(r["bound"], "prop5");
    assert!(r["mc_allowance"].as_f64().unwrap() > 0.0);
    assert_eq!(r["pass"], true);

    let exact = tempfile::tempdir().unwrap();
    assert_eq!(code(&seqsew(&["verify", "--config", s(&cfg), "--out", s(exact.path()), "--bounds", "prop5"])), 0);
    assert_eq!(read_json(&exact.path().join("bounds.json"))[0]["mc_allowance"], 0.0);
}

#[test]
fn gen_writes_data_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("batch_cor12.json");
    assert_eq!(code(&seqsew(&["gen", "--config", s(&cfg), "--out", s(dir.path())])), 0);
    let truth = read_json(&dir.path().join("truth.json"));
    assert_eq!(truth["schema"], "seqsew.truth.v1");
    assert_eq!(truth["u_true"], serde_json::json!([1.5, 0.0]));
    let text = std::fs::read_to_string(dir.path().join("data.csv")).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 201);
}

#[test]
fn psi_batch_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("psi_table.json");
    assert_eq!(code(&seqsew(&["batch", "--config", s(&cfg), "--out", s(dir.path())])), 0);
    let res = read_json(&dir.path().join("batch.json"));
    assert_eq!(res["schema"], "seqsew.batch.v1");
    assert_eq!(res["rows"].as_array().unwrap().len(), 9);
    assert_eq!(res["pass"], true);
}

#[test]
fn plot_renders_svg_and_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("adaptive_jump.json");
    assert_eq!(code(&seqsew(&["run", "--config", s(&cfg), "--out", s(dir.path())])), 0);
    let csv = dir.path().join("run.csv");
    let plots = dir.path().join("plots");
    for kind in ["cumloss", "regret", "staircase"] {
        assert_eq!(code(&seqsew(&["plot", "--input", s(&csv), "--kind", kind, "--out", s(&plots)])), 0);
        let svg = std::fs::read_to_string(plots.join(format!("{kind}.svg"))).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(code(&seqsew(&["plot", "--input", s(&empty), "--kind", "cumloss", "--out", s(&plots)])), 2);

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "t,y,yhat,loss,cumloss,B_t,eta_t,regime,ess\n1,x,0,0,0,0,inf,0,1\n").unwrap();
    let out = seqsew(&["plot", "--input", s(&bad), "--kind", "cumloss", "--out", s(&plots)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains('2'), "error names the line");

    let missing = dir.path().join("missing.csv");
    assert_eq!(code(&seqsew(&["plot", "--input", s(&missing), "--kind", "cumloss", "--out", s(&plots)])), 4);
}

#[test]
fn missing_config_is_io_and_malformed_config_is_usage() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&seqsew(&["run", "--config", s(&dir.path().join("none.json"))])), 4);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"seed\": 1,\n  \"scenario\": {\"T\": 10, \"d\": 1},\n  \"colour\": 3\n}\n").unwrap();
    let out = seqsew(&["run", "--config", s(&bad), "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
}
