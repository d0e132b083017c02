use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use snn_core::verify::VerificationReport;

fn snn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snn")).args(args).env_remove("SNN_WORKERS").output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_fixed_point_prints_parameters() {
    let o = snn(&["solve-fixed-point", "--mu", "0", "--nu", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((v["lambda"].as_f64().unwrap() - 1.0507).abs() < 1e-4);
    assert!((v["alpha"].as_f64().unwrap() - 1.6733).abs() < 1e-4);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("lambda=1.0507"));
}

#[test]
fn map_at_the_fixed_point() {
    let o = snn(&["map", "--mu", "0", "--omega", "0", "--nu", "1", "--tau", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["closed_form"]["mu_next"].as_f64().unwrap().abs() < 1e-12);
    assert!((v["closed_form"]["nu_next"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn variance_decrease_report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t2.json");
    let o = snn(&["verify-theorem2", "--samples", "10000", "--seed", "7", "-o", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("variance-decrease: PASS"));
    let text = std::fs::read_to_string(&path).unwrap();
    let r: VerificationReport = serde_json::from_str(&text).unwrap();
    assert!((r.extremum + 0.0180173).abs() < 1e-6);
    assert_eq!(r.arg_extremum, [-1.0, -0.1, 3.0, 1.25]);
    let again: VerificationReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
    assert_eq!(again, r);
}

#[test]
fn exit_codes() {
    assert_eq!(snn(&["verify-contraction", "--points", "6"]).status.code(), Some(1));
    let single = ["verify-contraction", "--mu-min", "0", "--mu-max", "0", "--omega-min", "0", "--omega-max", "0"];
    let mut args = single.to_vec();
    args.extend(["--nu-min", "1", "--nu-max", "1", "--tau-min", "1", "--tau-max", "1"]);
    assert_eq!(snn(&args).status.code(), Some(0));
    assert_eq!(snn(&["verify-contraction", "--bogus"]).status.code(), Some(2));
    assert_eq!(snn(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(snn(&["map", "--nu", "0"]).status.code(), Some(2));
    assert_eq!(snn(&["simulate", "--width", "4"]).status.code(), Some(2));
    assert_eq!(snn(&["selu", "--x", "1", "-o", "/nonexistent/dir/out.json"]).status.code(), Some(3));
}

#[test]
fn vector_field_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("field.csv");
    let o = snn(&["vector-field", "-o", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let mut rdr = csv::Reader::from_path(&path).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["mu", "nu", "dmu", "dnu"]);
    let rows: Vec<[f64; 4]> = rdr.deserialize().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 21 * 15);
    let at = |mu: f64, nu: f64| rows.iter().find(|r| (r[0] - mu).abs() < 1e-12 && (r[1] - nu).abs() < 1e-12).unwrap();
    let fixed = at(0.0, 1.0);
    assert!(fixed[2].abs() < 1e-12 && fixed[3].abs() < 1e-12);
    assert!(at(0.1, 1.5)[3] < 0.0);
    for r in &rows {
        let before = r[0].hypot(r[1] - 1.0);
        let after = (r[0] + r[2]).hypot(r[1] + r[3] - 1.0);
        assert!(after <= before + 1e-15, "{r:?}");
    }
}

#[test]
fn flags_override_config_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"points": 5, "mu": 0.05, "format": "json"}"#).unwrap();
    let out = dir.path().join("r.json");
    let (cfg, out_s) = (cfg.to_str().unwrap(), out.to_str().unwrap());

    snn(&["verify-contraction", "--config", cfg, "--no-refine", "-o", out_s]);
    assert_eq!(read_json(&out)["lattice_points"].as_u64(), Some(625));
    snn(&["verify-contraction", "--config", cfg, "--points", "3", "--no-refine", "-o", out_s]);
    assert_eq!(read_json(&out)["lattice_points"].as_u64(), Some(81));

    let m = snn(&["map", "--config", cfg]);
    let v: Value = serde_json::from_str(&stdout(&m)).unwrap();
    assert_eq!(v["input"]["moments"]["mu"].as_f64(), Some(0.05));
    let m = snn(&["map", "--config", cfg, "--mu", "0"]);
    let v: Value = serde_json::from_str(&stdout(&m)).unwrap();
    assert_eq!(v["input"]["moments"]["mu"].as_f64(), Some(0.0));

    std::fs::write(dir.path().join("bad.json"), "[1, 2]").unwrap();
    assert_eq!(snn(&["map", "--config", dir.path().join("bad.json").to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn worker_count_does_not_change_results() {
    let run = |workers: Option<&str>, env: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_snn"));
        c.args(["verify-contraction", "--points", "8"]);
        if let Some(w) = workers {
            c.args(["--workers", w]);
        }
        match env {
            Some(e) => c.env("SNN_WORKERS", e),
            None => c.env_remove("SNN_WORKERS"),
        };
        let o = c.output().unwrap();
        let r: VerificationReport = serde_json::from_slice(&o.stdout).unwrap();
        r
    };
    let base = run(Some("1"), None);
    assert!(base.same_result(&run(Some("3"), None)));
    assert!(base.same_result(&run(None, Some("2"))));
    let mut c = Command::new(env!("CARGO_BIN_EXE_snn"));
    let o = c.args(["verify-contraction", "--points", "3"]).env("SNN_WORKERS", "many").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seeded_runs_are_bit_identical() {
    let a = snn(&["simulate", "--depth", "3", "--width", "16", "--samples", "1000", "--seed", "4", "--format", "csv"]);
    let b = snn(&["simulate", "--depth", "3", "--width", "16", "--samples", "1000", "--seed", "4", "--format", "csv"]);
    let c = snn(&["simulate", "--depth", "3", "--width", "16", "--samples", "1000", "--seed", "5", "--format", "csv"]);
    assert_eq!(a.status.code(), Some(0));
    assert!(stdout(&a).starts_with("layer,mean,var,pred_mean,pred_var\n"));
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);

    let t = ["train", "--points", "200", "--depth", "2", "--width", "8", "--epochs", "3", "--seed", "1", "--format", "csv"];
    let (x, y) = (snn(&t), snn(&t));
    assert_eq!(x.status.code(), Some(0));
    assert!(stdout(&x).starts_with("epoch,loss,grad_ratio\n"));
    assert_eq!(stdout(&x).lines().count(), 5);
    assert_eq!(x.stdout, y.stdout);
}

#[test]
fn csv_dataset_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.csv");
    let mut text = String::from("a,b,label\n");
    for i in 0..40 {
        text.push_str(&format!("{},{},{}\n", i as f64 / 10.0, (i % 7) as f64, if i < 20 { "x" } else { "y" }));
    }
    std::fs::write(&good, text).unwrap();
    let o = snn(&["train", "--dataset", good.to_str().unwrap(), "--depth", "2", "--width", "8", "--epochs", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "a,label\n1,x\noops,y\n").unwrap();
    let o = snn(&["train", "--dataset", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("3"), "{}", String::from_utf8_lossy(&o.stderr));

    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "a,label\n").unwrap();
    assert_eq!(snn(&["train", "--dataset", empty.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn run_cli_matches_binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("selu.json");
    assert_eq!(snn_cli::run_cli(["snn", "selu", "--x", "-1", "-o", out.to_str().unwrap()]), 0);
    assert!(read_json(&out)["selu"].as_f64().unwrap() < 0.0);
    assert_eq!(snn_cli::run_cli(["snn", "--help"]), 0);
    assert_eq!(snn_cli::run_cli(["snn", "selu"]), 2);
}
