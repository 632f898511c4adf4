use std::io::Write;
use std::process::{Command, Output, Stdio};

fn calpost(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_calpost")).args(args).output().expect("binary runs")
}

fn calpost_stdin(args: &[&str], input: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_calpost"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("binary runs");
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

const TABLE1: &str = "prediction,state\n0.5001,0\n0.4999,1\n";

#[test]
fn metrics_on_table1_from_stdin() {
    let out = calpost_stdin(&["metrics", "-"], TABLE1);
    assert!(out.status.success());
    let v = json(&out);
    assert_eq!(v["ece"], 0.5001);
    assert_eq!(v["cdl_vshape"], 1.0);
    let dtc = v["dtc_primal"].as_f64().unwrap();
    assert!((5e-5..=1.1e-4).contains(&dtc));
}

#[test]
fn calibrated_input_has_zero_metrics() {
    let out = calpost_stdin(&["--format", "csv", "metrics", "-"], "0.5,1\n0.5,0\n1,1\n");
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    let keys: Vec<&str> = lines.next().unwrap().split(',').collect();
    let vals: Vec<&str> = lines.next().unwrap().split(',').collect();
    for (k, v) in keys.iter().zip(vals) {
        if ["ece", "smcal", "dtc_primal", "dtc_dual", "cdl_lp", "cdl_vshape"].contains(k) {
            assert!(v.parse::<f64>().unwrap().abs() < 1e-9, "{k}={v}");
        }
    }
}

#[test]
fn parse_error_exits_2_with_line() {
    let out = calpost_stdin(&["metrics", "-"], "0.2,1\n0.3,7\n");
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    assert_eq!(calpost(&["metrics", "--bogus"]).status.code(), Some(2));
}

#[test]
fn adversary_files_feed_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = calpost(&["adversary", "--eps", "0.04", "--horizon", "100", "--out-dir", d]);
    assert!(out.status.success());
    let v = json(&out);
    assert_eq!((v["ones_block1"].as_u64(), v["ones_block2"].as_u64(), v["ones_seq2"].as_u64()), (Some(44), Some(56), Some(52)));
    let coupling = dir.path().join("batch_coupling.csv");
    let out = calpost(&["metrics", "--coupling", coupling.to_str().unwrap()]);
    assert_eq!(json(&out)["dist"], 0.04);
    let seq = dir.path().join("online_seq1.csv");
    assert!(calpost(&["metrics", seq.to_str().unwrap()]).status.success());
    let out = calpost(&["adversary", "--eps", "0.04", "--horizon", "101", "--out-dir", d]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("125"));
}

#[test]
fn postprocess_is_seeded() {
    let run = |seed: &str| calpost_stdin(&["--seed", seed, "--format", "csv", "postprocess", "-", "--mech", "laplace:eps=0.01"], TABLE1).stdout;
    assert_eq!(run("4"), run("4"));
    assert_ne!(run("4"), run("5"));
    let text = String::from_utf8(run("4")).unwrap();
    assert!(text.starts_with("prediction,state,p\n"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn online_postprocess_stays_on_grid() {
    let rows: String = (0..27).map(|i| format!("{},{}\n", i as f64 / 27.0, i % 2)).collect();
    let out = calpost_stdin(&["--format", "csv", "postprocess", "-", "--online", "--mech", "gauss:eps=0.01"], &rows);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for line in text.lines().skip(1) {
        let p: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((p * 3.0 - (p * 3.0).round()).abs() < 1e-12, "{p} not on the thirds grid");
    }
    let out = calpost_stdin(&["postprocess", "-", "--online", "--horizon", "5", "--mech", "point"], &rows);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn experiment_reports_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let args = ["--format", "csv", "experiment", "--eps", "0.01,0.04", "--mech", "laplace", "--out-dir", d];
    let a = calpost(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, calpost(&args).stdout);
    assert!(dir.path().join("report.json").exists());
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(csv.starts_with("eps,metric,value,bound,slack,stderr"));

    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"kind":"online","eps_list":[0.04],"horizon":100,"trials":10}"#).unwrap();
    let out = calpost(&["experiment", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(json(&out)["kind"], "online");

    let out = calpost(&["experiment", "--eps", "0.04", "--mech", "point"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn verify_quick_and_negative_control() {
    let out = calpost(&["verify", "--quiet"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = calpost(&["verify", "--quiet", "--inject-dp-fault"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("check_dp_ratio"));
}
