use std::path::Path;
use std::process::{Command, Output};

fn evnsp(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_evnsp"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("case.toml");
    let out = dir.join("out");
    let text = format!("[grid]\nnx = 12\nnz = 9\n[output]\ndiag_every = 2\nout_dir = {:?}\n{body}", out.display().to_string());
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn error_block(o: &Output) -> toml::Table {
    let text = String::from_utf8_lossy(&o.stderr);
    let start = text.find("[error]").unwrap_or_else(|| panic!("no error block in {text}"));
    text[start..].parse().unwrap()
}

#[test]
fn run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[time]\nt_end = 0.02\ndt_max = 0.005\n");
    let o = evnsp(&["run", &cfg], &[("EVNSP_THREADS", "1")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out");
    let diag = std::fs::read_to_string(out.join("diag.csv")).unwrap();
    assert!(diag.lines().count() >= 3);
    assert!(out.join("run_manifest.toml").exists());
    assert!(out.join("final.evnsp").exists());
}

#[test]
fn init_then_diag_prints_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let snap = dir.path().join("init.evnsp").display().to_string();
    let o = evnsp(&["init", &cfg, "--out", &snap], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = evnsp(&["diag", &snap, &cfg], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("time,"));
    assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
    let t: f64 = lines[1].split(',').next().unwrap().parse().unwrap();
    assert_eq!(t, 0.0);
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[physics]\nmu = -1.0\n");
    let o = evnsp(&["run", &cfg], &[]);
    assert_eq!(o.status.code(), Some(2));
    let e = error_block(&o);
    assert_eq!(e["error"]["code"].as_integer(), Some(2));

    let o = evnsp(&["run", "/nonexistent/case.toml"], &[]);
    assert_eq!(o.status.code(), Some(2));

    let o = evnsp(&["verify", "--suite", "operators", "--levels", "8,16"], &[("EVNSP_THREADS", "0")]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_block(&o)["error"]["kind"].as_str(), Some("ConfigError"));
}

#[test]
fn numerical_abort_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[time]\nt_end = 50.0\ndt_max = 1.0\ncfl_advective = 40.0\ncfl_diffusive = 25.0\n[init]\namplitude = 0.3\n",
    );
    let o = evnsp(&["run", &cfg], &[]);
    assert_eq!(o.status.code(), Some(3));
    let e = error_block(&o);
    assert_eq!(e["error"]["code"].as_integer(), Some(3));
    assert!(e["error"]["step"].as_integer().unwrap() > 0);
    assert!(e["error"]["time"].as_float().unwrap() > 0.0);
}

#[test]
fn verify_passes_and_fails_the_negative_control() {
    let o = evnsp(&["verify", "--suite", "operators", "--levels", "8,16,32"], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["suites"][0]["checks"].as_array().unwrap().len(), 6);

    let o = evnsp(&["verify", "--suite", "operators", "--levels", "8,16,32", "--inject-broken-stencil"], &[]);
    assert_eq!(o.status.code(), Some(4));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let grad = &report["suites"][0]["checks"][0];
    assert_eq!(grad["name"], "gradient order");
    assert!(grad["measured"].as_f64().unwrap() < 1.5);
    assert_eq!(error_block(&o)["error"]["kind"].as_str(), Some("VerificationFailure"));
}
