use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn recurlab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recurlab"))
        .args(args)
        .arg("-o")
        .arg(out)
        .env_remove("RECURLAB_WORKERS")
        .output()
        .expect("binary runs")
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn simulate_writes_pmf_rows_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = recurlab(&["simulate", "--samples", "500", "--n", "512", "--seed", "7"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.starts_with("map=doubling n=512 samples=500 max_tv="), "{stdout}");
    let pmf = std::fs::read_to_string(dir.path().join("pmf.csv")).unwrap();
    // three taus, k_max = 8 plus the overflow bucket, plus the header
    assert_eq!(pmf.lines().count(), 1 + 3 * 10);
    assert!(pmf.lines().any(|l| l.starts_with("1,>8,")));
    let rep = report(dir.path());
    assert_eq!(rep["failed"], Value::Bool(false));
    assert_eq!(rep["config"]["seed"], 7);
    assert!(dir.path().join("config.toml").exists());
}

#[test]
fn echoed_config_reproduces_pmf() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    recurlab(&["simulate", "--samples", "300", "--n", "256", "--map", "beta"], a.path());
    let from_json = a.path().join("report.json");
    let from_toml = a.path().join("config.toml");
    let o = recurlab(&["simulate", "-c", from_json.to_str().unwrap()], b.path());
    assert_eq!(o.status.code(), Some(0));
    let o = Command::new(env!("CARGO_BIN_EXE_recurlab"))
        .args(["simulate", "-c", from_toml.to_str().unwrap(), "-o", c.path().to_str().unwrap()])
        .env("RECURLAB_WORKERS", "2")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let first = std::fs::read(a.path().join("pmf.csv")).unwrap();
    assert_eq!(first, std::fs::read(b.path().join("pmf.csv")).unwrap());
    assert_eq!(first, std::fs::read(c.path().join("pmf.csv")).unwrap());
}

#[test]
fn limitlaw_cusp_reports_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let o = recurlab(
        &["limitlaw", "--map", "cusp", "--set", "tau_grid=[1.0, 2.0]", "--set", "k_max=2"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let rep = report(dir.path());
    let table = &rep["result"]["table"];
    let g20 = table["values"][1][0].as_f64().unwrap();
    assert!((g20 - 0.29699708).abs() < 1e-7, "{g20}");
    assert_eq!(table["methods"][1][0]["method"], "closed_form");
    let csv = std::fs::read_to_string(dir.path().join("limitlaw.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = recurlab(&["simulate", "-c", "/definitely/missing.toml"], dir.path());
    assert_eq!(o.status.code(), Some(66));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/definitely/missing.toml"));

    assert_eq!(recurlab(&["juggle"], dir.path()).status.code(), Some(2));

    let o = recurlab(&["simulate", "--set", "almost_sure.subseq_base=0.5"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("almost_sure.subseq_base"));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[precision]\nbitz = 3\n").unwrap();
    let o = recurlab(&["simulate", "-c", bad.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("precision.bitz"));
}

#[test]
fn precision_failure_is_marked() {
    let dir = tempfile::tempdir().unwrap();
    let o = recurlab(
        &["simulate", "--samples", "200", "--n", "256", "--set", "precision.kind=hardware"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(3));
    let rep = report(dir.path());
    assert_eq!(rep["failed"], Value::Bool(true));
    assert_eq!(rep["result"]["aborts"]["excluded"], 200);
}

#[test]
fn strict_breach_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    // 100 samples cannot resolve the pmf to within 0.02
    let o = recurlab(&["compare", "--samples", "100", "--n", "256", "--strict"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = recurlab(&["compare", "--samples", "100", "--n", "256"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.starts_with("tau=")).count(), 3);
    assert!(stdout.lines().last().unwrap().starts_with("max_tv="));
}

#[test]
fn compare_default_doubling_within_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let o = recurlab(&["compare", "--strict"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let stdout = String::from_utf8(o.stdout).unwrap();
    let tv: f64 = stdout.lines().last().unwrap().trim_start_matches("max_tv=").parse().unwrap();
    assert!(tv < 0.02, "{tv}");
}

#[test]
fn diagnostics_verbs_write_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let o = recurlab(
        &["almost-sure", "--set", "almost_sure.paths=200", "--set", "almost_sure.n_max=4096"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let as_csv = std::fs::read_to_string(dir.path().join("as.csv")).unwrap();
    assert!(as_csv.starts_with("k_index,n_k,r_upper,s_lower,viol_upper_freq,viol_lower_freq,ci_lo,ci_hi"));

    let o = recurlab(
        &["check-a2", "--set", "a2.samples=5000", "--set", "e2.samples=2000", "--set", "a2.n_grid=[1024, 4096]"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let a2 = std::fs::read_to_string(dir.path().join("a2.csv")).unwrap();
    assert!(a2.starts_with("j,r,mu_hat,ci_lo,ci_hi,oracle"));

    let o = recurlab(
        &["e2", "--set", "e2.samples=2000", "--set", "e2.dispersion_samples=500"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(report(dir.path())["result"]["e2"].as_array().unwrap().len(), 2);
}
