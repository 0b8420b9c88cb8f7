use std::path::Path;
use std::process::{Command, Output};

fn o2n(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_o2n")).args(args).current_dir(cwd).env("O2N_WORKERS", "2").output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn trace_row_count_contract() {
    let dir = tempfile::tempdir().unwrap();
    let out = o2n(
        &["run", "--problem", "abs_sum", "--strategy", "OPTION_I", "--epsilon", "1", "--sigma", "0.1", "-T", "10", "--out", "r"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("r/trace.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 11);
    assert!(lines[0].starts_with("schema_version,seed,epoch,t,"));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["schema_version"], 1);
    assert!(summary["params"]["derived"]["beta_star"].is_f64());
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"problem": "sharp_valley_2d", "strategy": "ANCHORING", "epsilon": 0.5, "sigma": 0.1, "T": 20, "N": 3, "seeds": 2, "trace": "full"}"#;
    std::fs::write(dir.path().join("cfg.json"), cfg).unwrap();
    let out = o2n(&["run", "--config", "cfg.json", "--seeds", "3", "--out", "r"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("r/trace.csv")).unwrap();
    // 3 seeds x 3 epochs x 20 steps, every row with a certificate
    assert_eq!(csv.lines().count(), 1 + 180);
    assert!(csv.lines().skip(1).all(|l| !l.ends_with(',')));
}

#[test]
fn params_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let out = o2n(&["params", "--epsilon", "0.7", "--lambda", "1", "--G", "1", "--sigma", "0", "--cx", "0"], dir.path());
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["beta_star"].as_f64().unwrap() - 0.99).abs() < 1e-15);
    assert!((v["d_star"].as_f64().unwrap() - 0.25 * 0.7f64.sqrt()).abs() < 1e-15);

    let out = o2n(&["params", "--epsilon", "3.6", "--G", "1", "--cx", "0"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("(7/2)(G + sigma)"));
}

#[test]
fn invalid_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["run", "--problem", "abs_sum", "--epsilon", "1", "--sigma", "0.1", "-T", "10"];
    let with = |extra: &[&str]| {
        let mut a = base.to_vec();
        a.extend_from_slice(extra);
        code(&o2n(&a, dir.path()))
    };
    assert_eq!(with(&["--strategy", "OPTION_III", "--gamma", "0.1"]), 2);
    assert_eq!(with(&["--strategy", "OPTION_I", "--seeds", "0"]), 2);
    assert_eq!(with(&["--strategy", "OPTION_I", "--problem", "nope"]), 2);
    assert_eq!(with(&["--strategy", "OPTION_I", "--beta", "1.5"]), 2);
    assert_eq!(with(&["--strategy", "SF_SGD_DIRECT", "--gamma", "0.01"]), 0);
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = o2n(
        &[
            "run", "--problem", "smooth_quadratic", "--strategy", "SF_SGD_DIRECT", "--epsilon", "1", "--sigma", "1", "-T",
            "1000", "--gamma", "1e300",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("seed 0") && err.contains("step"), "{err}");
}

#[test]
fn verify_and_corrupted_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = o2n(&["verify", "identities", "--report", "rep.json"], dir.path());
    assert_eq!(code(&out), 0);
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("rep.json")).unwrap()).unwrap();
    assert_eq!(rep["pass"], true);

    let params = o2n(&["params", "--epsilon", "0.5", "--G", "1", "--sigma", "0.1", "--cx", "16"], dir.path());
    let mut doc: serde_json::Value = serde_json::from_slice(&params.stdout).unwrap();
    std::fs::write(dir.path().join("good.json"), doc.to_string()).unwrap();
    assert_eq!(code(&o2n(&["verify", "equivalence", "--params", "good.json"], dir.path())), 0);

    doc["mu_star"] = (doc["mu_star"].as_f64().unwrap() * 1.01).into();
    std::fs::write(dir.path().join("bad.json"), doc.to_string()).unwrap();
    let out = o2n(&["verify", "equivalence", "--params", "bad.json"], dir.path());
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("fixture.eta_mu_identity"));
}

#[test]
fn equivalence_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let out = o2n(&["equivalence", "-T", "200"], dir.path());
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["pass"], true);
    let out = o2n(&["equivalence", "-T", "200", "--gamma", "0.01"], dir.path());
    assert_eq!(code(&out), 1);
}
