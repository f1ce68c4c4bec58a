use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fpu-adiabatic"))
}

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn run(config: &Path, out: &Path) -> Output {
    bin()
        .arg("run")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL_HOMOLOGICAL: &str =
    r#"{"experiment": "homological", "seed": 11, "n_list": [15, 31], "n_samples": 20}"#;

#[test]
fn homological_run_passes_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "h.json", SMALL_HOMOLOGICAL);
    let out = dir.path().join("out");
    let o = run(&cfg, &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("PASS criterion 1"), "{summary}");
    assert!(summary.ends_with("overall: PASS\n"));
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap();
    for key in ["config", "sampler_diagnostics", "theta", "min_denominators", "git_describe", "wall_time_seconds"] {
        assert!(meta.get(key).is_some(), "missing {key}");
    }
    assert_eq!(meta["config"]["seed"], 11);
    let theta = meta["theta"][0]["theta"].as_f64().unwrap();
    assert!((-1.0..0.0).contains(&theta));
    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(csv.starts_with("n,beta,sample,residual\n"));
    assert_eq!(csv.lines().count(), 1 + 40);
}

#[test]
fn identical_config_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"experiment": "chebyshev", "seed": 5, "n_list": [15], "beta_list": [50, 100], "n_samples": 64}"#,
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&cfg, &a);
    let o = bin()
        .args(["run", "--threads", "1"])
        .arg(&cfg)
        .arg("--out")
        .arg(&b)
        .output()
        .unwrap();
    assert!(o.status.code().is_some_and(|c| c <= 1), "{}", stderr(&o));
    let (ca, cb) = (
        fs::read(a.join("results.csv")).unwrap(),
        fs::read(b.join("results.csv")).unwrap(),
    );
    assert!(!ca.is_empty());
    assert_eq!(ca, cb);
}

#[test]
fn missing_seed_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "m.json", r#"{"experiment": "homological"}"#);
    let o = run(&cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn validate_names_the_bad_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "b.json",
        r#"{"experiment": "homological", "seed": 1, "beta_list": [100, -2]}"#,
    );
    let o = bin().arg("validate").arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("beta_list"), "{}", stderr(&o));

    let cfg = write_config(
        dir.path(),
        "p.json",
        r#"{"experiment": "homological", "seed": 1, "profile": {"kind": "gaussian"}}"#,
    );
    let o = bin().arg("validate").arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for kind in ["constant", "even_polynomial", "cosine", "bump", "linear"] {
        assert!(err.contains(kind), "{err}");
    }
}

#[test]
fn validate_prints_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "v.json", r#"{"experiment": "lemma3-scan", "seed": 2}"#);
    let o = bin().arg("validate").arg(&cfg).output().unwrap();
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["n_list"], serde_json::json!([63, 127, 255]));
    assert_eq!(v["beta_list"], serde_json::json!([50.0, 100.0, 200.0]));
}

#[test]
fn failing_run_exits_one_and_names_the_check() {
    let dir = tempfile::tempdir().unwrap();
    // leapfrog at dt = 0.5 cannot hold energy to 1e-4
    let cfg = write_config(
        dir.path(),
        "f.json",
        r#"{"experiment": "identities", "seed": 1, "n_list": [15], "dt": 0.5, "n_samples": 2,
            "t_grid": {"horizon": 50, "points": 11}}"#,
    );
    let o = run(&cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("energy.N15"), "{}", stderr(&o));
    let summary = fs::read_to_string(dir.path().join("out/summary.txt")).unwrap();
    assert!(summary.contains("overall: FAIL (first failure: energy.N15"));
}

#[test]
fn list_experiments_names_every_suite() {
    let o = bin().arg("list-experiments").output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for name in [
        "homological",
        "identities",
        "ratio-scaling",
        "autocorrelation",
        "lemma3-scan",
        "chebyshev",
        "multi-packet",
        "theorem2-h1",
        "sampler-validation",
    ] {
        assert!(text.contains(name));
    }
}
