use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn kinlab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kinlab"))
        .env_remove("KINETIC_EM_OUT_DIR")
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn sample_output_is_byte_identical_across_runs_and_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("sample_zero.toml");
    let cfg = cfg.to_str().unwrap();
    let a = kinlab(&["--threads", "1", "sample", cfg], &tmp.path().join("a"));
    let b = kinlab(&["--threads", "3", "sample", cfg], &tmp.path().join("b"));
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(b.status.code(), Some(0), "{}", stderr(&b));
    let ea = fs::read(tmp.path().join("a/sample/endpoints.csv")).unwrap();
    let eb = fs::read(tmp.path().join("b/sample/endpoints.csv")).unwrap();
    assert_eq!(ea, eb);
    let text = String::from_utf8(ea).unwrap();
    assert!(text.starts_with("path_id,x1,v1\n"));
    assert_eq!(text.lines().count(), 101);
}

#[test]
fn manifest_records_hashes_of_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("sample_zero.toml");
    let o = kinlab(&["sample", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("sample/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "sample");
    assert_eq!(m["seed"], 1);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    let out = &m["outputs"][0];
    assert_eq!(out["path"], "endpoints.csv");
    let bytes = fs::read(tmp.path().join("sample/endpoints.csv")).unwrap();
    assert_eq!(out["bytes"], bytes.len());
}

#[test]
fn seed_flag_changes_samples() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("sample_zero.toml");
    let cfg = cfg.to_str().unwrap();
    kinlab(&["sample", cfg], &tmp.path().join("a"));
    kinlab(&["--seed", "2", "sample", cfg], &tmp.path().join("b"));
    let ea = fs::read(tmp.path().join("a/sample/endpoints.csv")).unwrap();
    let eb = fs::read(tmp.path().join("b/sample/endpoints.csv")).unwrap();
    assert_ne!(ea, eb);
}

#[test]
fn large_kappa_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("kappa_too_large.toml");
    let o = kinlab(&["sample", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("kappa"), "{}", stderr(&o));
    assert!(!tmp.path().join("sample/manifest.json").exists());
}

#[test]
fn exact_reference_needs_linear_drift() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("weak_ou.toml"))
        .unwrap()
        .replace("drift = \"ou:gamma=1\"", "drift = \"signv:A=1\"");
    let cfg = write_config(tmp.path(), "bad.toml", &text);
    let o = kinlab(&["weak-rate", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn unknown_keys_and_missing_files_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("sample_zero.toml")).unwrap() + "\nstep = 3\n";
    let cfg = write_config(tmp.path(), "bad.toml", &text);
    let o = kinlab(&["sample", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let o = kinlab(&["sample", "/nonexistent/config.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let o = kinlab(&["no-such-command"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn density_rejects_three_dimensions() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("density_ou.toml"))
        .unwrap()
        .replace("dim = 1", "dim = 3")
        .replace("z0 = { x = [0.0], v = [1.0] }", "z0 = { x = [0.0, 0.0, 0.0], v = [1.0, 0.0, 0.0] }")
        .replace("sample_count = 4000000", "sample_count = 2000");
    let cfg = write_config(tmp.path(), "d3.toml", &text);
    let o = kinlab(&["density", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn kernel_check_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = kinlab(&["kernel-check"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(!stdout.contains("FAIL"));
    assert!(tmp.path().join("kernel-check/checks.csv").exists());
    assert!(tmp.path().join("kernel-check/summary.json").exists());
}

#[test]
fn out_dir_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("sample_zero.toml");
    let o = Command::new(env!("CARGO_BIN_EXE_kinlab"))
        .env("KINETIC_EM_OUT_DIR", tmp.path())
        .args(["sample", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(tmp.path().join("sample/endpoints.csv").exists());
}

#[test]
fn json_tables_parse() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("sample_zero.toml");
    let o = kinlab(&["--format", "json", "sample", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("sample/endpoints.json")).unwrap()).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 100);
    assert_eq!(rows[7]["path_id"], 7);
    assert!(rows[0]["x1"].is_f64());
}

#[test]
fn taming_check_bundled_config_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("taming_cutoff.toml"))
        .unwrap()
        .replace("sample_budget = 100000", "sample_budget = 5000");
    let cfg = write_config(tmp.path(), "t.toml", &text);
    let o = kinlab(&["taming-check", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}{}", String::from_utf8_lossy(&o.stdout), stderr(&o));
}
