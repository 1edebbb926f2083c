use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist/fixture")
}

fn latcon(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_latcon"))
        .args(args)
        .arg("--smoke")
        .arg("-q")
        .arg("--mnist-dir")
        .arg(fixture())
        .arg("--out-dir")
        .arg(out)
        .output()
        .expect("spawn latcon")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn missing_upstream_artifact_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = latcon(dir.path(), &["sample"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train-vae"));
}

#[test]
fn unknown_config_field_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"vae": {"latent_dimension": 4}}"#).unwrap();
    let o = latcon(dir.path(), &["train-vae", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_mnist_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_latcon"))
        .args(["train-vae", "-q", "--mnist-dir"])
        .arg(dir.path().join("nowhere"))
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn config_file_merges_over_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"seed": 9, "vae": {"latent_dim": 4}}"#).unwrap();
    let o = latcon(dir.path(), &["show-config", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["seed"], 9);
    assert_eq!(v["vae"]["latent_dim"], 4);
    // untouched nested fields keep the smoke preset
    assert_eq!(v["vae"]["hidden_dims"], serde_json::json!([64]));
}

#[test]
fn task_chain_writes_stamped_metrics() {
    let dir = tempfile::tempdir().unwrap();
    for task in ["train-vae", "train-realism", "contour"] {
        let o = latcon(dir.path(), &[task]);
        assert_eq!(code(&o), 0, "{task}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let text = fs::read_to_string(dir.path().join("metrics/contour.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["task"], "contour");
    assert!(v["config_digest"].as_str().is_some_and(|d| d.len() == 64));
    assert!(dir.path().join("contour/grid.csv").exists());
}
