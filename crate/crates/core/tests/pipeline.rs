use std::fs;
use std::path::{Path, PathBuf};

use latcon::pipeline::{ExperimentConfig, Pipeline, Task};
use latcon::Error;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist/fixture")
}

fn pipeline(out: &Path) -> Pipeline {
    let mut p = Pipeline::new(ExperimentConfig::smoke(fixture(), out)).unwrap();
    p.quiet = true;
    p
}

#[test]
fn reruns_with_the_same_seed_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for t in [Task::TrainVae, Task::TrainRealism, Task::GenCorpus] {
        pipeline(a.path()).run(t).unwrap();
        pipeline(b.path()).run(t).unwrap();
        let f = format!("metrics/{}.json", t.name());
        assert_eq!(fs::read(a.path().join(&f)).unwrap(), fs::read(b.path().join(&f)).unwrap(), "{f}");
    }
    assert_eq!(
        fs::read(a.path().join("vae/params.bin")).unwrap(),
        fs::read(b.path().join("vae/params.bin")).unwrap()
    );
}

#[test]
fn a_different_seed_changes_the_weights() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path()).run(Task::TrainVae).unwrap();
    let mut cfg = ExperimentConfig::smoke(fixture(), b.path());
    cfg.seed = 1;
    let mut p = Pipeline::new(cfg).unwrap();
    p.quiet = true;
    p.run(Task::TrainVae).unwrap();
    assert_ne!(
        fs::read(a.path().join("vae/params.bin")).unwrap(),
        fs::read(b.path().join("vae/params.bin")).unwrap()
    );
}

#[test]
fn dependencies_are_reported_by_task_name() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = pipeline(dir.path());
    for (task, needs) in [
        (Task::Contour, "train-realism"),
        (Task::TrainCgan, "train-vae"),
        (Task::TrainSeqvae, "gen-corpus"),
        (Task::ZeroShot, "train-seqvae"),
    ] {
        match p.run(task) {
            Err(Error::Dependency { requires, .. }) => assert_eq!(requires, needs, "{}", task.name()),
            other => panic!("{}: expected a dependency error, got {other:?}", task.name()),
        }
    }
}

#[test]
fn latent_size_mismatch_is_a_dependency_error() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path()).run(Task::TrainVae).unwrap();
    pipeline(dir.path()).run(Task::TrainRealism).unwrap();
    let mut cfg = ExperimentConfig::smoke(fixture(), dir.path());
    cfg.vae.latent_dim = 4;
    let mut p = Pipeline::new(cfg).unwrap();
    p.quiet = true;
    p.run(Task::TrainVae).unwrap();
    assert!(matches!(p.run(Task::Contour), Err(Error::Dependency { .. })));
}

#[test]
fn full_smoke_run_bundles_every_task() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path()).run_all().unwrap();
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(v["missing"], serde_json::json!([]));
    assert_eq!(v["tasks"].as_object().unwrap().len(), Task::ALL.len() - 1);
    assert!(v["config"].get("out_dir").is_none());
}
