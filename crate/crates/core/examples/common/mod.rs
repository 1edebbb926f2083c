//! Helpers shared by the examples: the bundled digit fixture and a quickly
//! trained VAE.
#![allow(dead_code)]

use std::path::PathBuf;

use latcon::io::mnist::{load_mnist_dir, Dataset};
use latcon::vae::{train_vae, VaeConfig, VaeModel, VaeTrainConfig};
use latcon::{Result, Rng};

/// MNIST directory from the first CLI argument, else the 512-digit fixture.
pub fn mnist_dir() -> PathBuf {
    std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist/fixture"))
}

/// Train and held-out splits, with the last `holdout` digits held out.
pub fn digits(holdout: usize) -> Result<(Dataset, Dataset)> {
    let all = load_mnist_dir(mnist_dir())?;
    all.split(all.len() - holdout)
}

pub fn out_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("latcon-examples").join(name);
    std::fs::create_dir_all(&dir).expect("create output dir");
    dir
}

pub fn small_vae(train: &Dataset, epochs: usize, seed: u64) -> Result<VaeModel> {
    let mut model = VaeModel::new(
        VaeConfig {
            hidden_dims: vec![128],
            ..VaeConfig::default()
        },
        &mut Rng::seeded(seed),
    )?;
    let cfg = VaeTrainConfig {
        epochs,
        seed,
        ..VaeTrainConfig::default()
    };
    train_vae(&mut model, &train.images, &cfg, |_| {})?;
    Ok(model)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}
