//! Sweep the pixel noise scale sigma_x and watch the rate/distortion tradeoff:
//! KL grows and the smallest posterior std shrinks as sigma_x decreases.
//!
//!     cargo run --release -p latcon --example elbo_sweep [MNIST_DIR]

mod common;

use latcon::eval::elbo_table;
use latcon::vae::{VaeConfig, VaeTrainConfig};

fn main() -> latcon::Result<()> {
    let (train, _) = common::digits(0)?;
    let vae = VaeConfig {
        hidden_dims: vec![128],
        ..VaeConfig::default()
    };
    let cfg = VaeTrainConfig {
        epochs: 5,
        seed: 3,
        ..VaeTrainConfig::default()
    };
    println!("{:>8} {:>10} {:>8} {:>10} {:>10}", "sigma_x", "ll", "kl", "elbo", "min std");
    let table = elbo_table(&train.images, &[1.0, 0.3, 0.1, 0.03], &vae, &cfg, |r| {
        println!(
            "{:>8} {:>10.1} {:>8.2} {:>10.1} {:>10.4}",
            r.sigma_x,
            r.ll,
            r.kl,
            r.elbo,
            r.sigma_profile.first().copied().unwrap_or(f64::NAN)
        )
    })?;
    if let Some(i) = table.argmax {
        println!("best ELBO at sigma_x = {}", table.rows[i].sigma_x);
    }
    Ok(())
}
