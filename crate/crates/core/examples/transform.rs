//! Identity-preserving transformation: encode a digit, then move its latent
//! code until the attribute critic reports the target class while the
//! realism critic still accepts it, staying close to the original code.
//!
//!     cargo run --release -p latcon --example transform [MNIST_DIR]

mod common;

use latcon::actors::{train_realism_pair, GanTrainConfig, LatentData};
use latcon::constraints::{train_attribute_critic, transform_identity, AttrCriticConfig, TransformConfig};
use latcon::io::render::image_grid;
use latcon::nn::one_hot;
use latcon::Tensor;

fn main() -> latcon::Result<()> {
    let (train, held) = common::digits(112)?;
    let vae = common::small_vae(&train, 10, 1)?;
    let enc = vae.encode(&train.images)?;
    let sigma_bar = vae.sigma_bar()?.to_vec();
    let data = LatentData {
        posterior: &enc,
        labels: None,
        sigma_bar: &sigma_bar,
    };
    let gan = GanTrainConfig {
        iterations: 150,
        batch: 64,
        hidden: vec![64, 64],
        seed: 5,
        ..GanTrainConfig::default()
    };
    let d_real = train_realism_pair(&data, &gan, |_| {})?.critic;
    let d_attr = train_attribute_critic(
        &enc,
        &train.one_hot_labels(10),
        &AttrCriticConfig {
            hidden: vec![64],
            iterations: 300,
            ..AttrCriticConfig::default()
        },
    )?;

    // every held-out 3 becomes an 8
    let idx: Vec<usize> = (0..held.len()).filter(|&i| held.labels[i] == 3).take(10).collect();
    let src = held.subset(&idx)?;
    let y = one_hot(&vec![8; idx.len()], 10);
    let z0 = vae.encode(&src.images)?.mu;
    let res = transform_identity(&z0, &d_real, &d_attr, &y, &TransformConfig::default())?;
    for (i, (steps, reason)) in res.steps.iter().zip(&res.reasons).enumerate() {
        println!("digit {i}: {steps:>4} steps, {reason:?}");
    }
    let pairs = Tensor::vstack(&[&src.images, &vae.decode(&res.z)?])?;
    let out = common::out_dir("transform");
    for p in image_grid(&pairs, held.rows, held.cols, 2, idx.len())?.save(out.join("three_to_eight"))? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
