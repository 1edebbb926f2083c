//! Train a small image VAE, report held-out ELBO terms and write a grid of
//! originals above their reconstructions.
//!
//!     cargo run --release -p latcon --example train_vae [MNIST_DIR]

mod common;

use latcon::io::checkpoint::save_checkpoint;
use latcon::io::render::image_grid;
use latcon::vae::{evaluate_elbo, train_vae, VaeConfig, VaeModel, VaeTrainConfig};
use latcon::{Rng, Tensor};

fn main() -> latcon::Result<()> {
    let (train, held) = common::digits(112)?;
    let mut model = VaeModel::new(
        VaeConfig {
            hidden_dims: vec![128],
            ..VaeConfig::default()
        },
        &mut Rng::seeded(1),
    )?;
    let cfg = VaeTrainConfig {
        epochs: 10,
        seed: 1,
        ..VaeTrainConfig::default()
    };
    train_vae(&mut model, &train.images, &cfg, |l| {
        println!("epoch {:>2}  ll {:>9.2}  kl {:>6.2}  elbo {:>9.2}", l.epoch, l.ll, l.kl, l.elbo)
    })?;

    let (ll, kl, elbo) = evaluate_elbo(&model, &held.images, 7)?;
    println!("held-out: ll {ll:.2} kl {kl:.2} elbo {elbo:.2}");
    let sb = model.sigma_bar()?;
    println!("sigma_bar range {:.3}..{:.3}", sb.iter().cloned().fold(f64::INFINITY, f64::min), sb.iter().cloned().fold(0.0, f64::max));

    let out = common::out_dir("train_vae");
    let shown = held.take(20)?;
    let both = Tensor::vstack(&[&shown.images, &model.reconstruct(&shown.images)?])?;
    for p in image_grid(&both, held.rows, held.cols, 4, 10)?.save(out.join("reconstructions"))? {
        println!("wrote {}", p.display());
    }
    save_checkpoint(&model, out.join("vae"), 1)?;
    println!("checkpoint in {}", out.join("vae").display());
    Ok(())
}
