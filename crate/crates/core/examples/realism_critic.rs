//! Fit a realism critic and a latent actor on VAE encodings, then check that
//! the critic prefers held-out encodings over prior draws and that the
//! distance penalty keeps the actor's shifts small.
//!
//!     cargo run --release -p latcon --example realism_critic [MNIST_DIR]

mod common;

use latcon::actors::{apply_actor, train_realism_pair, GanTrainConfig, LatentData};
use latcon::eval::{auc, z_mse};
use latcon::vae::reparameterize;
use latcon::Rng;

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
    let base = GanTrainConfig {
        iterations: 150,
        batch: 64,
        hidden: vec![64, 64],
        seed: 5,
        ..GanTrainConfig::default()
    };

    let mut rng = Rng::seeded(11);
    let held_enc = vae.encode(&held.images)?;
    let held_z = reparameterize(&held_enc, &rng.normal_tensor(held_enc.mu.shape()))?;
    let z = rng.normal_tensor(&[500, vae.latent_dim()]);

    for lambda in [0.1, 0.0] {
        let pair = train_realism_pair(&data, &GanTrainConfig { lambda_dist: lambda, ..base.clone() }, |_| {})?;
        let d_held = pair.critic.prob(&held_z, None)?;
        let d_prior = pair.critic.prob(&z, None)?;
        let zp = apply_actor(&pair.actor, &z, None)?;
        let d_shifted = pair.critic.prob(&zp, None)?;
        println!(
            "lambda_dist {lambda:<4} AUC(held-out vs prior) {:.3}  D(z) {:.3} -> D(G(z)) {:.3}  z_MSE {:.4}",
            auc(d_held.data(), d_prior.data()),
            common::mean(d_prior.data()),
            common::mean(d_shifted.data()),
            z_mse(&z, &zp, &sigma_bar)?
        );
    }
    Ok(())
}
