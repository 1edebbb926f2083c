//! Class-conditional generation from an unconditional VAE. A conditional
//! critic/actor pair shifts prior samples toward a requested digit; the same
//! request is then served by gradient-based optimisation against a realism
//! critic plus an attribute critic. A pixel classifier scores both.
//!
//!     cargo run --release -p latcon --example conditional_sampling [MNIST_DIR]

mod common;

use latcon::actors::{train_realism_pair, GOptConfig, GanTrainConfig, LatentData};
use latcon::constraints::{conditional_latents, train_attribute_critic, AttrCriticConfig, SampleMode};
use latcon::eval::{train_classifier, ClassifierConfig};
use latcon::io::render::image_grid;
use latcon::nn::one_hot;
use latcon::Rng;

fn main() -> latcon::Result<()> {
    let (train, _) = common::digits(0)?;
    let vae = common::small_vae(&train, 10, 1)?;
    let enc = vae.encode(&train.images)?;
    let sigma_bar = vae.sigma_bar()?.to_vec();
    let labels = train.one_hot_labels(10);
    let gan = GanTrainConfig {
        iterations: 200,
        batch: 64,
        hidden: vec![64, 64],
        seed: 5,
        ..GanTrainConfig::default()
    };

    let conditional = LatentData {
        posterior: &enc,
        labels: Some(&labels),
        sigma_bar: &sigma_bar,
    };
    let actor = train_realism_pair(&conditional, &gan, |_| {})?.actor;
    let unconditional = LatentData { labels: None, ..conditional };
    let d_real = train_realism_pair(&unconditional, &gan, |_| {})?.critic;
    let d_attr = train_attribute_critic(
        &enc,
        &labels,
        &AttrCriticConfig {
            hidden: vec![64],
            iterations: 300,
            ..AttrCriticConfig::default()
        },
    )?;
    let clf = train_classifier(
        &train.images,
        &train.label_indices(),
        &ClassifierConfig {
            hidden: vec![128],
            epochs: 5,
            ..ClassifierConfig::default()
        },
    )?;

    let targets: Vec<usize> = (0..100).map(|i| i % 10).collect();
    let y = one_hot(&targets, 10);
    let z = Rng::seeded(9).normal_tensor(&[targets.len(), vae.latent_dim()]);
    let optimize = SampleMode::Optimize {
        d_real: &d_real,
        d_attr: &d_attr,
        realism_weight: 0.1,
        attr_weight: 1.0,
        g_opt: GOptConfig {
            steps: 50,
            ..GOptConfig::default()
        },
    };
    let out = common::out_dir("conditional_sampling");
    for (name, mode) in [("actor", SampleMode::Actor(&actor)), ("optimize", optimize)] {
        let images = vae.decode(&conditional_latents(&mode, &z, &y)?)?;
        let pred = clf.predict(&images)?;
        let hits = pred.iter().zip(&targets).filter(|(a, b)| a == b).count();
        println!("{name:<9} classified as target: {hits}/{}", targets.len());
        image_grid(&images, train.rows, train.cols, 10, 10)?.save(out.join(name))?;
    }
    println!("grids in {}", out.display());
    Ok(())
}
