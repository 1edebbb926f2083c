//! Zero-shot constraints on a sequence VAE: no labelled data, only a rule
//! reward. A critic learns to predict the reward of decoded melodies and an
//! actor shifts prior samples toward melodies that stay in C major.
//!
//!     cargo run --release -p latcon --example zero_shot

use latcon::actors::{apply_actor, GanTrainConfig};
use latcon::constraints::{zero_shot_train, RewardSpec, ZeroShotConfig};
use latcon::eval::{satisfaction_exact, z_mse};
use latcon::melody::{generate_corpus, CorpusConfig};
use latcon::seqvae::{seq_train, SeqTrainConfig, SeqVaeConfig, SeqVaeModel};
use latcon::{Rng, Tensor};

fn main() -> latcon::Result<()> {
    let corpus = generate_corpus(&CorpusConfig {
        count: 800,
        ..CorpusConfig::default()
    })?;
    let mut model = SeqVaeModel::new(SeqVaeConfig::default(), &mut Rng::seeded(2))?;
    seq_train(
        &mut model,
        &corpus,
        &SeqTrainConfig {
            epochs: 6,
            seed: 2,
            ..SeqTrainConfig::default()
        },
        |_| {},
    )?;

    let pitch = RewardSpec::c_major();
    let cfg = ZeroShotConfig {
        gan: GanTrainConfig {
            iterations: 150,
            ..ZeroShotConfig::default().gan
        },
        ..ZeroShotConfig::default()
    };
    let pair = zero_shot_train(&model, &pitch, &cfg, |l| {
        if l.iteration % 25 == 0 {
            println!("it {:>3}  critic {:.4}  actor {:.4}", l.iteration, l.d_loss, l.g_loss)
        }
    })?;

    let z = Rng::seeded(4).normal_tensor(&[300, model.latent_dim()]);
    let format = *model.format();
    let score = |zz: &Tensor| -> latcon::Result<latcon::eval::Satisfaction> {
        let ms = model.decode_sample(zz, cfg.temperature, 5)?;
        let r = ms.iter().map(|m| pitch.ratio(m, &format)).collect::<latcon::Result<Vec<_>>>()?;
        Ok(satisfaction_exact(&r))
    };
    let zp = apply_actor(&pair.actor, &z, None)?;
    for (name, zz) in [("prior", &z), ("actor", &zp)] {
        let s = score(zz)?;
        println!("{name:<6} mean c_pitch {:.3}  fully in key {:.3}", s.mean_reward, s.satisfaction_rate);
    }
    println!("z_MSE of the shift {:.4}", z_mse(&z, &zp, model.sigma_bar()?)?);
    Ok(())
}
