//! Train the LSTM sequence VAE on a small synthetic corpus and report
//! teacher-forced reconstruction accuracy on held-out melodies.
//!
//!     cargo run --release -p latcon --example seq_vae

use latcon::melody::{generate_corpus, CorpusConfig};
use latcon::seqvae::{reconstruction_accuracy, seq_train, SeqTrainConfig, SeqVaeConfig, SeqVaeModel};
use latcon::Rng;

fn main() -> latcon::Result<()> {
    let corpus = generate_corpus(&CorpusConfig {
        count: 900,
        ..CorpusConfig::default()
    })?;
    let (train, held) = corpus.split_at(800);
    let mut model = SeqVaeModel::new(SeqVaeConfig::default(), &mut Rng::seeded(2))?;
    let cfg = SeqTrainConfig {
        epochs: 8,
        seed: 2,
        ..SeqTrainConfig::default()
    };
    seq_train(&mut model, train, &cfg, |l| {
        println!("epoch {:>2}  ce {:.3}  kl {:.3}  acc {:.3}", l.epoch, l.ce, l.kl, l.accuracy)
    })?;
    println!("held-out reconstruction accuracy {:.3}", reconstruction_accuracy(&model, held)?);

    let z = Rng::seeded(3).normal_tensor(&[3, model.latent_dim()]);
    for m in model.decode_greedy(&z)? {
        println!("prior sample {:?}", m.tokens);
    }
    Ok(())
}
