//! Generate the synthetic melody corpus and score it with the rule-based
//! rewards: fraction of notes in C major, and note density relative to a
//! target count.
//!
//!     cargo run --release -p latcon --example melody_rewards

mod common;

use latcon::constraints::{c_density, c_pitch, RewardSpec};
use latcon::eval::satisfaction_exact;
use latcon::io::render::pianoroll_grid;
use latcon::melody::{generate_corpus, CorpusConfig, Melody, PitchSet, HOLD, REST};

fn show(m: &Melody) -> String {
    m.tokens
        .iter()
        .map(|&t| match t {
            REST => '.',
            HOLD => '-',
            t => char::from_digit(u32::from(t - 2), 16).unwrap_or('?'),
        })
        .collect()
}

fn main() -> latcon::Result<()> {
    let cfg = CorpusConfig {
        count: 500,
        ..CorpusConfig::default()
    };
    let corpus = generate_corpus(&cfg)?;
    let c_major = PitchSet::c_major();
    println!("token legend: . rest, - hold, hex digit = semitones above C4");
    for m in corpus.iter().take(6) {
        println!(
            "{}  c_pitch {:.3}  c_density(d=12) {:.3}",
            show(m),
            c_pitch(m, &c_major, cfg.format.pitch_base),
            c_density(m, 12)
        );
    }

    let pitch = RewardSpec::c_major();
    let ratios = corpus
        .iter()
        .map(|m| pitch.ratio(m, &cfg.format))
        .collect::<latcon::Result<Vec<_>>>()?;
    let s = satisfaction_exact(&ratios);
    println!(
        "corpus of {}: mean c_pitch {:.3}, fully in C major {:.3}",
        s.count, s.mean_reward, s.satisfaction_rate
    );

    let out = common::out_dir("melody_rewards");
    let shown: Vec<Melody> = corpus.iter().take(16).cloned().collect();
    for p in pianoroll_grid(&shown, &cfg.format, Some(&c_major), 4, 4)?.save(out.join("corpus"))? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
