//! Probe a trained realism critic on a 2-D slice of latent space through the
//! two most informative dimensions and export the grid as CSV and an image.
//!
//!     cargo run --release -p latcon --example critic_contour [MNIST_DIR]

mod common;

use latcon::actors::{train_realism_pair, GanTrainConfig, LatentData};
use latcon::eval::critic_contour_grid;

fn main() -> latcon::Result<()> {
    let (train, held) = common::digits(112)?;
    let vae = common::small_vae(&train, 10, 1)?;
    let enc = vae.encode(&train.images)?;
    let sigma_bar = vae.sigma_bar()?.to_vec();
    let cfg = GanTrainConfig {
        iterations: 150,
        batch: 64,
        hidden: vec![64, 64],
        seed: 5,
        ..GanTrainConfig::default()
    };
    let data = LatentData {
        posterior: &enc,
        labels: None,
        sigma_bar: &sigma_bar,
    };
    let critic = train_realism_pair(&data, &cfg, |_| {})?.critic;

    // smallest posterior std = dimensions the decoder relies on most
    let mut dims: Vec<usize> = (0..sigma_bar.len()).collect();
    dims.sort_by(|&a, &b| sigma_bar[a].total_cmp(&sigma_bar[b]));
    let anchor = vae.encode(&held.images.slice_rows(0, 1)?)?.mu;
    let grid = critic_contour_grid(&critic, anchor.row(0), (dims[0], dims[1]), (-3.0, 3.0), 31)?;
    println!("dims ({}, {}), D at the anchor {:.3}", dims[0], dims[1], grid.anchor_value());

    let out = common::out_dir("critic_contour");
    std::fs::write(out.join("grid.csv"), grid.to_csv()).expect("write csv");
    for p in grid.render(6)?.save(out.join("grid"))? {
        println!("wrote {}", p.display());
    }
    println!("wrote {}", out.join("grid.csv").display());
    Ok(())
}
