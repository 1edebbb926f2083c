//! Save a model as `manifest.json` + `params.bin`, reload it and confirm the
//! parameters and outputs are bit-identical.
//!
//!     cargo run --release -p latcon --example checkpoints

mod common;

use latcon::actors::{LatentCritic, NetSpec};
use latcon::io::checkpoint::{load_checkpoint, read_manifest, save_checkpoint};
use latcon::Rng;

fn main() -> latcon::Result<()> {
    let spec = NetSpec {
        latent_dim: 8,
        hidden: vec![32, 32],
        label_dim: Some(10),
        label_proj: 16,
        outputs: 1,
    };
    let critic = LatentCritic::new(spec, &mut Rng::seeded(3))?;
    let dir = common::out_dir("checkpoints").join("critic");
    save_checkpoint(&critic, &dir, 3)?;
    let manifest = read_manifest(&dir)?;
    println!("kind {} with {} tensors, digest {}", manifest.kind, manifest.tensors.len(), manifest.digest);

    let (loaded, _) = load_checkpoint::<LatentCritic>(&dir)?;
    let mut rng = Rng::seeded(4);
    let z = rng.normal_tensor(&[5, 8]);
    let y = latcon::nn::one_hot(&[0, 1, 2, 3, 4], 10);
    let a = critic.prob(&z, Some(&y))?;
    let b = loaded.prob(&z, Some(&y))?;
    let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    println!("outputs bit-identical after reload: {same}");
    Ok(())
}
