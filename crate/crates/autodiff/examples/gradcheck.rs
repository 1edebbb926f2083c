//! Compare tape gradients of every differentiable op against central
//! differences on random inputs.
//!
//!     cargo run --release -p latcon-autodiff --example gradcheck

use autodiff::check::{check_case, op_catalog};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> autodiff::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst = 0.0f64;
    for case in op_catalog() {
        let (r, c) = (rng.random_range(1..5), rng.random_range(1..5));
        let out = check_case(&case, r, c, 1e-5, &mut || rng.random_range(-1.0..1.0))?;
        println!("{:<16} {:?}  max rel err {:.2e}", out.name, out.shapes, out.max_rel_error);
        worst = worst.max(out.max_rel_error);
    }
    println!("worst {worst:.2e}");
    Ok(())
}
