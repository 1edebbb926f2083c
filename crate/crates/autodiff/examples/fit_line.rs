//! Fit y = 3x - 1 with Adam, then take a gradient of a gradient: the penalty
//! (|dy/dx| - 1)^2 is itself differentiable with respect to the weights.
//!
//!     cargo run --release -p latcon-autodiff --example fit_line

use autodiff::{AdamConfig, AdamState, Tape, Tensor};

fn main() -> autodiff::Result<()> {
    let xs: Vec<f64> = (0..20).map(|i| i as f64 / 10.0 - 1.0).collect();
    let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 1.0).collect();
    let x = Tensor::new([20, 1], xs)?;
    let y = Tensor::new([20, 1], ys)?;
    let mut w = Tensor::zeros([1, 1]);
    let mut b = Tensor::zeros([1]);
    let mut adam = AdamState::new(AdamConfig::new(0.1, 0.9, 0.999), [&w, &b]);

    for step in 0..300 {
        let tape = Tape::new();
        let (wv, bv) = (tape.leaf(w.clone()), tape.leaf(b.clone()));
        let pred = tape.leaf(x.clone()).matmul(wv)?.add_row(bv)?;
        let loss = pred.sub(tape.leaf(y.clone()))?.square()?.mean()?;
        let grads = tape.gradients(loss, &[wv, bv])?;
        if step % 100 == 0 {
            println!("step {step:>3}  loss {:.6}", loss.item()?);
        }
        adam.step(&mut [&mut w, &mut b], &grads)?;
    }
    println!("w {:.4}  b {:.4}", w.data()[0], b.data()[0]);

    let tape = Tape::new();
    let (xv, wv) = (tape.leaf(x.clone()), tape.leaf(w.clone()));
    let out = xv.matmul(wv)?.sum()?;
    let dx = tape.grad(out, &[xv])?[0];
    let penalty = dx.add_scalar(-1.0)?.square()?.mean()?;
    let dw = tape.gradients(penalty, &[wv])?;
    println!("penalty {:.4}, d penalty / dw {:.4} (expected 2(w-1))", penalty.item()?, dw[0].data()[0]);
    Ok(())
}
