use autodiff::check::{check_case, max_relative_error, numeric_gradient, op_catalog};
use autodiff::{Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

#[test]
fn every_op_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in op_catalog() {
        for _ in 0..4 {
            let rows = rng.random_range(1..5);
            let cols = rng.random_range(1..5);
            let out = check_case(&case, rows, cols, H, &mut || rng.random_range(-1.0..1.0)).unwrap();
            assert!(
                out.max_rel_error < TOL,
                "{} {:?}: rel err {}",
                out.name,
                out.shapes,
                out.max_rel_error
            );
        }
    }
}

#[test]
fn matmul_chain_4x3_3x2() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut rand_t = |r, c| {
        Tensor::new([r, c], (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    };
    let inputs = vec![rand_t(4, 3), rand_t(3, 2)];
    let f = |xs: &[Tensor]| {
        let tape = Tape::new();
        let a = tape.leaf(xs[0].clone());
        let b = tape.leaf(xs[1].clone());
        a.matmul(b)?.tanh()?.square()?.sum()?.item()
    };
    let tape = Tape::new();
    let a = tape.leaf(inputs[0].clone());
    let b = tape.leaf(inputs[1].clone());
    let loss = a.matmul(b).unwrap().tanh().unwrap().square().unwrap().sum().unwrap();
    let analytic = tape.gradients(loss, &[a, b]).unwrap();
    let numeric = numeric_gradient(f, &inputs, H).unwrap();
    assert!(max_relative_error(&analytic, &numeric, 1e-6) < TOL);
}

fn mlp_logit<'t>(z: Var<'t>, params: &[Var<'t>]) -> autodiff::Result<Var<'t>> {
    let h = z.matmul(params[0])?.add_row(params[1])?.tanh()?;
    h.matmul(params[2])?.add_row(params[3])
}

/// Mean of (|∂D/∂z| - 1)² for a small tanh MLP, as a function of its parameters.
fn penalty_value(params: &[Tensor], z: &Tensor) -> autodiff::Result<f64> {
    let tape = Tape::new();
    let p: Vec<Var> = params.iter().map(|t| tape.leaf(t.clone())).collect();
    let zv = tape.leaf(z.clone());
    let out = mlp_logit(zv, &p)?.sum()?;
    let dz = tape.grad(out, &[zv])?[0];
    dz.row_norm()?.add_scalar(-1.0)?.square()?.mean()?.item()
}

#[test]
fn gradient_penalty_second_order_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rand_t = |s: &[usize]| {
        let n = s.iter().product();
        Tensor::new(s, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    };
    let params = vec![rand_t(&[3, 5]), rand_t(&[5]), rand_t(&[5, 1]), rand_t(&[1])];
    let z = rand_t(&[4, 3]);

    let tape = Tape::new();
    let p: Vec<Var> = params.iter().map(|t| tape.leaf(t.clone())).collect();
    let zv = tape.leaf(z.clone());
    let out = mlp_logit(zv, &p).unwrap().sum().unwrap();
    let dz = tape.grad(out, &[zv]).unwrap()[0];
    let pen = dz.row_norm().unwrap().add_scalar(-1.0).unwrap().square().unwrap().mean().unwrap();
    let analytic = tape.gradients(pen, &p).unwrap();
    let numeric = numeric_gradient(|xs| penalty_value(xs, &z), &params, H).unwrap();
    let err = max_relative_error(&analytic, &numeric, 1e-6);
    assert!(err < TOL, "second-order rel err {err}");
    // the bias of the output layer cannot affect an input gradient
    assert_eq!(analytic[3].data(), &[0.0]);
}

#[test]
fn identical_runs_are_bit_identical() {
    let run = || {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::new([2, 3], vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]).unwrap());
        let w = tape.leaf(Tensor::new([3, 2], vec![1.0, 0.5, -0.25, 2.0, 0.0, -1.0]).unwrap());
        let l = a.matmul(w).unwrap().softplus().unwrap().log_softmax().unwrap().sum().unwrap();
        let g = tape.gradients(l, &[a, w]).unwrap();
        (l.item().unwrap().to_bits(), g)
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn sigmoid_and_softplus_finite_for_finite_logits(x in -1e300f64..1e300) {
        let tape = Tape::new();
        let v = tape.scalar(x);
        let s = v.sigmoid().unwrap().item().unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!(v.softplus().is_ok() || x > 1e308);
    }
}
