//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward passes, so it stays
//! independent of the backward rules it is used to verify.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Central differences `(f(x + h) - f(x - h)) / 2h` for every input element.
pub fn numeric_gradient(
    f: impl Fn(&[Tensor]) -> Result<f64>,
    inputs: &[Tensor],
    h: f64,
) -> Result<Vec<Tensor>> {
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[k].shape());
        for j in 0..inputs[k].len() {
            let x0 = inputs[k].data()[j];
            work[k].data_mut()[j] = x0 + h;
            let up = f(&work)?;
            work[k].data_mut()[j] = x0 - h;
            let down = f(&work)?;
            work[k].data_mut()[j] = x0;
            g.data_mut()[j] = (up - down) / (2.0 * h);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Largest elementwise `|a - b| / max(|a|, |b|, floor)` over all tensors.
pub fn max_relative_error(a: &[Tensor], b: &[Tensor], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.data().iter().zip(y.data()))
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Where random inputs for an operation are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Any real value.
    Real,
    /// Strictly positive, bounded away from zero.
    Positive,
    /// Magnitude bounded away from zero (avoids kinks at 0).
    NonZero,
}

impl Domain {
    /// Maps a draw in `[-1, 1)` into the domain.
    pub fn map(self, u: f64) -> f64 {
        match self {
            Domain::Real => 2.0 * u,
            Domain::Positive => 0.5 + 1.5 * (u + 1.0),
            Domain::NonZero => u.signum() * (0.1 + u.abs()),
        }
    }
}

type Apply = for<'t> fn(&[Var<'t>]) -> Result<Var<'t>>;

/// One differentiable operation with input shapes parameterized by `(rows, cols)`.
#[derive(Clone, Copy)]
pub struct OpCase {
    pub name: &'static str,
    pub shapes: fn(usize, usize) -> Vec<Vec<usize>>,
    pub domain: Domain,
    pub apply: Apply,
}

impl std::fmt::Debug for OpCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name)
    }
}

fn mat(r: usize, c: usize) -> Vec<Vec<usize>> {
    vec![vec![r, c]]
}

fn mat2(r: usize, c: usize) -> Vec<Vec<usize>> {
    vec![vec![r, c], vec![r, c]]
}

/// Every differentiable operation the tape supports.
pub fn op_catalog() -> Vec<OpCase> {
    use Domain::*;
    macro_rules! case {
        ($name:expr, $shapes:expr, $dom:expr, $f:expr) => {
            OpCase {
                name: $name,
                shapes: $shapes,
                domain: $dom,
                apply: $f,
            }
        };
    }
    vec![
        case!("add", mat2, Real, |v| v[0].add(v[1])),
        case!("sub", mat2, Real, |v| v[0].sub(v[1])),
        case!("mul", mat2, Real, |v| v[0].mul(v[1])),
        case!("div", mat2, Positive, |v| v[0].div(v[1])),
        case!("div_safe", mat2, Positive, |v| v[0].div_safe(v[1])),
        case!("scale", mat, Real, |v| v[0].scale(-1.7)),
        case!("add_scalar", mat, Real, |v| v[0].add_scalar(0.3)),
        case!("matmul", |r, c| vec![vec![r, c], vec![c, r + 1]], Real, |v| v[0]
            .matmul(v[1])),
        case!("matmul_nt", |r, c| vec![vec![r, c], vec![r + 1, c]], Real, |v| {
            v[0].matmul_t(v[1], false, true)
        }),
        case!("matmul_tn", |r, c| vec![vec![c, r], vec![c, r + 2]], Real, |v| {
            v[0].matmul_t(v[1], true, false)
        }),
        case!("matmul_tt", |r, c| vec![vec![c, r], vec![r + 1, c]], Real, |v| {
            v[0].matmul_t(v[1], true, true)
        }),
        case!("add_row", |r, c| vec![vec![r, c], vec![c]], Real, |v| v[0]
            .add_row(v[1])),
        case!("mul_row", |r, c| vec![vec![r, c], vec![c]], Real, |v| v[0]
            .mul_row(v[1])),
        case!("mul_col", |r, c| vec![vec![r, c], vec![r]], Real, |v| v[0]
            .mul_col(v[1])),
        case!("sum", mat, Real, |v| v[0].sum()),
        case!("mean", mat, Real, |v| v[0].mean()),
        case!("sum_rows", mat, Real, |v| v[0].sum_rows()),
        case!("sum_cols", mat, Real, |v| v[0].sum_cols()),
        case!("mean_cols", mat, Real, |v| v[0].mean_cols()),
        case!("expand_scalar", |_, _| vec![vec![]], Real, |v| v[0]
            .expand_scalar(&[3, 2])),
        case!("broadcast_rows", |_, c| vec![vec![c]], Real, |v| v[0]
            .broadcast_rows(3)),
        case!("broadcast_cols", |r, _| vec![vec![r]], Real, |v| v[0]
            .broadcast_cols(4)),
        case!("relu", mat, NonZero, |v| v[0].relu()),
        case!("clamp_min", mat, NonZero, |v| v[0].clamp_min(0.0)),
        case!("sigmoid", mat, Real, |v| v[0].sigmoid()),
        case!("tanh", mat, Real, |v| v[0].tanh()),
        case!("exp", mat, Real, |v| v[0].exp()),
        case!("log", mat, Positive, |v| v[0].log()),
        case!("softplus", mat, Real, |v| v[0].softplus()),
        case!("square", mat, Real, |v| v[0].square()),
        case!("sqrt", mat, Positive, |v| v[0].sqrt()),
        case!("concat_cols", |r, c| vec![vec![r, c], vec![r, c + 1]], Real, |v| {
            v[0].concat_cols(v[1])
        }),
        case!("narrow_cols", |r, c| vec![vec![r, c + 2]], Real, |v| v[0]
            .narrow_cols(1, 2)),
        case!("pad_cols", mat, Real, |v| {
            let c = v[0].shape()[1];
            v[0].pad_cols(1, c + 3)
        }),
        case!("log_softmax", mat, Real, |v| v[0].log_softmax()),
        case!("row_norm", mat, NonZero, |v| v[0].row_norm()),
    ]
}

/// Result of checking one operation on one random draw.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    pub max_rel_error: f64,
}

/// Compares tape gradients of `sum(op(inputs) ⊙ w)` for a random fixed
/// weighting `w` against central differences with step `h`.
pub fn check_case(
    case: &OpCase,
    rows: usize,
    cols: usize,
    h: f64,
    draw: &mut dyn FnMut() -> f64,
) -> Result<CheckOutcome> {
    let shapes = (case.shapes)(rows, cols);
    let inputs: Vec<Tensor> = shapes
        .iter()
        .map(|s| {
            let n: usize = s.iter().product();
            let data = (0..n).map(|_| case.domain.map(draw())).collect();
            Tensor::new(s.clone(), data)
        })
        .collect::<Result<_>>()?;

    let out_shape = {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        (case.apply)(&vars)?.shape()
    };
    let n_out: usize = out_shape.iter().product();
    let weights = Tensor::new(out_shape, (0..n_out).map(|_| draw()).collect())?;

    let loss_of = |xs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone())).collect();
        let w = tape.leaf(weights.clone());
        (case.apply)(&vars)?.mul(w)?.sum()?.item()
    };

    let analytic = {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let w = tape.leaf(weights.clone());
        let loss = (case.apply)(&vars)?.mul(w)?.sum()?;
        tape.gradients(loss, &vars)?
    };
    let numeric = numeric_gradient(loss_of, &inputs, h)?;
    Ok(CheckOutcome {
        name: case.name,
        shapes,
        max_rel_error: max_relative_error(&analytic, &numeric, 1e-6),
    })
}
