//! Operation recording and reverse-mode differentiation.
//!
//! Every operation on a [`Var`] evaluates eagerly and appends a node to its
//! [`Tape`]. [`Tape::grad`] walks the nodes backwards and expresses each
//! vector-Jacobian product with the same recorded operations, so the
//! returned gradients are themselves `Var`s on the tape and can be
//! differentiated again (needed for input-gradient penalties).

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

type Id = usize;

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Add(Id, Id),
    Sub(Id, Id),
    Mul(Id, Id),
    Div(Id, Id),
    DivSafe(Id, Id),
    Scale(Id, f64),
    AddScalar(Id),
    MatMul { a: Id, b: Id, ta: bool, tb: bool },
    AddRow(Id, Id),
    MulRow(Id, Id),
    MulCol(Id, Id),
    SumAll(Id),
    SumRows(Id),
    SumCols(Id),
    ExpandScalar(Id),
    BroadcastRows(Id),
    BroadcastCols(Id),
    Relu(Id),
    ClampMin(Id, f64),
    Sigmoid(Id),
    Tanh(Id),
    Exp(Id),
    Log(Id),
    Softplus(Id),
    Square(Id),
    Sqrt(Id),
    ConcatCols(Id, Id),
    NarrowCols { a: Id, start: usize },
    PadCols { a: Id, start: usize },
    LogSoftmax(Id),
    RowNorm(Id),
}

impl Op {
    fn inputs(&self) -> [Option<Id>; 2] {
        use Op::*;
        match *self {
            Leaf => [None, None],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | DivSafe(a, b) | AddRow(a, b)
            | MulRow(a, b) | MulCol(a, b) | ConcatCols(a, b) => [Some(a), Some(b)],
            MatMul { a, b, .. } => [Some(a), Some(b)],
            Scale(a, _) | AddScalar(a) | SumAll(a) | SumRows(a) | SumCols(a) | ExpandScalar(a)
            | BroadcastRows(a) | BroadcastCols(a) | Relu(a) | ClampMin(a, _) | Sigmoid(a)
            | Tanh(a) | Exp(a) | Log(a) | Softplus(a) | Square(a) | Sqrt(a) | LogSoftmax(a)
            | RowNorm(a) => [Some(a), None],
            NarrowCols { a, .. } | PadCols { a, .. } => [Some(a), None],
        }
    }
}

struct Node {
    op: Op,
    value: Rc<Tensor>,
}

/// An append-only record of evaluated operations.
///
/// A tape is confined to one thread; drop it (or call [`Tape::clear`]) after
/// each optimization step.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: Id,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.value().shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&mut self) {
        self.nodes.get_mut().clear();
    }

    /// Records an input (parameter, data or constant).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_unchecked(Op::Leaf, value)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.leaf(Tensor::scalar(value))
    }

    fn push_unchecked(&self, op: Op, value: Tensor) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            value: Rc::new(value),
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, name: &'static str, op: Op, value: Tensor) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        Ok(self.push_unchecked(op, value))
    }

    fn value_of(&self, id: Id) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn op_of(&self, id: Id) -> Op {
        self.nodes.borrow()[id].op
    }

    fn var(&self, id: Id) -> Var<'_> {
        Var { tape: self, id }
    }

    /// Gradients of the scalar `loss` with respect to each of `wrt`.
    ///
    /// The gradients are recorded on this tape, so a function of them can be
    /// differentiated again. Variables that `loss` does not depend on get a
    /// zero gradient.
    pub fn grad<'t>(&'t self, loss: Var<'t>, wrt: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        loss.check_tape(self)?;
        for w in wrt {
            w.check_tape(self)?;
        }
        let loss_value = loss.value();
        if loss_value.len() != 1 {
            return Err(Error::NotScalar {
                op: "grad",
                shape: loss_value.shape().to_vec(),
            });
        }

        let n = loss.id + 1;
        let mut needs = vec![false; n];
        for w in wrt {
            if w.id < n {
                needs[w.id] = true;
            }
        }
        {
            let nodes = self.nodes.borrow();
            for i in 0..n {
                if !needs[i] {
                    needs[i] = nodes[i].op.inputs().iter().flatten().any(|&j| needs[j]);
                }
            }
        }

        let mut adj: Vec<Option<Var<'t>>> = vec![None; n];
        adj[loss.id] = Some(self.leaf(Tensor::ones(loss_value.shape())));

        for i in (0..n).rev() {
            if !needs[i] {
                continue;
            }
            let Some(g) = adj[i] else { continue };
            let op = self.op_of(i);
            let out = self.var(i);
            for (input, contrib) in self.vjp(op, out, g, &needs)? {
                adj[input] = Some(match adj[input] {
                    Some(prev) => prev.add(contrib)?,
                    None => contrib,
                });
            }
        }

        Ok(wrt
            .iter()
            .map(|w| {
                adj.get(w.id)
                    .copied()
                    .flatten()
                    .unwrap_or_else(|| self.leaf(Tensor::zeros(w.value().shape())))
            })
            .collect())
    }

    /// Convenience wrapper returning gradient values only.
    pub fn gradients<'t>(&'t self, loss: Var<'t>, wrt: &[Var<'t>]) -> Result<Vec<Tensor>> {
        Ok(self
            .grad(loss, wrt)?
            .into_iter()
            .map(|g| g.value().as_ref().clone())
            .collect())
    }

    fn vjp<'t>(
        &'t self,
        op: Op,
        out: Var<'t>,
        g: Var<'t>,
        needs: &[bool],
    ) -> Result<Vec<(Id, Var<'t>)>> {
        use Op::*;
        let v = |id| self.var(id);
        let mut res = Vec::with_capacity(2);
        let mut emit = |id: Id, f: &dyn Fn() -> Result<Var<'t>>| -> Result<()> {
            if needs[id] {
                res.push((id, f()?));
            }
            Ok(())
        };
        match op {
            Leaf => {}
            Add(a, b) => {
                emit(a, &|| Ok(g))?;
                emit(b, &|| Ok(g))?;
            }
            Sub(a, b) => {
                emit(a, &|| Ok(g))?;
                emit(b, &|| g.neg())?;
            }
            Mul(a, b) => {
                emit(a, &|| g.mul(v(b)))?;
                emit(b, &|| g.mul(v(a)))?;
            }
            Div(a, b) => {
                emit(a, &|| g.div(v(b)))?;
                emit(b, &|| g.mul(out)?.div(v(b))?.neg())?;
            }
            DivSafe(a, b) => {
                emit(a, &|| g.div_safe(v(b)))?;
                emit(b, &|| g.mul(out)?.div_safe(v(b))?.neg())?;
            }
            Scale(a, c) => emit(a, &|| g.scale(c))?,
            AddScalar(a) => emit(a, &|| Ok(g))?,
            MatMul { a, b, ta, tb } => {
                let (va, vb) = (v(a), v(b));
                match (ta, tb) {
                    (false, false) => {
                        emit(a, &|| g.matmul_t(vb, false, true))?;
                        emit(b, &|| va.matmul_t(g, true, false))?;
                    }
                    (false, true) => {
                        emit(a, &|| g.matmul_t(vb, false, false))?;
                        emit(b, &|| g.matmul_t(va, true, false))?;
                    }
                    (true, false) => {
                        emit(a, &|| vb.matmul_t(g, false, true))?;
                        emit(b, &|| va.matmul_t(g, false, false))?;
                    }
                    (true, true) => {
                        emit(a, &|| vb.matmul_t(g, true, true))?;
                        emit(b, &|| g.matmul_t(va, true, true))?;
                    }
                }
            }
            AddRow(a, b) => {
                emit(a, &|| Ok(g))?;
                emit(b, &|| g.sum_rows())?;
            }
            MulRow(a, b) => {
                emit(a, &|| g.mul_row(v(b)))?;
                emit(b, &|| g.mul(v(a))?.sum_rows())?;
            }
            MulCol(a, c) => {
                emit(a, &|| g.mul_col(v(c)))?;
                emit(c, &|| g.mul(v(a))?.sum_cols())?;
            }
            SumAll(a) => emit(a, &|| g.expand_scalar(v(a).value().shape()))?,
            SumRows(a) => emit(a, &|| g.broadcast_rows(v(a).value().shape()[0]))?,
            SumCols(a) => emit(a, &|| g.broadcast_cols(v(a).value().shape()[1]))?,
            ExpandScalar(a) => emit(a, &|| g.sum())?,
            BroadcastRows(a) => emit(a, &|| g.sum_rows())?,
            BroadcastCols(a) => emit(a, &|| g.sum_cols())?,
            Relu(a) => emit(a, &|| {
                let mask = v(a).value().map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                g.mul(self.leaf(mask))
            })?,
            ClampMin(a, c) => emit(a, &|| {
                let mask = v(a).value().map(|x| if x > c { 1.0 } else { 0.0 });
                g.mul(self.leaf(mask))
            })?,
            Sigmoid(a) => emit(a, &|| g.mul(out)?.mul(out.neg()?.add_scalar(1.0)?))?,
            Tanh(a) => emit(a, &|| g.mul(out.square()?.neg()?.add_scalar(1.0)?))?,
            Exp(a) => emit(a, &|| g.mul(out))?,
            Log(a) => emit(a, &|| g.div(v(a)))?,
            Softplus(a) => emit(a, &|| g.mul(v(a).sigmoid()?))?,
            Square(a) => emit(a, &|| g.mul(v(a))?.scale(2.0))?,
            Sqrt(a) => emit(a, &|| g.div(out)?.scale(0.5))?,
            ConcatCols(a, b) => {
                let p = v(a).value().shape()[1];
                let q = v(b).value().shape()[1];
                emit(a, &|| g.narrow_cols(0, p))?;
                emit(b, &|| g.narrow_cols(p, q))?;
            }
            NarrowCols { a, start } => {
                emit(a, &|| g.pad_cols(start, v(a).value().shape()[1]))?
            }
            PadCols { a, start } => emit(a, &|| g.narrow_cols(start, v(a).value().shape()[1]))?,
            LogSoftmax(a) => emit(a, &|| {
                let cols = g.value().shape()[1];
                g.sub(out.exp()?.mul(g.sum_cols()?.broadcast_cols(cols)?)?)
            })?,
            RowNorm(a) => emit(a, &|| v(a).mul_col(g.div_safe(out)?))?,
        }
        Ok(res)
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Scalar value of a one-element variable.
    pub fn item(&self) -> Result<f64> {
        self.value().item()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn check_tape(&self, tape: &Tape) -> Result<()> {
        if std::ptr::eq(self.tape, tape) {
            Ok(())
        } else {
            Err(Error::ForeignVar)
        }
    }

    fn same(&self, other: Var<'_>) -> Result<()> {
        other.check_tape(self.tape)
    }

    fn unary(self, name: &'static str, op: Op, f: impl Fn(f64) -> f64) -> Result<Var<'t>> {
        let out = self.value().map(f);
        self.tape.push(name, op, out)
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        self.same(other)?;
        let out = self.value().zip_map(&other.value(), name, f)?;
        self.tape.push(name, op, out)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "div", Op::Div(self.id, other.id), |a, b| a / b)
    }

    /// Elementwise `a / b`, defined as 0 wherever `b == 0`.
    pub fn div_safe(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "div_safe", Op::DivSafe(self.id, other.id), |a, b| {
            if b == 0.0 {
                0.0
            } else {
                a / b
            }
        })
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        self.unary("scale", Op::Scale(self.id, c), |x| x * c)
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'t>> {
        self.unary("add_scalar", Op::AddScalar(self.id), |x| x + c)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.matmul_t(other, false, false)
    }

    /// `op(self) · op(other)` with optional transposition of either side.
    pub fn matmul_t(self, other: Var<'t>, ta: bool, tb: bool) -> Result<Var<'t>> {
        self.same(other)?;
        let out = Tensor::matmul_t(&self.value(), &other.value(), ta, tb)?;
        self.tape.push(
            "matmul",
            Op::MatMul {
                a: self.id,
                b: other.id,
                ta,
                tb,
            },
            out,
        )
    }

    fn row_op(
        self,
        row: Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        self.same(row)?;
        let (a, b) = (self.value(), row.value());
        let (r, c) = a.dims2(name)?;
        if b.shape() != [c] {
            return Err(mismatch(name, &a, &b));
        }
        let mut out = a.as_ref().clone();
        for i in 0..r {
            for (o, &y) in out.data_mut()[i * c..(i + 1) * c].iter_mut().zip(b.data()) {
                *o = f(*o, y);
            }
        }
        self.tape.push(name, op, out)
    }

    /// Adds a `[cols]` vector to every row of a `[rows, cols]` matrix.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        self.row_op(row, "add_row", Op::AddRow(self.id, row.id), |a, b| a + b)
    }

    /// Multiplies every row of a `[rows, cols]` matrix by a `[cols]` vector.
    pub fn mul_row(self, row: Var<'t>) -> Result<Var<'t>> {
        self.row_op(row, "mul_row", Op::MulRow(self.id, row.id), |a, b| a * b)
    }

    /// Multiplies row `i` of a `[rows, cols]` matrix by element `i` of a `[rows]` vector.
    pub fn mul_col(self, col: Var<'t>) -> Result<Var<'t>> {
        self.same(col)?;
        let (a, b) = (self.value(), col.value());
        let (r, c) = a.dims2("mul_col")?;
        if b.shape() != [r] {
            return Err(mismatch("mul_col", &a, &b));
        }
        let mut out = a.as_ref().clone();
        for (i, &s) in b.data().iter().enumerate() {
            out.data_mut()[i * c..(i + 1) * c].iter_mut().for_each(|o| *o *= s);
        }
        self.tape.push("mul_col", Op::MulCol(self.id, col.id), out)
    }

    /// Sum of all elements, as a rank-0 scalar.
    pub fn sum(self) -> Result<Var<'t>> {
        let s = self.value().sum();
        self.tape.push("sum", Op::SumAll(self.id), Tensor::scalar(s))
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let n = self.value().len() as f64;
        self.sum()?.scale(1.0 / n)
    }

    /// `[rows, cols] -> [cols]`, summing over rows.
    pub fn sum_rows(self) -> Result<Var<'t>> {
        let a = self.value();
        let (r, c) = a.dims2("sum_rows")?;
        let mut out = vec![0.0; c];
        for i in 0..r {
            out.iter_mut().zip(a.row(i)).for_each(|(o, &x)| *o += x);
        }
        self.tape.push("sum_rows", Op::SumRows(self.id), Tensor::vector(out))
    }

    /// `[rows, cols] -> [rows]`, summing within each row.
    pub fn sum_cols(self) -> Result<Var<'t>> {
        let a = self.value();
        let (r, _) = a.dims2("sum_cols")?;
        let out = (0..r).map(|i| a.row(i).iter().sum()).collect();
        self.tape.push("sum_cols", Op::SumCols(self.id), Tensor::vector(out))
    }

    /// Per-row mean, `[rows, cols] -> [rows]`.
    pub fn mean_cols(self) -> Result<Var<'t>> {
        let c = self.value().dims2("mean_cols")?.1 as f64;
        self.sum_cols()?.scale(1.0 / c)
    }

    /// Broadcasts a rank-0 scalar to `shape`.
    pub fn expand_scalar(self, shape: &[usize]) -> Result<Var<'t>> {
        let a = self.value();
        if a.rank() != 0 {
            return Err(Error::NotScalar {
                op: "expand_scalar",
                shape: a.shape().to_vec(),
            });
        }
        let out = Tensor::full(shape, a.data()[0]);
        self.tape.push("expand_scalar", Op::ExpandScalar(self.id), out)
    }

    /// `[cols] -> [rows, cols]`.
    pub fn broadcast_rows(self, rows: usize) -> Result<Var<'t>> {
        let a = self.value();
        if a.rank() != 1 {
            return Err(mismatch("broadcast_rows", &a, &Tensor::zeros([1])));
        }
        let mut data = Vec::with_capacity(rows * a.len());
        for _ in 0..rows {
            data.extend_from_slice(a.data());
        }
        let out = Tensor::new([rows, a.len()], data)?;
        self.tape.push("broadcast_rows", Op::BroadcastRows(self.id), out)
    }

    /// `[rows] -> [rows, cols]`.
    pub fn broadcast_cols(self, cols: usize) -> Result<Var<'t>> {
        let a = self.value();
        if a.rank() != 1 {
            return Err(mismatch("broadcast_cols", &a, &Tensor::zeros([1])));
        }
        let mut data = Vec::with_capacity(cols * a.len());
        for &x in a.data() {
            data.extend(std::iter::repeat(x).take(cols));
        }
        let out = Tensor::new([a.len(), cols], data)?;
        self.tape.push("broadcast_cols", Op::BroadcastCols(self.id), out)
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.unary("relu", Op::Relu(self.id), |x| x.max(0.0))
    }

    /// `max(x, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(self, floor: f64) -> Result<Var<'t>> {
        self.unary("clamp_min", Op::ClampMin(self.id, floor), |x| x.max(floor))
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.unary("sigmoid", Op::Sigmoid(self.id), stable_sigmoid)
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        self.unary("tanh", Op::Tanh(self.id), f64::tanh)
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary("exp", Op::Exp(self.id), f64::exp)
    }

    pub fn log(self) -> Result<Var<'t>> {
        self.unary("log", Op::Log(self.id), f64::ln)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(self) -> Result<Var<'t>> {
        self.unary("softplus", Op::Softplus(self.id), stable_softplus)
    }

    pub fn square(self) -> Result<Var<'t>> {
        self.unary("square", Op::Square(self.id), |x| x * x)
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        self.unary("sqrt", Op::Sqrt(self.id), f64::sqrt)
    }

    /// `[n, p] ++ [n, q] -> [n, p + q]`.
    pub fn concat_cols(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same(other)?;
        let (a, b) = (self.value(), other.value());
        let (r, p) = a.dims2("concat_cols")?;
        let (r2, q) = b.dims2("concat_cols")?;
        if r != r2 {
            return Err(mismatch("concat_cols", &a, &b));
        }
        let mut data = Vec::with_capacity(r * (p + q));
        for i in 0..r {
            data.extend_from_slice(a.row(i));
            data.extend_from_slice(b.row(i));
        }
        let out = Tensor::new([r, p + q], data)?;
        self.tape.push("concat_cols", Op::ConcatCols(self.id, other.id), out)
    }

    /// Columns `start..start + len`.
    pub fn narrow_cols(self, start: usize, len: usize) -> Result<Var<'t>> {
        let a = self.value();
        let (r, c) = a.dims2("narrow_cols")?;
        if start + len > c {
            return Err(Error::Invalid(format!(
                "narrow_cols: {start}+{len} exceeds {c} columns"
            )));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&a.row(i)[start..start + len]);
        }
        let out = Tensor::new([r, len], data)?;
        self.tape.push(
            "narrow_cols",
            Op::NarrowCols {
                a: self.id,
                start,
            },
            out,
        )
    }

    /// Places the columns at `start..` of a zero matrix with `total` columns.
    pub fn pad_cols(self, start: usize, total: usize) -> Result<Var<'t>> {
        let a = self.value();
        let (r, c) = a.dims2("pad_cols")?;
        if start + c > total {
            return Err(Error::Invalid(format!(
                "pad_cols: {start}+{c} exceeds {total} columns"
            )));
        }
        let mut out = Tensor::zeros([r, total]);
        for i in 0..r {
            out.data_mut()[i * total + start..i * total + start + c].copy_from_slice(a.row(i));
        }
        self.tape.push(
            "pad_cols",
            Op::PadCols {
                a: self.id,
                start,
            },
            out,
        )
    }

    /// Row-wise `x - logsumexp(x)`.
    pub fn log_softmax(self) -> Result<Var<'t>> {
        let a = self.value();
        let (r, c) = a.dims2("log_softmax")?;
        let mut out = a.as_ref().clone();
        for i in 0..r {
            let row = &mut out.data_mut()[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        self.tape.push("log_softmax", Op::LogSoftmax(self.id), out)
    }

    /// Euclidean norm of each row, `[rows, cols] -> [rows]`.
    ///
    /// The gradient at a zero row is taken to be zero.
    pub fn row_norm(self) -> Result<Var<'t>> {
        let a = self.value();
        let (r, _) = a.dims2("row_norm")?;
        let out = (0..r)
            .map(|i| a.row(i).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        self.tape.push("row_norm", Op::RowNorm(self.id), Tensor::vector(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_sigmoid_softplus_values() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        assert_eq!(x.relu().unwrap().value().data(), &[0.0, 0.0, 2.0]);
        let z = tape.scalar(0.0);
        assert_eq!(z.sigmoid().unwrap().item().unwrap(), 0.5);
        assert!((z.softplus().unwrap().item().unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn square_and_sigmoid_derivatives() {
        let tape = Tape::new();
        let x = tape.scalar(3.0);
        let g = tape.gradients(x.square().unwrap(), &[x]).unwrap();
        assert_eq!(g[0].item().unwrap(), 6.0);
        let y = tape.scalar(0.0);
        let g = tape.gradients(y.sigmoid().unwrap(), &[y]).unwrap();
        assert_eq!(g[0].item().unwrap(), 0.25);
    }

    #[test]
    fn detached_variable_gets_zero_gradient() {
        let tape = Tape::new();
        let x = tape.scalar(2.0);
        let unused = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let g = tape.gradients(x.exp().unwrap(), &[unused]).unwrap();
        assert_eq!(g[0], Tensor::zeros([2]));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.grad(x, &[x]), Err(Error::NotScalar { .. })));
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let tape = Tape::new();
        let x = tape.scalar(0.0);
        assert!(matches!(x.log(), Err(Error::NonFinite { op: "log" })));
        let big = tape.scalar(1000.0);
        assert!(big.exp().is_err());
        // softplus stays finite where a naive ln(1 + e^x) would overflow
        assert_eq!(big.softplus().unwrap().item().unwrap(), 1000.0);
    }

    #[test]
    fn tapes_are_isolated() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let a = t1.scalar(1.0);
        let b = t2.scalar(2.0);
        assert!(matches!(a.add(b), Err(Error::ForeignVar)));
        assert!(matches!(t2.grad(a, &[a]), Err(Error::ForeignVar)));
    }

    #[test]
    fn second_derivative_of_cube() {
        // d²/dx² x³ = 6x
        let tape = Tape::new();
        let x = tape.scalar(1.5);
        let y = x.square().unwrap().mul(x).unwrap();
        let dy = tape.grad(y, &[x]).unwrap()[0];
        assert!((dy.item().unwrap() - 3.0 * 1.5 * 1.5).abs() < 1e-12);
        let d2y = tape.gradients(dy, &[x]).unwrap();
        assert!((d2y[0].item().unwrap() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn input_gradient_norm_of_linear_map() {
        // D(z) = w·z with w = [3, 4] has |dD/dz| = 5 everywhere.
        let tape = Tape::new();
        let w = tape.leaf(Tensor::new([2, 1], vec![3.0, 4.0]).unwrap());
        let z = tape.leaf(Tensor::new([3, 2], vec![0.1, -2.0, 5.0, 1.0, 0.0, 0.0]).unwrap());
        let out = z.matmul(w).unwrap().sum().unwrap();
        let dz = tape.grad(out, &[z]).unwrap()[0];
        assert_eq!(dz.row_norm().unwrap().value().data(), &[5.0, 5.0, 5.0]);
    }

    #[test]
    fn zero_row_norm_has_zero_gradient() {
        let tape = Tape::new();
        let z = tape.leaf(Tensor::zeros([2, 3]));
        let n = z.row_norm().unwrap().sum().unwrap();
        assert_eq!(n.item().unwrap(), 0.0);
        assert_eq!(tape.gradients(n, &[z]).unwrap()[0], Tensor::zeros([2, 3]));
    }
}
