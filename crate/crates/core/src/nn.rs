//! Dense layers and the parameter plumbing shared by every model.

use autodiff::{AdamConfig, AdamState, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Anything with named, trainable tensors.
///
/// `params_mut` must yield tensors in the same order as `named_params`, and
/// the model's bound variables must follow that order too.
pub trait Module {
    fn named_params(&self) -> Vec<(String, &Tensor)>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }
}

/// `y = x W + b` with `W: [in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Uniform fan-in initialisation, `U(-1/√in, 1/√in)`, zero bias.
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Self {
            weight: rng.uniform_tensor(&[inputs, outputs], -bound, bound),
            bias: Tensor::zeros([outputs]),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Tensor::zeros([inputs, outputs]),
            bias: Tensor::zeros([outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundLinear<'t> {
        BoundLinear {
            weight: tape.leaf(self.weight.clone()),
            bias: tape.leaf(self.bias.clone()),
        }
    }

    fn push_named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    fn push_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

#[derive(Clone, Copy)]
pub struct BoundLinear<'t> {
    pub weight: Var<'t>,
    pub bias: Var<'t>,
}

impl<'t> BoundLinear<'t> {
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        Ok(x.matmul(self.weight)?.add_row(self.bias)?)
    }

    fn push_vars(&self, out: &mut Vec<Var<'t>>) {
        out.push(self.weight);
        out.push(self.bias);
    }
}

/// Linear layers with ReLU between them and no activation after the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [in, hidden..., out]`.
    pub fn new(dims: &[usize], rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!("invalid layer widths {dims:?}")));
        }
        Ok(Self {
            layers: dims.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect(),
        })
    }

    pub fn from_layers(layers: Vec<Linear>) -> Self {
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    /// Layer widths `[in, hidden..., out]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(Linear::outputs));
        d
    }

    pub fn last_mut(&mut self) -> &mut Linear {
        self.layers.last_mut().expect("mlp has layers")
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundMlp<'t> {
        BoundMlp {
            layers: self.layers.iter().map(|l| l.bind(tape)).collect(),
        }
    }

    pub(crate) fn push_named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.push_named(&format!("{prefix}.{i}"), out);
        }
    }

    pub(crate) fn push_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        for l in &mut self.layers {
            l.push_mut(out);
        }
    }

    /// Forward pass without gradient bookkeeping beyond a scratch tape.
    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let out = self.bind(&tape).forward(tape.leaf(x.clone()))?;
        Ok(out.value().as_ref().clone())
    }
}

impl Module for Mlp {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.push_named("mlp", &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        self.push_mut(&mut out);
        out
    }
}

pub struct BoundMlp<'t> {
    pub layers: Vec<BoundLinear<'t>>,
}

impl<'t> BoundMlp<'t> {
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(h)?;
            if i < last {
                h = h.relu()?;
            }
        }
        Ok(h)
    }

    pub(crate) fn push_vars(&self, out: &mut Vec<Var<'t>>) {
        for l in &self.layers {
            l.push_vars(out);
        }
    }

    pub fn vars(&self) -> Vec<Var<'t>> {
        let mut out = Vec::new();
        self.push_vars(&mut out);
        out
    }
}

/// Adam bound to one module's parameter list.
#[derive(Debug, Clone)]
pub struct Optimizer {
    state: AdamState,
}

impl Optimizer {
    pub fn new(config: AdamConfig, module: &impl Module) -> Self {
        let params = module.named_params();
        Self {
            state: AdamState::new(config, params.iter().map(|(_, t)| *t)),
        }
    }

    pub fn step(&mut self, module: &mut impl Module, grads: &[Tensor]) -> Result<()> {
        let mut params = module.params_mut();
        self.state.step(&mut params, grads)?;
        Ok(())
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.state.config.lr = lr;
    }

    pub fn steps_taken(&self) -> u64 {
        self.state.step
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before clipping. `max_norm <= 0` leaves them unchanged.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let c = max_norm / norm;
        for g in grads {
            g.data_mut().iter_mut().for_each(|v| *v *= c);
        }
    }
    norm
}

/// Bernoulli cross-entropy from logits: `softplus(l) - t·l`, elementwise.
pub fn bce_with_logits<'t>(logits: Var<'t>, targets: Var<'t>) -> Result<Var<'t>> {
    Ok(logits.softplus()?.sub(logits.mul(targets)?)?)
}

/// Plain-value logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One-hot rows for class indices.
pub fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut t = Tensor::zeros([labels.len(), classes]);
    for (i, &l) in labels.iter().enumerate() {
        t.data_mut()[i * classes + l] = 1.0;
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_vars_follow_param_order() {
        let mut rng = Rng::seeded(0);
        let mlp = Mlp::new(&[3, 4, 2], &mut rng).unwrap();
        let tape = Tape::new();
        let vars = mlp.bind(&tape).vars();
        let named = mlp.named_params();
        assert_eq!(vars.len(), named.len());
        for (v, (_, t)) in vars.iter().zip(&named) {
            assert_eq!(v.value().as_ref(), *t);
        }
        assert_eq!(named[2].0, "mlp.1.weight");
    }

    #[test]
    fn mlp_fits_xor() {
        let mut rng = Rng::seeded(4);
        let mut mlp = Mlp::new(&[2, 16, 1], &mut rng).unwrap();
        let x = Tensor::from_rows(&[[0., 0.], [0., 1.], [1., 0.], [1., 1.]]).unwrap();
        let y = Tensor::new([4, 1], vec![0., 1., 1., 0.]).unwrap();
        let mut opt = Optimizer::new(AdamConfig::new(0.05, 0.9, 0.999), &mlp);
        for _ in 0..500 {
            let tape = Tape::new();
            let b = mlp.bind(&tape);
            let logits = b.forward(tape.leaf(x.clone())).unwrap();
            let loss = bce_with_logits(logits, tape.leaf(y.clone())).unwrap().mean().unwrap();
            let g = tape.gradients(loss, &b.vars()).unwrap();
            opt.step(&mut mlp, &g).unwrap();
        }
        let out = mlp.eval(&x).unwrap();
        let preds: Vec<bool> = out.data().iter().map(|&l| l > 0.0).collect();
        assert_eq!(preds, vec![false, true, true, false]);
    }

    #[test]
    fn invalid_widths_are_config_errors() {
        let mut rng = Rng::seeded(0);
        assert!(matches!(Mlp::new(&[3], &mut rng), Err(Error::Config(_))));
        assert!(matches!(Mlp::new(&[3, 0, 1], &mut rng), Err(Error::Config(_))));
    }
}
