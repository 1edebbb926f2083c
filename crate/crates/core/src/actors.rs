//! Critics `D(z[, y])` and gated actors `G(z[, y])` in latent space.
//!
//! Critic losses are computed from logits: `ℒ_{c=1} = −ln D = softplus(−l)`
//! and `ℒ_{c=0} = −ln(1 − D) = softplus(l)`.

use autodiff::{AdamConfig, AdamState, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::io::checkpoint::{config_from, take_shaped, Checkpoint};
use crate::nn::{BoundLinear, BoundMlp, Linear, Mlp, Module, Optimizer};
use crate::rng::Rng;
use crate::vae::EncoderOutput;

/// Shape of a latent-space network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    /// Width of the attribute vector `y`; `None` for unconditional nets.
    pub label_dim: Option<usize>,
    /// Output width of the label projection concatenated with `z`.
    pub label_proj: usize,
    pub outputs: usize,
}

impl NetSpec {
    fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.outputs == 0 || self.hidden.contains(&0) {
            return Err(Error::Config(format!("invalid network spec {self:?}")));
        }
        if self.label_dim == Some(0) || (self.label_dim.is_some() && self.label_proj == 0) {
            return Err(Error::Config("conditional nets need positive label widths".into()));
        }
        Ok(())
    }

    fn build(&self, rng: &mut Rng) -> Result<(Option<Linear>, Mlp)> {
        self.validate()?;
        let proj = self.label_dim.map(|a| Linear::new(a, self.label_proj, rng));
        let input = self.latent_dim + proj.as_ref().map_or(0, Linear::outputs);
        let mut dims = vec![input];
        dims.extend(&self.hidden);
        dims.push(self.outputs);
        Ok((proj, Mlp::new(&dims, rng)?))
    }
}

/// `Σ_i log(1 + (z′_i − z_i)²) / σ̄_i²`, averaged over dimensions, then batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceScale {
    pub sigma_bar: Vec<f64>,
}

impl DistanceScale {
    pub fn new(sigma_bar: Vec<f64>) -> Result<Self> {
        if sigma_bar.is_empty() || sigma_bar.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Config("sigma_bar must be nonempty and strictly positive".into()));
        }
        Ok(Self { sigma_bar })
    }

    pub fn unit(dim: usize) -> Self {
        Self {
            sigma_bar: vec![1.0; dim],
        }
    }

    fn inv_var(&self) -> Tensor {
        Tensor::vector(self.sigma_bar.iter().map(|s| 1.0 / (s * s)).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCritic {
    pub spec: NetSpec,
    pub label_proj: Option<Linear>,
    pub mlp: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentActor {
    pub spec: NetSpec,
    pub label_proj: Option<Linear>,
    pub mlp: Mlp,
}

fn push_all<'a>(proj: &'a Option<Linear>, mlp: &'a Mlp) -> Vec<(String, &'a Tensor)> {
    let mut out = Vec::new();
    if let Some(p) = proj {
        out.push(("label_proj.weight".to_string(), &p.weight));
        out.push(("label_proj.bias".to_string(), &p.bias));
    }
    mlp.push_named("mlp", &mut out);
    out
}

fn push_all_mut<'a>(proj: &'a mut Option<Linear>, mlp: &'a mut Mlp) -> Vec<&'a mut Tensor> {
    let mut out = Vec::new();
    if let Some(p) = proj {
        out.push(&mut p.weight);
        out.push(&mut p.bias);
    }
    mlp.push_mut(&mut out);
    out
}

fn check_labels(spec: &NetSpec, z: &[usize], y: Option<&[usize]>) -> Result<()> {
    match (spec.label_dim, y) {
        (Some(a), Some(ys)) if ys[1] == a && ys[0] == z[0] => Ok(()),
        (Some(a), Some(ys)) => Err(Error::Invalid(format!(
            "labels have shape {ys:?}, expected [{}, {a}]",
            z[0]
        ))),
        (Some(_), None) => Err(Error::Invalid("conditional network needs labels".into())),
        (None, _) => Ok(()),
    }
}

impl LatentCritic {
    pub fn new(spec: NetSpec, rng: &mut Rng) -> Result<Self> {
        let (label_proj, mlp) = spec.build(rng)?;
        Ok(Self {
            spec,
            label_proj,
            mlp,
        })
    }

    pub fn is_conditional(&self) -> bool {
        self.label_proj.is_some()
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundCritic<'t> {
        BoundCritic {
            label_proj: self.label_proj.as_ref().map(|p| p.bind(tape)),
            mlp: self.mlp.bind(tape),
        }
    }

    /// Logits `[n, outputs]`.
    pub fn logits(&self, z: &Tensor, y: Option<&Tensor>) -> Result<Tensor> {
        check_labels(&self.spec, z.shape(), y.map(Tensor::shape))?;
        let tape = Tape::new();
        let out = self
            .bind(&tape)
            .logits(tape.leaf(z.clone()), y.map(|y| tape.leaf(y.clone())))?;
        Ok(out.value().as_ref().clone())
    }

    /// `D(z[, y]) = sigmoid(logit)`, elementwise over outputs.
    pub fn prob(&self, z: &Tensor, y: Option<&Tensor>) -> Result<Tensor> {
        Ok(self.logits(z, y)?.map(crate::nn::sigmoid))
    }
}

impl LatentActor {
    /// Random hidden layers; the last layer starts at zero weights with gate
    /// bias `-2`, so an untrained actor moves points only slightly toward 0.
    pub fn new(spec: NetSpec, rng: &mut Rng) -> Result<Self> {
        if spec.outputs != 2 * spec.latent_dim {
            return Err(Error::Config(format!(
                "actor outputs must be 2 x latent_dim, got {}",
                spec.outputs
            )));
        }
        let (label_proj, mut mlp) = spec.build(rng)?;
        let k = spec.latent_dim;
        let last = mlp.last_mut();
        *last = Linear::zeros(last.inputs(), 2 * k);
        last.bias.data_mut()[k..].fill(-2.0);
        Ok(Self {
            spec,
            label_proj,
            mlp,
        })
    }

    pub fn is_conditional(&self) -> bool {
        self.label_proj.is_some()
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundActor<'t> {
        BoundActor {
            latent_dim: self.spec.latent_dim,
            label_proj: self.label_proj.as_ref().map(|p| p.bind(tape)),
            mlp: self.mlp.bind(tape),
        }
    }
}

/// `z′ = G(z[, y])` for a batch of latent vectors.
pub fn apply_actor(actor: &LatentActor, z: &Tensor, y: Option<&Tensor>) -> Result<Tensor> {
    let (_, k) = z.dims2("apply_actor")?;
    if k != actor.spec.latent_dim {
        return Err(Error::Invalid(format!(
            "z has {k} dims, actor expects {}",
            actor.spec.latent_dim
        )));
    }
    check_labels(&actor.spec, z.shape(), y.map(Tensor::shape))?;
    let tape = Tape::new();
    let out = actor
        .bind(&tape)
        .forward(tape.leaf(z.clone()), y.map(|y| tape.leaf(y.clone())))?;
    Ok(out.value().as_ref().clone())
}

impl Module for LatentCritic {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        push_all(&self.label_proj, &self.mlp)
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        push_all_mut(&mut self.label_proj, &mut self.mlp)
    }
}

impl Module for LatentActor {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        push_all(&self.label_proj, &self.mlp)
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        push_all_mut(&mut self.label_proj, &mut self.mlp)
    }
}

macro_rules! latent_checkpoint {
    ($ty:ty, $kind:expr) => {
        impl Checkpoint for $ty {
            const KIND: &'static str = $kind;

            fn config_json(&self) -> Result<Value> {
                Ok(serde_json::to_value(&self.spec)?)
            }

            fn tensors(&self) -> Vec<(String, Tensor)> {
                self.named_params()
                    .into_iter()
                    .map(|(n, t)| (n, t.clone()))
                    .collect()
            }

            fn from_parts(
                config: &Value,
                take: &mut dyn FnMut(&str) -> Result<Tensor>,
            ) -> Result<Self> {
                let spec: NetSpec = config_from(config)?;
                let mut net = <$ty>::new(spec, &mut Rng::seeded(0))?;
                let names: Vec<String> = net.named_params().into_iter().map(|(n, _)| n).collect();
                for (name, slot) in names.iter().zip(net.params_mut()) {
                    *slot = take_shaped(take, name, slot.shape())?;
                }
                Ok(net)
            }
        }
    };
}

latent_checkpoint!(LatentCritic, "latent-critic");
latent_checkpoint!(LatentActor, "latent-actor");

fn with_labels<'t>(
    z: Var<'t>,
    proj: &Option<BoundLinear<'t>>,
    y: Option<Var<'t>>,
) -> Result<Var<'t>> {
    match (proj, y) {
        (Some(p), Some(y)) => Ok(z.concat_cols(p.forward(y)?)?),
        (Some(_), None) => Err(Error::Invalid("conditional network needs labels".into())),
        (None, _) => Ok(z),
    }
}

pub struct BoundCritic<'t> {
    pub label_proj: Option<BoundLinear<'t>>,
    pub mlp: BoundMlp<'t>,
}

impl<'t> BoundCritic<'t> {
    pub fn logits(&self, z: Var<'t>, y: Option<Var<'t>>) -> Result<Var<'t>> {
        self.mlp.forward(with_labels(z, &self.label_proj, y)?)
    }

    pub fn vars(&self) -> Vec<Var<'t>> {
        let mut out = Vec::new();
        if let Some(p) = &self.label_proj {
            out.extend([p.weight, p.bias]);
        }
        self.mlp.push_vars(&mut out);
        out
    }
}

pub struct BoundActor<'t> {
    pub latent_dim: usize,
    pub label_proj: Option<BoundLinear<'t>>,
    pub mlp: BoundMlp<'t>,
}

impl<'t> BoundActor<'t> {
    /// `(δz, gates)`, each `[n, latent_dim]`.
    pub fn shift_and_gates(&self, z: Var<'t>, y: Option<Var<'t>>) -> Result<(Var<'t>, Var<'t>)> {
        let out = self.mlp.forward(with_labels(z, &self.label_proj, y)?)?;
        let k = self.latent_dim;
        Ok((out.narrow_cols(0, k)?, out.narrow_cols(k, k)?.sigmoid()?))
    }

    pub fn forward(&self, z: Var<'t>, y: Option<Var<'t>>) -> Result<Var<'t>> {
        let (dz, gates) = self.shift_and_gates(z, y)?;
        gate(z, dz, gates)
    }

    pub fn vars(&self) -> Vec<Var<'t>> {
        let mut out = Vec::new();
        if let Some(p) = &self.label_proj {
            out.extend([p.weight, p.bias]);
        }
        self.mlp.push_vars(&mut out);
        out
    }
}

/// `(1 − gates) ⊙ z + gates ⊙ δz`.
pub fn gate<'t>(z: Var<'t>, dz: Var<'t>, gates: Var<'t>) -> Result<Var<'t>> {
    Ok(z.add(gates.mul(dz.sub(z)?)?)?)
}

/// `ℒ_{c=1}` per element: `−ln sigmoid(l)`.
pub fn loss_c1<'t>(logits: Var<'t>) -> Result<Var<'t>> {
    Ok(logits.neg()?.softplus()?)
}

/// `ℒ_{c=0}` per element: `−ln(1 − sigmoid(l))`.
pub fn loss_c0<'t>(logits: Var<'t>) -> Result<Var<'t>> {
    Ok(logits.softplus()?)
}

/// Soft-label cross-entropy `−[r ln D + (1 − r) ln(1 − D)]` per element.
pub fn soft_cross_entropy<'t>(logits: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
    crate::nn::bce_with_logits(logits, target)
}

/// A latent batch with its optional labels.
pub type Labeled<'t> = (Var<'t>, Option<Var<'t>>);

/// `mean ℒ_{c=1}(D(pos)) + prior_weight · mean ℒ_{c=0}(D(prior))
/// + mean ℒ_{c=0}(D(actor))`; the actor term is skipped when absent.
pub fn critic_loss_realism<'t>(
    d: &BoundCritic<'t>,
    pos: Labeled<'t>,
    prior: Labeled<'t>,
    actor: Option<Labeled<'t>>,
    prior_weight: f64,
) -> Result<Var<'t>> {
    let mut loss = loss_c1(d.logits(pos.0, pos.1)?)?.mean()?;
    loss = loss.add(loss_c0(d.logits(prior.0, prior.1)?)?.mean()?.scale(prior_weight)?)?;
    if let Some((z, y)) = actor {
        loss = loss.add(loss_c0(d.logits(z, y)?)?.mean()?)?;
    }
    Ok(loss)
}

/// Per-example `L_dist(z′, z)`, shape `[n]`.
pub fn distance_rows<'t>(z_prime: Var<'t>, z: Var<'t>, scale: &DistanceScale) -> Result<Var<'t>> {
    let tape = z.tape();
    let inv = tape.leaf(scale.inv_var());
    Ok(z_prime
        .sub(z)?
        .square()?
        .add_scalar(1.0)?
        .log()?
        .mul_row(inv)?
        .mean_cols()?)
}

/// `L_dist` averaged over the batch.
pub fn distance_penalty<'t>(z_prime: Var<'t>, z: Var<'t>, scale: &DistanceScale) -> Result<Var<'t>> {
    Ok(distance_rows(z_prime, z, scale)?.mean()?)
}

/// `mean[ℒ_{c=1}(D(G(z))) + λ_dist · L_dist(G(z), z)]`.
pub fn actor_loss<'t>(
    g: &BoundActor<'t>,
    d: &BoundCritic<'t>,
    z: Var<'t>,
    y: Option<Var<'t>>,
    lambda_dist: f64,
    scale: &DistanceScale,
) -> Result<Var<'t>> {
    let zp = g.forward(z, y)?;
    let adv = loss_c1(d.logits(zp, y)?)?.mean()?;
    if lambda_dist == 0.0 {
        return Ok(adv);
    }
    Ok(adv.add(distance_penalty(zp, z, scale)?.scale(lambda_dist)?)?)
}

/// `mean (‖∂l/∂ẑ‖ − 1)²` at `ẑ = ε z_pos + (1 − ε) z_neg`, one `ε ~ U(0,1)` per
/// row; differentiable in the critic's parameters.
pub fn gradient_penalty_bound<'t>(
    d: &BoundCritic<'t>,
    z_pos: &Tensor,
    z_neg: &Tensor,
    y: Option<Var<'t>>,
    eps: &[f64],
) -> Result<Var<'t>> {
    let (n, k) = z_pos.dims2("gradient_penalty")?;
    if z_neg.shape() != z_pos.shape() || eps.len() != n {
        return Err(autodiff::Error::ShapeMismatch {
            op: "gradient_penalty",
            lhs: z_pos.shape().to_vec(),
            rhs: z_neg.shape().to_vec(),
        }
        .into());
    }
    let mut mix = Vec::with_capacity(n * k);
    for (r, &e) in eps.iter().enumerate() {
        mix.extend(z_pos.row(r).iter().zip(z_neg.row(r)).map(|(p, q)| e * p + (1.0 - e) * q));
    }
    let tape = d.mlp.layers[0].weight.tape();
    let zhat = tape.leaf(Tensor::new([n, k], mix)?);
    let total = d.logits(zhat, y)?.sum()?;
    let grad = tape.grad(total, &[zhat])?[0];
    Ok(grad.row_norm()?.add_scalar(-1.0)?.square()?.mean()?)
}

/// Value of the gradient penalty with interpolation weights drawn from `seed`.
pub fn gradient_penalty(
    critic: &LatentCritic,
    z_pos: &Tensor,
    z_neg: &Tensor,
    y: Option<&Tensor>,
    seed: u64,
) -> Result<f64> {
    let (n, _) = z_pos.dims2("gradient_penalty")?;
    check_labels(&critic.spec, z_pos.shape(), y.map(Tensor::shape))?;
    let mut rng = Rng::seeded(seed);
    let eps: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
    let tape = Tape::new();
    let d = critic.bind(&tape);
    let gp = gradient_penalty_bound(&d, z_pos, z_neg, y.map(|y| tape.leaf(y.clone())), &eps)?;
    Ok(gp.item()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GOptConfig {
    pub steps: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub keep_trajectory: bool,
}

impl Default for GOptConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            keep_trajectory: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GOptResult {
    pub z: Tensor,
    /// Iterates including the start, when requested.
    pub trajectory: Vec<Tensor>,
    /// Per-row objective at the final point.
    pub final_loss: Vec<f64>,
}

/// Pins a closure to the higher-ranked objective signature.
pub fn objective<F>(f: F) -> F
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    f
}

/// Adam descent on each row of `z` against a per-row objective `[n]`.
/// `stop` may end the loop early given the current per-row losses.
pub fn g_opt_with(
    objective: &dyn for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
    z_init: &Tensor,
    cfg: &GOptConfig,
    stop: &mut dyn FnMut(usize, &Tensor, &[f64]) -> bool,
) -> Result<(GOptResult, usize)> {
    let mut z = z_init.clone();
    let mut adam = AdamState::new(AdamConfig::new(cfg.lr, cfg.beta1, cfg.beta2), [&z]);
    let mut trajectory = Vec::new();
    if cfg.keep_trajectory {
        trajectory.push(z.clone());
    }
    let mut step = 0;
    loop {
        let tape = Tape::new();
        let zv = tape.leaf(z.clone());
        let rows = objective(zv).map_err(|e| match e {
            Error::Tensor(e @ autodiff::Error::NonFinite { .. }) => {
                Error::Divergence(format!("g_opt step {step}: {e}"))
            }
            e => e,
        })?;
        let losses = rows.value().data().to_vec();
        if step == cfg.steps || stop(step, &z, &losses) {
            return Ok((
                GOptResult {
                    z,
                    trajectory,
                    final_loss: losses,
                },
                step,
            ));
        }
        let g = tape.gradients(rows.sum()?, &[zv])?;
        adam.step(&mut [&mut z], &g)?;
        if !z.is_finite() {
            return Err(Error::Divergence(format!("g_opt step {step}: non-finite z")));
        }
        if cfg.keep_trajectory {
            trajectory.push(z.clone());
        }
        step += 1;
    }
}

/// `cfg.steps` Adam iterations on a per-row objective.
pub fn g_opt(
    objective: &dyn for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
    z_init: &Tensor,
    cfg: &GOptConfig,
) -> Result<GOptResult> {
    Ok(g_opt_with(objective, z_init, cfg, &mut |_, _, _| false)?.0)
}

/// `g_opt` on `ℒ_{c=1}(D(z[, y]))`.
pub fn g_opt_critic(critic: &LatentCritic, z_init: &Tensor, y: Option<&Tensor>, cfg: &GOptConfig) -> Result<GOptResult> {
    check_labels(&critic.spec, z_init.shape(), y.map(Tensor::shape))?;
    let objective = objective(|z| {
        let tape = z.tape();
        let d = critic.bind(tape);
        let y = y.map(|y| tape.leaf(y.clone()));
        Ok(loss_c1(d.logits(z, y)?)?.sum_cols()?)
    });
    g_opt(&objective, z_init, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanTrainConfig {
    pub gp_weight: f64,
    pub d_steps_per_g_step: usize,
    /// Weight on the raw-prior negative term of the critic loss.
    pub prior_fraction_for_d: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda_dist: f64,
    pub batch: usize,
    /// Number of actor updates.
    pub iterations: usize,
    pub hidden: Vec<usize>,
    /// Actor widths when they differ from the critic's.
    pub actor_hidden: Option<Vec<usize>>,
    /// Weight of conditional negatives pairing real encodings with labels
    /// drawn from other rows; ignored without labels.
    pub mismatch_weight: f64,
    pub seed: u64,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            gp_weight: 10.0,
            d_steps_per_g_step: 10,
            prior_fraction_for_d: 0.1,
            lr: 3e-4,
            beta1: 0.0,
            beta2: 0.9,
            lambda_dist: 0.1,
            batch: 128,
            iterations: 500,
            hidden: vec![256, 256, 256],
            actor_hidden: None,
            mismatch_weight: 0.0,
            seed: 0,
        }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gp_weight >= 0.0
            && self.d_steps_per_g_step > 0
            && self.prior_fraction_for_d > 0.0
            && self.prior_fraction_for_d <= 1.0
            && self.lr > 0.0
            && self.lambda_dist >= 0.0
            && self.mismatch_weight >= 0.0
            && self.batch > 0
            && !self.hidden.is_empty()
            && self.actor_hidden.as_ref().is_none_or(|h| !h.is_empty());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid GAN training config {self:?}")))
        }
    }

    pub fn actor_widths(&self) -> &[usize] {
        self.actor_hidden.as_deref().unwrap_or(&self.hidden)
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig::new(self.lr, self.beta1, self.beta2)
    }
}

/// Encodings of a dataset, the source of positive latent samples.
#[derive(Debug, Clone)]
pub struct LatentData<'a> {
    pub posterior: &'a EncoderOutput,
    /// One row of attribute bits per example.
    pub labels: Option<&'a Tensor>,
    pub sigma_bar: &'a [f64],
}

impl LatentData<'_> {
    fn len(&self) -> usize {
        self.posterior.mu.shape()[0]
    }

    fn latent_dim(&self) -> usize {
        self.posterior.mu.shape()[1]
    }

    /// Fresh `z ~ q(z|x)` for the given rows.
    fn sample(&self, idx: &[usize], rng: &mut Rng) -> Result<Tensor> {
        let mu = self.posterior.mu.select_rows(idx)?;
        let sigma = self.posterior.sigma.select_rows(idx)?;
        let eps = rng.normal_tensor(mu.shape());
        let noise = sigma.zip_map(&eps, "sample", |s, e| s * e)?;
        Ok(mu.zip_map(&noise, "sample", |m, n| m + n)?)
    }
}

/// One record per actor update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanLog {
    pub iteration: usize,
    pub d_loss: f64,
    pub gp: f64,
    pub g_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseCheck {
    /// Dimensions checked (lowest `σ̄_z` first).
    pub dims: Vec<usize>,
    pub variances: Vec<f64>,
    pub threshold: f64,
    pub alarm: bool,
}

/// Variance of `G(z)` over a prior batch in the `top` most-used dimensions;
/// alarms when any falls below `fraction` of the prior variance (1).
pub fn collapse_check(
    actor: &LatentActor,
    sigma_bar: &[f64],
    labels: Option<&Tensor>,
    n: usize,
    top: usize,
    fraction: f64,
    seed: u64,
) -> Result<CollapseCheck> {
    let mut rng = Rng::seeded(seed);
    let z = rng.normal_tensor(&[n, actor.spec.latent_dim]);
    let zp = apply_actor(actor, &z, labels)?;
    let mut dims: Vec<usize> = (0..sigma_bar.len()).collect();
    dims.sort_by(|&a, &b| sigma_bar[a].total_cmp(&sigma_bar[b]));
    dims.truncate(top);
    let variances: Vec<f64> = dims
        .iter()
        .map(|&j| {
            let col: Vec<f64> = (0..n).map(|i| zp.row(i)[j]).collect();
            let m = col.iter().sum::<f64>() / n as f64;
            col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64
        })
        .collect();
    let alarm = variances.iter().any(|&v| v < fraction);
    Ok(CollapseCheck {
        dims,
        variances,
        threshold: fraction,
        alarm,
    })
}

#[derive(Debug, Clone)]
pub struct RealismPair {
    pub critic: LatentCritic,
    pub actor: LatentActor,
    pub log: Vec<GanLog>,
    pub collapse: CollapseCheck,
}

fn labels_for(labels: Option<&Tensor>, idx: &[usize]) -> Result<Option<Tensor>> {
    labels.map(|l| l.select_rows(idx)).transpose().map_err(Into::into)
}

fn diverged(what: &str, iteration: usize) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Tensor(e @ autodiff::Error::NonFinite { .. }) => {
            Error::Divergence(format!("{what} iteration {iteration}: {e}"))
        }
        e => e,
    }
}

/// Alternating critic/actor training. Positives are fresh `z ~ q(z|x)`;
/// negatives are prior draws (weighted by `prior_fraction_for_d`) and actor
/// outputs. With labels, both nets are conditional: positives carry their
/// own labels and negatives get labels resampled from the data.
pub fn train_realism_pair(data: &LatentData, cfg: &GanTrainConfig, mut on_iter: impl FnMut(&GanLog)) -> Result<RealismPair> {
    cfg.validate()?;
    let n = data.len();
    if n == 0 {
        return Err(Error::Invalid("train_realism_pair: no encodings".into()));
    }
    let k = data.latent_dim();
    let scale = DistanceScale::new(data.sigma_bar.to_vec())?;
    if scale.sigma_bar.len() != k {
        return Err(Error::Invalid("sigma_bar length differs from latent_dim".into()));
    }
    let label_dim = data.labels.map(|l| l.shape()[1]);
    if let Some(l) = data.labels {
        if l.shape()[0] != n {
            return Err(Error::Invalid(format!("{} labels for {n} encodings", l.shape()[0])));
        }
    }
    let spec = |hidden: &[usize], outputs| NetSpec {
        latent_dim: k,
        hidden: hidden.to_vec(),
        label_dim,
        label_proj: hidden[0],
        outputs,
    };
    let mut rng = Rng::seeded(cfg.seed);
    let mut critic = LatentCritic::new(spec(&cfg.hidden, 1), &mut rng)?;
    let mut actor = LatentActor::new(spec(cfg.actor_widths(), 2 * k), &mut rng)?;
    let mut d_opt = Optimizer::new(cfg.adam(), &critic);
    let mut g_opt = Optimizer::new(cfg.adam(), &actor);
    let b = cfg.batch;
    let mut log = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let (mut d_loss, mut gp_val) = (0.0, 0.0);
        for _ in 0..cfg.d_steps_per_g_step {
            let idx: Vec<usize> = (0..b).map(|_| rng.below(n)).collect();
            let neg_idx: Vec<usize> = (0..b).map(|_| rng.below(n)).collect();
            let z_pos = data.sample(&idx, &mut rng)?;
            let y_pos = labels_for(data.labels, &idx)?;
            let y_neg = labels_for(data.labels, &neg_idx)?;
            let z_prior = rng.normal_tensor(&[b, k]);
            let z_act = apply_actor(&actor, &z_prior, y_neg.as_ref())?;
            let eps: Vec<f64> = (0..b).map(|_| rng.uniform()).collect();
            let tape = Tape::new();
            let d = critic.bind(&tape);
            let leaf = |t: &Option<Tensor>| t.as_ref().map(|t| tape.leaf(t.clone()));
            let (yp, yn) = (leaf(&y_pos), leaf(&y_neg));
            let step = (|| -> Result<_> {
                let base = critic_loss_realism(
                    &d,
                    (tape.leaf(z_pos.clone()), yp),
                    (tape.leaf(z_prior), yn),
                    Some((tape.leaf(z_act.clone()), yn)),
                    cfg.prior_fraction_for_d,
                )?;
                let base = match yn {
                    Some(yn) if cfg.mismatch_weight > 0.0 => {
                        let wrong = loss_c0(d.logits(tape.leaf(z_pos.clone()), Some(yn))?)?.mean()?;
                        base.add(wrong.scale(cfg.mismatch_weight)?)?
                    }
                    _ => base,
                };
                let gp = gradient_penalty_bound(&d, &z_pos, &z_act, yp, &eps)?;
                let loss = base.add(gp.scale(cfg.gp_weight)?)?;
                Ok((tape.gradients(loss, &d.vars())?, base.item()?, gp.item()?))
            })()
            .map_err(diverged("critic", it))?;
            d_opt.step(&mut critic, &step.0)?;
            d_loss = step.1;
            gp_val = step.2;
        }
        let neg_idx: Vec<usize> = (0..b).map(|_| rng.below(n)).collect();
        let y_neg = labels_for(data.labels, &neg_idx)?;
        let z_prior = rng.normal_tensor(&[b, k]);
        let tape = Tape::new();
        let d = critic.bind(&tape);
        let g = actor.bind(&tape);
        let (grads, g_loss) = (|| -> Result<_> {
            let loss = actor_loss(
                &g,
                &d,
                tape.leaf(z_prior),
                y_neg.map(|y| tape.leaf(y)),
                cfg.lambda_dist,
                &scale,
            )?;
            Ok((tape.gradients(loss, &g.vars())?, loss.item()?))
        })()
        .map_err(diverged("actor", it))?;
        g_opt.step(&mut actor, &grads)?;
        let entry = GanLog {
            iteration: it,
            d_loss,
            gp: gp_val,
            g_loss,
        };
        on_iter(&entry);
        log.push(entry);
    }
    let check_labels = match data.labels {
        Some(l) => {
            let idx: Vec<usize> = (0..1000).map(|_| rng.below(n)).collect();
            Some(l.select_rows(&idx)?)
        }
        None => None,
    };
    let collapse = collapse_check(
        &actor,
        data.sigma_bar,
        check_labels.as_ref(),
        1000,
        8.min(k),
        0.1,
        cfg.seed ^ 0x5eed,
    )?;
    Ok(RealismPair {
        critic,
        actor,
        log,
        collapse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Critic with a single linear layer `l(z) = w·z + c`.
    fn linear_critic(w: &[f64], c: f64) -> LatentCritic {
        let k = w.len();
        LatentCritic {
            spec: NetSpec {
                latent_dim: k,
                hidden: vec![],
                label_dim: None,
                label_proj: 0,
                outputs: 1,
            },
            label_proj: None,
            mlp: Mlp::from_layers(vec![Linear {
                weight: Tensor::new([k, 1], w.to_vec()).unwrap(),
                bias: Tensor::vector(vec![c]),
            }]),
        }
    }

    #[test]
    fn realism_loss_at_half_is_three_ln2() {
        let critic = linear_critic(&[0.0, 0.0], 0.0);
        let tape = Tape::new();
        let d = critic.bind(&tape);
        let z = tape.leaf(Tensor::from_rows(&[[1.0, 2.0], [-3.0, 0.5]]).unwrap());
        let loss = critic_loss_realism(&d, (z, None), (z, None), Some((z, None)), 1.0).unwrap();
        assert!((loss.item().unwrap() - 3.0 * 2f64.ln()).abs() < 1e-12);
        let c1 = loss_c1(tape.scalar(0.0)).unwrap().item().unwrap();
        assert!((c1 - 2f64.ln()).abs() < 1e-12);
        let weighted = critic_loss_realism(&d, (z, None), (z, None), None, 0.1).unwrap();
        assert!((weighted.item().unwrap() - 1.1 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_critic_loss_vanishes_and_stays_finite() {
        let tape = Tape::new();
        let big = tape.leaf(Tensor::vector(vec![800.0]));
        assert!(loss_c1(big).unwrap().item().unwrap() < 1e-300);
        assert!(loss_c0(big.neg().unwrap()).unwrap().item().unwrap() < 1e-300);
        let v = loss_c1(big.neg().unwrap()).unwrap().item().unwrap();
        assert!((v - 800.0).abs() < 1e-9);
    }

    #[test]
    fn distance_penalty_values() {
        let tape = Tape::new();
        let z = tape.leaf(Tensor::from_rows(&[[0.0]]).unwrap());
        let zp = tape.leaf(Tensor::from_rows(&[[1.0]]).unwrap());
        let v = distance_penalty(zp, z, &DistanceScale::unit(1)).unwrap().item().unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-12);
        assert_eq!(distance_penalty(z, z, &DistanceScale::unit(1)).unwrap().item().unwrap(), 0.0);

        let z2 = tape.leaf(Tensor::from_rows(&[[0.0, 0.0]]).unwrap());
        let zp2 = tape.leaf(Tensor::from_rows(&[[1.0, 0.0]]).unwrap());
        let full = DistanceScale::new(vec![1.0, 1.0]).unwrap();
        let half = DistanceScale::new(vec![0.5, 1.0]).unwrap();
        let a = distance_penalty(zp2, z2, &full).unwrap().item().unwrap();
        let b = distance_penalty(zp2, z2, &half).unwrap().item().unwrap();
        assert!((b - 4.0 * a).abs() < 1e-12);
        assert!(DistanceScale::new(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn gradient_penalty_of_linear_and_constant_critics() {
        let mut rng = Rng::seeded(0);
        let pos = rng.normal_tensor(&[16, 2]);
        let neg = rng.normal_tensor(&[16, 2]);
        let unit = linear_critic(&[0.6, 0.8], 0.3);
        assert!(gradient_penalty(&unit, &pos, &neg, None, 1).unwrap().abs() < 1e-12);
        let two = linear_critic(&[1.2, 1.6], 0.0);
        assert!((gradient_penalty(&two, &pos, &neg, None, 1).unwrap() - 1.0).abs() < 1e-12);
        let flat = linear_critic(&[0.0, 0.0], 5.0);
        assert!((gradient_penalty(&flat, &pos, &neg, None, 1).unwrap() - 1.0).abs() < 1e-12);
    }

    fn actor_with_gate_bias(k: usize, dz: f64, gate_logit: f64) -> LatentActor {
        let spec = NetSpec {
            latent_dim: k,
            hidden: vec![4],
            label_dim: None,
            label_proj: 0,
            outputs: 2 * k,
        };
        let mut a = LatentActor::new(spec, &mut Rng::seeded(0)).unwrap();
        let last = a.mlp.last_mut();
        last.bias.data_mut()[..k].fill(dz);
        last.bias.data_mut()[k..].fill(gate_logit);
        a
    }

    #[test]
    fn gates_interpolate_between_z_and_shift() {
        let z = Tensor::from_rows(&[[0.0, 1.0], [-2.0, 3.0]]).unwrap();
        let closed = apply_actor(&actor_with_gate_bias(2, 7.0, -800.0), &z, None).unwrap();
        assert_eq!(closed, z);
        let open = apply_actor(&actor_with_gate_bias(2, 7.0, 800.0), &z, None).unwrap();
        assert!(open.data().iter().all(|&v| v == 7.0));
        let half = apply_actor(&actor_with_gate_bias(1, 2.0, 0.0), &Tensor::zeros([1, 1]), None).unwrap();
        assert_eq!(half.data(), &[1.0]);
    }

    #[test]
    fn identity_actor_loss_is_critic_loss() {
        let critic = linear_critic(&[0.5, -1.0], 0.2);
        let actor = actor_with_gate_bias(2, 3.0, -800.0);
        let mut rng = Rng::seeded(2);
        let z = rng.normal_tensor(&[5, 2]);
        let tape = Tape::new();
        let (d, g) = (critic.bind(&tape), actor.bind(&tape));
        let zv = tape.leaf(z.clone());
        let a = actor_loss(&g, &d, zv, None, 10.0, &DistanceScale::unit(2)).unwrap();
        let expected: f64 = critic
            .prob(&z, None)
            .unwrap()
            .data()
            .iter()
            .map(|p| -p.ln())
            .sum::<f64>()
            / 5.0;
        assert!((a.item().unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn conditional_nets_require_labels() {
        let spec = NetSpec {
            latent_dim: 2,
            hidden: vec![4],
            label_dim: Some(3),
            label_proj: 4,
            outputs: 4,
        };
        let a = LatentActor::new(spec.clone(), &mut Rng::seeded(0)).unwrap();
        let z = Tensor::zeros([2, 2]);
        assert!(apply_actor(&a, &z, None).is_err());
        assert!(apply_actor(&a, &z, Some(&Tensor::zeros([2, 2]))).is_err());
        assert!(apply_actor(&a, &z, Some(&Tensor::zeros([2, 3]))).is_ok());
        let c = LatentCritic::new(NetSpec { outputs: 1, ..spec }, &mut Rng::seeded(0)).unwrap();
        assert!(c.prob(&z, None).is_err());
    }

    #[test]
    fn g_opt_climbs_a_radial_critic() {
        // D(z) = sigmoid(1 − ‖z‖²) as an explicit objective.
        let objective = objective(|z| {
            let l = z.square()?.sum_cols()?.neg()?.add_scalar(1.0)?;
            loss_c1(l)
        });
        let mut rng = Rng::seeded(3);
        let z0 = rng.uniform_tensor(&[20, 2], -2.1, 2.1);
        let out = g_opt(&objective, &z0, &GOptConfig::default()).unwrap();
        for i in 0..20 {
            let r0: f64 = z0.row(i).iter().map(|v| v * v).sum::<f64>();
            let r1: f64 = out.z.row(i).iter().map(|v| v * v).sum::<f64>();
            assert!(r1 < r0.min(1.0) + 1e-9, "row {i}: {r0} -> {r1}");
        }
        // at the maximum the gradient vanishes
        let still = g_opt(&objective, &Tensor::zeros([1, 2]), &GOptConfig::default()).unwrap();
        assert!(still.z.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn g_opt_trajectory_and_zero_steps() {
        let objective = objective(|z| Ok(z.square()?.sum_cols()?));
        let z0 = Tensor::from_rows(&[[1.0, -1.0]]).unwrap();
        let cfg = GOptConfig {
            steps: 5,
            keep_trajectory: true,
            ..GOptConfig::default()
        };
        let out = g_opt(&objective, &z0, &cfg).unwrap();
        assert_eq!(out.trajectory.len(), 6);
        assert_eq!(out.trajectory[0], z0);
        let none = g_opt(&objective, &z0, &GOptConfig { steps: 0, ..cfg }).unwrap();
        assert_eq!(none.z, z0);
    }

    #[test]
    fn realism_pair_on_toy_posterior() {
        // data posterior concentrated near (2, 2); the prior is N(0, I)
        let n = 256;
        let mut rng = Rng::seeded(4);
        let mu = rng.normal_tensor(&[n, 2]).map(|v| 2.0 + 0.2 * v);
        let post = EncoderOutput {
            sigma: Tensor::full([n, 2], 0.1),
            mu,
        };
        let data = LatentData {
            posterior: &post,
            labels: None,
            sigma_bar: &[0.1, 0.1],
        };
        let cfg = GanTrainConfig {
            iterations: 300,
            d_steps_per_g_step: 5,
            batch: 64,
            hidden: vec![32, 32],
            lr: 2e-3,
            ..GanTrainConfig::default()
        };
        let pair = train_realism_pair(&data, &cfg, |_| {}).unwrap();
        assert_eq!(pair.log.len(), 300);
        let z = Rng::seeded(9).normal_tensor(&[500, 2]);
        let zp = apply_actor(&pair.actor, &z, None).unwrap();
        let before = pair.critic.prob(&z, None).unwrap().mean();
        let after = pair.critic.prob(&zp, None).unwrap().mean();
        assert!(after > before, "{after} <= {before}");
        let on_data = pair.critic.prob(&post.mu, None).unwrap().mean();
        assert!(on_data > 0.5, "{on_data}");
    }

    #[test]
    fn invalid_gan_configs_are_rejected() {
        for bad in [
            GanTrainConfig {
                prior_fraction_for_d: 0.0,
                ..GanTrainConfig::default()
            },
            GanTrainConfig {
                lambda_dist: -1.0,
                ..GanTrainConfig::default()
            },
            GanTrainConfig {
                d_steps_per_g_step: 0,
                ..GanTrainConfig::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }
}
