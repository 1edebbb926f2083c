//! Attribute critics, identity-preserving transforms, rule-based melody
//! rewards and zero-shot actor-critic training.

use autodiff::{AdamConfig, AdamState, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::actors::{
    actor_loss, apply_actor, g_opt, loss_c1, objective, soft_cross_entropy, DistanceScale, GOptConfig, GOptResult,
    GanLog, GanTrainConfig, LatentActor, LatentCritic, NetSpec,
};
use crate::error::{Error, Result};
use crate::melody::{Melody, MelodyFormat, PitchSet};
use crate::nn::{bce_with_logits, Optimizer};
use crate::rng::Rng;
use crate::seqvae::SeqVaeModel;
use crate::vae::EncoderOutput;

/// Binary attribute bits; for MNIST a one-hot digit class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeVector {
    pub bits: Vec<u8>,
}

impl AttributeVector {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() || bits.iter().any(|&b| b > 1) {
            return Err(Error::Invalid(format!("attribute bits must be 0/1, got {bits:?}")));
        }
        Ok(Self { bits })
    }

    pub fn one_hot(class: usize, width: usize) -> Result<Self> {
        if class >= width {
            return Err(Error::Invalid(format!("class {class} out of range for width {width}")));
        }
        let mut bits = vec![0; width];
        bits[class] = 1;
        Ok(Self { bits })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Stacks vectors of equal width into an `[n, A]` tensor.
    pub fn stack(rows: &[AttributeVector]) -> Result<Tensor> {
        let a = rows.first().map_or(0, AttributeVector::len);
        if rows.iter().any(|r| r.len() != a) {
            return Err(Error::Invalid("attribute vectors differ in width".into()));
        }
        let data = rows.iter().flat_map(|r| r.bits.iter().map(|&b| b as f64)).collect();
        Ok(Tensor::new([rows.len(), a], data)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttrCriticConfig {
    pub hidden: Vec<usize>,
    pub iterations: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for AttrCriticConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256, 256],
            iterations: 500,
            batch: 128,
            lr: 3e-4,
            seed: 0,
        }
    }
}

/// `p(y|z)` as independent sigmoid bits, trained by cross-entropy on fresh
/// `z ~ q(z|x)`.
pub fn train_attribute_critic(
    posterior: &EncoderOutput,
    labels: &Tensor,
    cfg: &AttrCriticConfig,
) -> Result<LatentCritic> {
    let (n, k) = posterior.mu.dims2("train_attribute_critic")?;
    let (m, a) = labels.dims2("train_attribute_critic")?;
    if m != n || n == 0 {
        return Err(Error::Invalid(format!("{m} label rows for {n} encodings")));
    }
    if cfg.iterations > 0 && (cfg.batch == 0 || cfg.lr <= 0.0) {
        return Err(Error::Config(format!("invalid attribute critic config {cfg:?}")));
    }
    let mut rng = Rng::seeded(cfg.seed);
    let spec = NetSpec {
        latent_dim: k,
        hidden: cfg.hidden.clone(),
        label_dim: None,
        label_proj: 0,
        outputs: a,
    };
    let mut critic = LatentCritic::new(spec, &mut rng)?;
    let mut opt = Optimizer::new(AdamConfig::new(cfg.lr, 0.9, 0.999), &critic);
    for it in 0..cfg.iterations {
        let idx: Vec<usize> = (0..cfg.batch).map(|_| rng.below(n)).collect();
        let mu = posterior.mu.select_rows(&idx)?;
        let sigma = posterior.sigma.select_rows(&idx)?;
        let eps = rng.normal_tensor(mu.shape());
        let z = mu.zip_map(&sigma.zip_map(&eps, "sample", |s, e| s * e)?, "sample", |a, b| a + b)?;
        let y = labels.select_rows(&idx)?;
        let tape = Tape::new();
        let d = critic.bind(&tape);
        let grads = (|| -> Result<_> {
            let loss = bce_with_logits(d.logits(tape.leaf(z), None)?, tape.leaf(y))?.mean()?;
            tape.gradients(loss, &d.vars()).map_err(Into::into)
        })()
        .map_err(|e| match e {
            Error::Tensor(e @ autodiff::Error::NonFinite { .. }) => {
                Error::Divergence(format!("attribute critic iteration {it}: {e}"))
            }
            e => e,
        })?;
        opt.step(&mut critic, &grads)?;
    }
    Ok(critic)
}

/// Fraction of rows whose highest-probability bit is the set label bit.
pub fn one_hot_accuracy(critic: &LatentCritic, z: &Tensor, labels: &Tensor) -> Result<f64> {
    let p = critic.prob(z, None)?;
    let (n, _) = p.dims2("one_hot_accuracy")?;
    if n == 0 {
        return Ok(0.0);
    }
    let hits = (0..n).filter(|&i| argmax(p.row(i)) == argmax(labels.row(i))).count();
    Ok(hits as f64 / n as f64)
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Joint descent on `w_real · ℒ_{c=1}(D_real) + w_attr · ℒ_{D_attr}(·; y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformConfig {
    pub lr: f64,
    pub max_steps: usize,
    pub tau_real: f64,
    pub tau_attr: f64,
    pub realism_weight: f64,
    pub attr_weight: f64,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            max_steps: 1000,
            tau_real: 0.8,
            tau_attr: 0.9,
            realism_weight: 0.1,
            attr_weight: 1.0,
        }
    }
}

impl TransformConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |t: f64| t > 0.0 && t < 1.0;
        if !(self.lr > 0.0 && unit(self.tau_real) && unit(self.tau_attr)) {
            return Err(Error::Config(format!("invalid transform config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Satisfied,
    MaxSteps,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformResult {
    pub z: Tensor,
    /// Per row: steps taken and why the row stopped.
    pub steps: Vec<usize>,
    pub reasons: Vec<StopReason>,
}

fn joint_objective<'t>(
    z: Var<'t>,
    d_real: &LatentCritic,
    d_attr: &LatentCritic,
    target: &Tensor,
    w_real: f64,
    w_attr: f64,
) -> Result<Var<'t>> {
    let tape = z.tape();
    let real = loss_c1(d_real.bind(tape).logits(z, None)?)?.sum_cols()?;
    let attr = bce_with_logits(d_attr.bind(tape).logits(z, None)?, tape.leaf(target.clone()))?.sum_cols()?;
    Ok(real.scale(w_real)?.add(attr.scale(w_attr)?)?)
}

/// Rows where `D_real > τ_real` and every target bit has probability `> τ_attr`.
pub fn satisfied_rows(
    z: &Tensor,
    d_real: &LatentCritic,
    d_attr: &LatentCritic,
    target: &Tensor,
    tau_real: f64,
    tau_attr: f64,
) -> Result<Vec<bool>> {
    let pr = d_real.prob(z, None)?;
    let pa = d_attr.prob(z, None)?;
    let (n, _) = z.dims2("satisfied_rows")?;
    Ok((0..n)
        .map(|i| {
            pr.row(i)[0] > tau_real
                && target.row(i).iter().zip(pa.row(i)).all(|(&t, &p)| t < 0.5 || p > tau_attr)
        })
        .collect())
}

/// Moves each row of `z0` until both critics pass their thresholds. Rows stop
/// independently; a satisfied row is never moved again.
pub fn transform_identity(
    z0: &Tensor,
    d_real: &LatentCritic,
    d_attr: &LatentCritic,
    target: &Tensor,
    cfg: &TransformConfig,
) -> Result<TransformResult> {
    let (n, k) = z0.dims2("transform_identity")?;
    if target.shape() != [n, d_attr.spec.outputs] {
        return Err(Error::Invalid(format!(
            "targets have shape {:?}, expected [{n}, {}]",
            target.shape(),
            d_attr.spec.outputs
        )));
    }
    let mut z = z0.clone();
    let mut steps = vec![0; n];
    let mut reasons = vec![StopReason::MaxSteps; n];
    let mut done = vec![false; n];
    if cfg.max_steps == 0 {
        return Ok(TransformResult { z, steps, reasons });
    }
    cfg.validate()?;
    let mut adam = AdamState::new(AdamConfig::new(cfg.lr, 0.9, 0.999), [&z]);
    for step in 0..=cfg.max_steps {
        let ok = satisfied_rows(&z, d_real, d_attr, target, cfg.tau_real, cfg.tau_attr)?;
        for i in 0..n {
            if !done[i] && ok[i] {
                done[i] = true;
                steps[i] = step;
                reasons[i] = StopReason::Satisfied;
            } else if !done[i] {
                steps[i] = step;
            }
        }
        if step == cfg.max_steps || done.iter().all(|&d| d) {
            break;
        }
        let tape = Tape::new();
        let zv = tape.leaf(z.clone());
        let loss = joint_objective(zv, d_real, d_attr, target, cfg.realism_weight, cfg.attr_weight)?.sum()?;
        let g = tape.gradients(loss, &[zv])?;
        let before = z.clone();
        adam.step(&mut [&mut z], &g)?;
        let data = z.data_mut();
        for (i, _) in done.iter().enumerate().filter(|(_, &d)| d) {
            data[i * k..(i + 1) * k].copy_from_slice(before.row(i));
        }
        if !z.is_finite() {
            return Err(Error::Divergence(format!("transform step {step}: non-finite z")));
        }
    }
    Ok(TransformResult { z, steps, reasons })
}

/// Conditional sampling from `z ~ p(z)` with a target attribute per row.
pub enum SampleMode<'a> {
    Actor(&'a LatentActor),
    Optimize {
        d_real: &'a LatentCritic,
        d_attr: &'a LatentCritic,
        realism_weight: f64,
        attr_weight: f64,
        g_opt: GOptConfig,
    },
}

/// Shifted latents for `z` and targets `y` (`[n, A]`).
pub fn conditional_latents(mode: &SampleMode, z: &Tensor, y: &Tensor) -> Result<Tensor> {
    match mode {
        SampleMode::Actor(g) => {
            if !g.is_conditional() {
                return Err(Error::Invalid("actor mode needs a conditional actor".into()));
            }
            apply_actor(g, z, Some(y))
        }
        SampleMode::Optimize {
            d_real,
            d_attr,
            realism_weight,
            attr_weight,
            g_opt: cfg,
        } => {
            let obj = objective(|zv| joint_objective(zv, d_real, d_attr, y, *realism_weight, *attr_weight));
            Ok(g_opt(&obj, z, cfg)?.z)
        }
    }
}

/// `g_opt` against the joint realism and attribute objective.
pub fn optimize_latents(
    z: &Tensor,
    d_real: &LatentCritic,
    d_attr: &LatentCritic,
    y: &Tensor,
    weights: (f64, f64),
    cfg: &GOptConfig,
) -> Result<GOptResult> {
    let obj = objective(|zv| joint_objective(zv, d_real, d_attr, y, weights.0, weights.1));
    g_opt(&obj, z, cfg)
}

/// Exact reward as a ratio of small integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub const ONE: Ratio = Ratio { num: 1, den: 1 };

    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn is_one(self) -> bool {
        self.num == self.den
    }

    fn mul(self, o: Ratio) -> Ratio {
        Ratio {
            num: self.num * o.num,
            den: self.den * o.den,
        }
    }
}

/// Share of note-ons whose pitch class is in `set`; `1` with no note-ons.
pub fn c_pitch_ratio(m: &Melody, set: &PitchSet, pitch_base: u32) -> Ratio {
    let (mut hit, mut total) = (0, 0);
    for p in m.note_ons(pitch_base) {
        total += 1;
        hit += set.contains(p) as u64;
    }
    if total == 0 {
        Ratio::ONE
    } else {
        Ratio { num: hit, den: total }
    }
}

pub fn c_pitch(m: &Melody, set: &PitchSet, pitch_base: u32) -> f64 {
    c_pitch_ratio(m, set, pitch_base).value()
}

/// `min(1, note-ons / d)`; `1` when `d = 0`.
pub fn c_density_ratio(m: &Melody, d: usize) -> Ratio {
    let count = m.note_on_count() as u64;
    if d == 0 || count >= d as u64 {
        Ratio::ONE
    } else {
        Ratio {
            num: count,
            den: d as u64,
        }
    }
}

pub fn c_density(m: &Melody, d: usize) -> f64 {
    c_density_ratio(m, d).value()
}

/// Reward specification, as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum RewardSpec {
    Pitch { pitch_classes: Vec<u8> },
    Density { d: usize },
    Product { of: Vec<RewardSpec> },
}

impl RewardSpec {
    pub fn c_major() -> Self {
        RewardSpec::Pitch {
            pitch_classes: PitchSet::c_major().classes(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            RewardSpec::Pitch { pitch_classes } => PitchSet::new(pitch_classes)
                .map(|_| ())
                .map_err(|e| Error::Config(format!("reward: {e}"))),
            RewardSpec::Density { .. } => Ok(()),
            RewardSpec::Product { of } if of.is_empty() => {
                Err(Error::Config("product reward needs at least one member".into()))
            }
            RewardSpec::Product { of } => of.iter().try_for_each(RewardSpec::validate),
        }
    }

    pub fn ratio(&self, m: &Melody, format: &MelodyFormat) -> Result<Ratio> {
        Ok(match self {
            RewardSpec::Pitch { pitch_classes } => {
                c_pitch_ratio(m, &PitchSet::new(pitch_classes)?, format.pitch_base)
            }
            RewardSpec::Density { d } => c_density_ratio(m, *d),
            RewardSpec::Product { of } => {
                let mut r = Ratio::ONE;
                for s in of {
                    r = r.mul(s.ratio(m, format)?);
                }
                r
            }
        })
    }

    pub fn reward(&self, m: &Melody, format: &MelodyFormat) -> Result<f64> {
        Ok(self.ratio(m, format)?.value())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZeroShotConfig {
    pub gan: GanTrainConfig,
    /// Decodes per latent point averaged into the critic target.
    pub samples_per_z: usize,
    pub temperature: f64,
}

impl Default for ZeroShotConfig {
    fn default() -> Self {
        Self {
            gan: GanTrainConfig {
                d_steps_per_g_step: 2,
                batch: 64,
                iterations: 400,
                lr: 1e-3,
                lambda_dist: 0.01,
                ..GanTrainConfig::default()
            },
            samples_per_z: 2,
            temperature: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ZeroShotPair {
    pub critic: LatentCritic,
    pub actor: LatentActor,
    pub log: Vec<GanLog>,
}

/// Mean reward of `samples_per_z` decodes for each row of `z`.
pub fn mean_rewards(
    seqvae: &SeqVaeModel,
    reward: &RewardSpec,
    z: &Tensor,
    samples_per_z: usize,
    temperature: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let (n, _) = z.dims2("mean_rewards")?;
    let mut total = vec![0.0; n];
    for s in 0..samples_per_z {
        let ms = seqvae.decode_sample(z, temperature, seed.wrapping_add(s as u64 * 0x9e37_79b9))?;
        for (t, m) in total.iter_mut().zip(&ms) {
            *t += reward.reward(m, seqvae.format())?;
        }
    }
    Ok(total.into_iter().map(|t| t / samples_per_z as f64).collect())
}

/// Value critic and actor trained from decoded-sample rewards. The critic
/// fits `r̄` by soft-label cross-entropy on raw and shifted prior draws; the
/// actor follows the critic with the distance penalty. Nothing is
/// differentiated through the decoder.
pub fn zero_shot_train(
    seqvae: &SeqVaeModel,
    reward: &RewardSpec,
    cfg: &ZeroShotConfig,
    mut on_iter: impl FnMut(&GanLog),
) -> Result<ZeroShotPair> {
    let gan = &cfg.gan;
    gan.validate()?;
    reward.validate()?;
    if cfg.samples_per_z == 0 || cfg.temperature <= 0.0 {
        return Err(Error::Config("samples_per_z and temperature must be positive".into()));
    }
    let k = seqvae.latent_dim();
    let scale = DistanceScale::new(seqvae.sigma_bar()?.to_vec())?;
    let spec = |hidden: &[usize], outputs| NetSpec {
        latent_dim: k,
        hidden: hidden.to_vec(),
        label_dim: None,
        label_proj: 0,
        outputs,
    };
    let mut rng = Rng::seeded(gan.seed);
    let mut critic = LatentCritic::new(spec(&gan.hidden, 1), &mut rng)?;
    let mut actor = LatentActor::new(spec(gan.actor_widths(), 2 * k), &mut rng)?;
    let adam = AdamConfig::new(gan.lr, gan.beta1, gan.beta2);
    let mut d_opt = Optimizer::new(adam, &critic);
    let mut g_opt_state = Optimizer::new(adam, &actor);
    let b = gan.batch;
    let mut log = Vec::with_capacity(gan.iterations);
    for it in 0..gan.iterations {
        let mut d_loss = 0.0;
        for _ in 0..gan.d_steps_per_g_step {
            let z = rng.normal_tensor(&[b, k]);
            let zp = apply_actor(&actor, &z, None)?;
            let both = Tensor::vstack(&[&z, &zp])?;
            let seed = rng.below(usize::MAX) as u64;
            let r = mean_rewards(seqvae, reward, &both, cfg.samples_per_z, cfg.temperature, seed)?;
            if r.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Invalid("reward outside [0, 1]".into()));
            }
            let tape = Tape::new();
            let d = critic.bind(&tape);
            let (grads, l) = (|| -> Result<_> {
                let target = tape.leaf(Tensor::new([2 * b, 1], r)?);
                let loss = soft_cross_entropy(d.logits(tape.leaf(both), None)?, target)?.mean()?;
                Ok((tape.gradients(loss, &d.vars())?, loss.item()?))
            })()
            .map_err(|e| diverged(e, "value critic", it))?;
            d_opt.step(&mut critic, &grads)?;
            d_loss = l;
        }
        let z = rng.normal_tensor(&[b, k]);
        let tape = Tape::new();
        let (d, g) = (critic.bind(&tape), actor.bind(&tape));
        let (grads, g_loss) = (|| -> Result<_> {
            let loss = actor_loss(&g, &d, tape.leaf(z), None, gan.lambda_dist, &scale)?;
            Ok((tape.gradients(loss, &g.vars())?, loss.item()?))
        })()
        .map_err(|e| diverged(e, "zero-shot actor", it))?;
        g_opt_state.step(&mut actor, &grads)?;
        let entry = GanLog {
            iteration: it,
            d_loss,
            gp: 0.0,
            g_loss,
        };
        on_iter(&entry);
        log.push(entry);
    }
    Ok(ZeroShotPair { critic, actor, log })
}

fn diverged(e: Error, what: &str, it: usize) -> Error {
    match e {
        Error::Tensor(e @ autodiff::Error::NonFinite { .. }) => {
            Error::Divergence(format!("{what} iteration {it}: {e}"))
        }
        e => e,
    }
}

/// Share of grid points where `|D(z) − r̄(z)| ≤ tol`, with `r̄` the mean
/// reward over `decodes` samples.
pub fn critic_calibration(
    critic: &LatentCritic,
    seqvae: &SeqVaeModel,
    reward: &RewardSpec,
    grid: &Tensor,
    decodes: usize,
    tol: f64,
    seed: u64,
) -> Result<f64> {
    let d = critic.prob(grid, None)?;
    let r = mean_rewards(seqvae, reward, grid, decodes, 1.0, seed)?;
    let ok = d.data().iter().zip(&r).filter(|(p, r)| (*p - *r).abs() <= tol).count();
    Ok(ok as f64 / r.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::melody::{HOLD, REST};
    use crate::nn::{Linear, Mlp};

    fn mel(tokens: &[u8]) -> Melody {
        Melody::new(tokens.to_vec(), 16).unwrap()
    }

    #[test]
    fn pitch_reward_counts_note_on_classes() {
        // tokens for pitches 60, 62, 61, 63
        let m = mel(&[2, 4, HOLD, 3, 5, REST]);
        let v = c_pitch(&m, &PitchSet::c_major(), 60);
        assert_eq!(v, 0.5);
        assert_eq!(c_pitch(&mel(&[HOLD, REST, REST]), &PitchSet::c_major(), 60), 1.0);
        assert_eq!(c_pitch(&mel(&[2, 4, 6]), &PitchSet::c_major(), 60), 1.0);
    }

    #[test]
    fn density_reward_saturates() {
        let m = mel(&[2, 3, HOLD, 4]);
        assert_eq!(c_density(&m, 3), 1.0);
        assert_eq!(c_density(&m, 6), 0.5);
        assert_eq!(c_density(&m, 0), 1.0);
        assert_eq!(c_density(&mel(&[REST]), 0), 1.0);
    }

    #[test]
    fn pitch_reward_ignores_octaves() {
        let base = mel(&[2, 3, 7]);
        let up = mel(&[14, 15, 7]);
        let p = PitchSet::new(&[0, 4]).unwrap();
        assert_eq!(c_pitch(&base, &p, 60), c_pitch(&up, &p, 60));
    }

    #[test]
    fn reward_spec_json_and_product() {
        let spec: RewardSpec = serde_json::from_str(
            r#"{"type":"product","of":[{"type":"pitch","pitch_classes":[0,2,4,5,7,9,11]},{"type":"density","d":8}]}"#,
        )
        .unwrap();
        let f = MelodyFormat::default();
        let m = mel(&[2, 4, 3, 5]);
        assert_eq!(spec.reward(&m, &f).unwrap(), 0.25);
        let flipped = RewardSpec::Product {
            of: match &spec {
                RewardSpec::Product { of } => of.iter().rev().cloned().collect(),
                _ => unreachable!(),
            },
        };
        assert_eq!(flipped.reward(&m, &f).unwrap(), 0.25);
        assert!(!spec.ratio(&m, &f).unwrap().is_one());
        let bad: RewardSpec = serde_json::from_str(r#"{"type":"pitch","pitch_classes":[]}"#).unwrap();
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    fn constant_critic(k: usize, logits: &[f64]) -> LatentCritic {
        let a = logits.len();
        LatentCritic {
            spec: NetSpec {
                latent_dim: k,
                hidden: vec![],
                label_dim: None,
                label_proj: 0,
                outputs: a,
            },
            label_proj: None,
            mlp: Mlp::from_layers(vec![Linear {
                weight: Tensor::zeros([k, a]),
                bias: Tensor::vector(logits.to_vec()),
            }]),
        }
    }

    fn linear_critic(w: Vec<f64>, outputs: usize, bias: Vec<f64>) -> LatentCritic {
        let k = w.len() / outputs;
        LatentCritic {
            spec: NetSpec {
                latent_dim: k,
                hidden: vec![],
                label_dim: None,
                label_proj: 0,
                outputs,
            },
            label_proj: None,
            mlp: Mlp::from_layers(vec![Linear {
                weight: Tensor::new([k, outputs], w).unwrap(),
                bias: Tensor::vector(bias),
            }]),
        }
    }

    #[test]
    fn satisfied_start_is_returned_unchanged() {
        let real = constant_critic(2, &[3.0]);
        let attr = constant_critic(2, &[3.0, -3.0]);
        let z0 = Tensor::from_rows(&[[0.3, -1.0]]).unwrap();
        let y = Tensor::from_rows(&[[1.0, 0.0]]).unwrap();
        let out = transform_identity(&z0, &real, &attr, &y, &TransformConfig::default()).unwrap();
        assert_eq!(out.z, z0);
        assert_eq!(out.steps, vec![0]);
        assert_eq!(out.reasons, vec![StopReason::Satisfied]);
    }

    #[test]
    fn zero_steps_is_identity() {
        let real = constant_critic(2, &[-3.0]);
        let attr = constant_critic(2, &[-3.0]);
        let z0 = Tensor::from_rows(&[[0.3, -1.0], [2.0, 1.0]]).unwrap();
        let y = Tensor::from_rows(&[[1.0], [1.0]]).unwrap();
        let cfg = TransformConfig {
            max_steps: 0,
            ..TransformConfig::default()
        };
        let out = transform_identity(&z0, &real, &attr, &y, &cfg).unwrap();
        assert_eq!(out.z, z0);
        assert_eq!(out.reasons, vec![StopReason::MaxSteps; 2]);
    }

    #[test]
    fn transform_walks_into_the_target_region() {
        // realism prefers z0 < 0 weakly; attribute bit 1 needs z1 > 0
        let real = linear_critic(vec![-1.0, 0.0], 1, vec![1.0]);
        let attr = linear_critic(vec![0.0, 0.0, 0.0, 4.0], 2, vec![0.0, 0.0]);
        let z0 = Tensor::from_rows(&[[0.0, -1.0], [0.0, -2.0]]).unwrap();
        let y = Tensor::from_rows(&[[0.0, 1.0], [0.0, 1.0]]).unwrap();
        let cfg = TransformConfig {
            lr: 0.05,
            tau_real: 0.5,
            tau_attr: 0.5,
            ..TransformConfig::default()
        };
        let out = transform_identity(&z0, &real, &attr, &y, &cfg).unwrap();
        assert_eq!(out.reasons, vec![StopReason::Satisfied; 2]);
        assert!(out.steps[0] < out.steps[1]);
        let ok = satisfied_rows(&out.z, &real, &attr, &y, 0.5, 0.5).unwrap();
        assert!(ok.iter().all(|&b| b));
        // stopped just past the boundary rather than running on
        assert!(out.z.row(0)[1] < 0.5);
    }

    #[test]
    fn attribute_critic_learns_constant_labels_and_fails_on_noise() {
        let n = 400;
        let mut rng = Rng::seeded(1);
        let post = EncoderOutput {
            mu: rng.normal_tensor(&[n, 2]),
            sigma: Tensor::full([n, 2], 0.1),
        };
        let ones = Tensor::full([n, 1], 1.0);
        let cfg = AttrCriticConfig {
            hidden: vec![16],
            iterations: 400,
            batch: 32,
            lr: 1e-2,
            seed: 0,
        };
        let c = train_attribute_critic(&post, &ones, &cfg).unwrap();
        assert!(c.prob(&post.mu, None).unwrap().data().iter().all(|&p| p > 0.95));

        // labels decided by the sign of z0 are learnable; shuffled ones are not
        let classes = 2;
        let rows: Vec<AttributeVector> = (0..n)
            .map(|i| AttributeVector::one_hot((post.mu.row(i)[0] > 0.0) as usize, classes).unwrap())
            .collect();
        let labels = AttributeVector::stack(&rows).unwrap();
        let c = train_attribute_critic(&post, &labels, &cfg).unwrap();
        assert!(one_hot_accuracy(&c, &post.mu, &labels).unwrap() > 0.9);
        let mut shuffled = rows.clone();
        rng.shuffle(&mut shuffled);
        let noise = train_attribute_critic(&post, &AttributeVector::stack(&shuffled).unwrap(), &cfg).unwrap();
        // held-out labels independent of z, as in the shuffled training set
        let held_mu = Rng::seeded(7).normal_tensor(&[2000, 2]);
        let held: Vec<AttributeVector> = (0..2000)
            .map(|_| AttributeVector::one_hot(rng.below(classes), classes).unwrap())
            .collect();
        let acc = one_hot_accuracy(&noise, &held_mu, &AttributeVector::stack(&held).unwrap()).unwrap();
        assert!((acc - 0.5).abs() < 0.05, "{acc}");
    }

    #[test]
    fn label_batch_mismatch_is_rejected() {
        let post = EncoderOutput {
            mu: Tensor::zeros([4, 2]),
            sigma: Tensor::full([4, 2], 1.0),
        };
        let r = train_attribute_critic(&post, &Tensor::zeros([3, 1]), &AttrCriticConfig::default());
        assert!(matches!(r, Err(Error::Invalid(_))));
    }

    #[test]
    fn attribute_vectors_validate() {
        assert!(AttributeVector::new(vec![0, 2]).is_err());
        assert!(AttributeVector::one_hot(3, 3).is_err());
        let t = AttributeVector::stack(&[AttributeVector::one_hot(1, 3).unwrap()]).unwrap();
        assert_eq!(t.data(), &[0.0, 1.0, 0.0]);
    }
}
