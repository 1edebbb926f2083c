//! Feedforward VAE over flattened images.
//!
//! The encoder maps `x` to a diagonal Gaussian `q(z|x)` (mean plus a
//! softplus scale); the decoder maps `z` to sigmoid pixel intensities `g(z)`
//! that parameterize either `N(x; g, σ_x² I)` or a Bernoulli likelihood.
//! Training maximizes the evidence lower bound
//! `E_q[log π(x; g(z))] − β·KL(q(z|x) ‖ N(0, I))` with `β = kl_weight`
//! (`β = 0` gives a plain autoencoder with sampling noise).

use std::f64::consts::PI;

use autodiff::{AdamConfig, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::io::checkpoint::{config_from, take_shaped, Checkpoint};
use crate::nn::{BoundMlp, Mlp, Module, Optimizer};
use crate::rng::Rng;

/// Lower bound applied to encoder scales so `ln σ` stays finite.
pub const SIGMA_FLOOR: f64 = 1e-6;

const EVAL_CHUNK: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Likelihood {
    Gaussian,
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeConfig {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub hidden_dims: Vec<usize>,
    /// Pixel noise scale of the Gaussian likelihood.
    pub sigma_x: f64,
    /// Weight on the KL term; 0 turns the model into an autoencoder.
    pub kl_weight: f64,
    pub likelihood: Likelihood,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            input_dim: 784,
            latent_dim: 16,
            hidden_dims: vec![256, 256, 256],
            sigma_x: 0.1,
            kl_weight: 1.0,
            likelihood: Likelihood::Gaussian,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim < 2 {
            return Err(Error::Config(format!(
                "latent_dim must be at least 2, got {}",
                self.latent_dim
            )));
        }
        if self.likelihood == Likelihood::Gaussian && !(self.sigma_x > 0.0) {
            return Err(Error::Config(format!("sigma_x must be > 0, got {}", self.sigma_x)));
        }
        if !(self.kl_weight >= 0.0) {
            return Err(Error::Config(format!(
                "kl_weight must be >= 0, got {}",
                self.kl_weight
            )));
        }
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Parameters of the diagonal Gaussian `q(z|x)` for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub mu: Tensor,
    pub sigma: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    pub config: VaeConfig,
    pub encoder: Mlp,
    pub decoder: Mlp,
    /// Mean encoder scale per latent dimension over the training set.
    pub sigma_bar: Option<Vec<f64>>,
}

impl VaeModel {
    /// Random weights, with the encoder's output layer zeroed so an untrained
    /// model encodes everything to `μ = 0, σ = ln 2`.
    pub fn new(config: VaeConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut enc_dims = vec![config.input_dim];
        enc_dims.extend(&config.hidden_dims);
        enc_dims.push(2 * config.latent_dim);
        let mut dec_dims = vec![config.latent_dim];
        dec_dims.extend(&config.hidden_dims);
        dec_dims.push(config.input_dim);
        let mut encoder = Mlp::new(&enc_dims, rng)?;
        let last = encoder.last_mut();
        *last = crate::nn::Linear::zeros(last.inputs(), last.outputs());
        let decoder = Mlp::new(&dec_dims, rng)?;
        Ok(Self {
            config,
            encoder,
            decoder,
            sigma_bar: None,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn bind<'t>(&'t self, tape: &'t Tape) -> BoundVae<'t> {
        BoundVae {
            config: &self.config,
            encoder: self.encoder.bind(tape),
            decoder: self.decoder.bind(tape),
        }
    }

    pub fn encode(&self, x: &Tensor) -> Result<EncoderOutput> {
        let (n, d) = x.dims2("encode")?;
        if d != self.config.input_dim {
            return Err(autodiff::Error::ShapeMismatch {
                op: "encode",
                lhs: vec![n, d],
                rhs: vec![n, self.config.input_dim],
            }
            .into());
        }
        let mut mus = Vec::new();
        let mut sigmas = Vec::new();
        for start in (0..n).step_by(EVAL_CHUNK) {
            let chunk = x.slice_rows(start, EVAL_CHUNK.min(n - start))?;
            let tape = Tape::new();
            let (mu, sigma) = self.bind(&tape).encode(tape.leaf(chunk))?;
            mus.push(mu.value().as_ref().clone());
            sigmas.push(sigma.value().as_ref().clone());
        }
        Ok(EncoderOutput {
            mu: Tensor::vstack(&mus.iter().collect::<Vec<_>>())?,
            sigma: Tensor::vstack(&sigmas.iter().collect::<Vec<_>>())?,
        })
    }

    /// Decoder means `g(z)`, each in `[0, 1]`.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let (n, d) = z.dims2("decode")?;
        if d != self.config.latent_dim {
            return Err(autodiff::Error::ShapeMismatch {
                op: "decode",
                lhs: vec![n, d],
                rhs: vec![n, self.config.latent_dim],
            }
            .into());
        }
        let mut parts = Vec::new();
        for start in (0..n).step_by(EVAL_CHUNK) {
            let chunk = z.slice_rows(start, EVAL_CHUNK.min(n - start))?;
            let tape = Tape::new();
            let g = self.bind(&tape).decode(tape.leaf(chunk))?;
            parts.push(g.value().as_ref().clone());
        }
        Ok(Tensor::vstack(&parts.iter().collect::<Vec<_>>())?)
    }

    /// `g(μ(x))`.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.decode(&self.encode(x)?.mu)
    }

    /// Stored `σ̄_z`, or an error naming the missing training step.
    pub fn sigma_bar(&self) -> Result<&[f64]> {
        self.sigma_bar
            .as_deref()
            .ok_or_else(|| Error::Invalid("VAE has no sigma_bar; train it first".into()))
    }
}

impl Module for VaeModel {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.encoder.push_named("encoder", &mut out);
        self.decoder.push_named("decoder", &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        self.encoder.push_mut(&mut out);
        self.decoder.push_mut(&mut out);
        out
    }
}

impl Checkpoint for VaeModel {
    const KIND: &'static str = "image-vae";

    fn config_json(&self) -> Result<Value> {
        Ok(serde_json::to_value(&self.config)?)
    }

    fn tensors(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> =
            self.named_params().into_iter().map(|(n, t)| (n, t.clone())).collect();
        if let Some(sb) = &self.sigma_bar {
            out.push(("sigma_bar".into(), Tensor::vector(sb.clone())));
        }
        out
    }

    fn from_parts(config: &Value, take: &mut dyn FnMut(&str) -> Result<Tensor>) -> Result<Self> {
        let mut model = VaeModel::new(config_from(config)?, &mut Rng::seeded(0))?;
        let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(model.params_mut()) {
            *slot = take_shaped(take, name, slot.shape())?;
        }
        model.sigma_bar = take("sigma_bar").ok().map(Tensor::into_data);
        Ok(model)
    }
}

/// `z = μ + σ ⊙ ε`.
pub fn reparameterize(enc: &EncoderOutput, noise: &Tensor) -> Result<Tensor> {
    if noise.shape() != enc.mu.shape() {
        return Err(autodiff::Error::ShapeMismatch {
            op: "reparameterize",
            lhs: enc.mu.shape().to_vec(),
            rhs: noise.shape().to_vec(),
        }
        .into());
    }
    let scaled = enc.sigma.zip_map(noise, "reparameterize", |s, e| s * e)?;
    Ok(enc.mu.zip_map(&scaled, "reparameterize", |m, s| m + s)?)
}

/// Closed-form `KL(N(μ, diag σ²) ‖ N(0, I))`.
pub fn kl_diag_gaussian(mu: &[f64], sigma: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(sigma)
        .map(|(&m, &s)| m * m + s * s - 1.0 - 2.0 * s.ln())
        .sum::<f64>()
}

/// `Σ_i log N(x_i; g_i, σ_x²)`.
pub fn gaussian_log_likelihood(x: &[f64], g: &[f64], sigma_x: f64) -> f64 {
    let norm = -sigma_x.ln() - 0.5 * (2.0 * PI).ln();
    x.iter()
        .zip(g)
        .map(|(&xi, &gi)| {
            let r = (xi - gi) / sigma_x;
            norm - 0.5 * r * r
        })
        .sum()
}

/// Loss and its two terms for one batch, all per-example means in nats.
pub struct ElboTerms<'t> {
    /// `−(ll − kl_weight·kl)`, differentiable.
    pub loss: Var<'t>,
    pub ll: f64,
    pub kl: f64,
}

pub struct BoundVae<'t> {
    pub config: &'t VaeConfig,
    pub encoder: BoundMlp<'t>,
    pub decoder: BoundMlp<'t>,
}

impl<'t> BoundVae<'t> {
    pub fn vars(&self) -> Vec<Var<'t>> {
        let mut out = Vec::new();
        self.encoder.push_vars(&mut out);
        self.decoder.push_vars(&mut out);
        out
    }

    /// `(μ, σ)` with `σ = max(softplus(raw), SIGMA_FLOOR)`.
    pub fn encode(&self, x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let h = self.encoder.forward(x)?;
        let k = self.config.latent_dim;
        let mu = h.narrow_cols(0, k)?;
        let sigma = h.narrow_cols(k, k)?.softplus()?.clamp_min(SIGMA_FLOOR)?;
        Ok((mu, sigma))
    }

    pub fn decode_logits(&self, z: Var<'t>) -> Result<Var<'t>> {
        self.decoder.forward(z)
    }

    pub fn decode(&self, z: Var<'t>) -> Result<Var<'t>> {
        Ok(self.decode_logits(z)?.sigmoid()?)
    }

    pub fn reparameterize(&self, mu: Var<'t>, sigma: Var<'t>, noise: Var<'t>) -> Result<Var<'t>> {
        Ok(mu.add(sigma.mul(noise)?)?)
    }

    /// Per-example `log π(x; g(z))`, shape `[n]`.
    pub fn log_likelihood(&self, x: Var<'t>, logits: Var<'t>) -> Result<Var<'t>> {
        let d = self.config.input_dim as f64;
        match self.config.likelihood {
            Likelihood::Gaussian => {
                let s = self.config.sigma_x;
                let g = logits.sigmoid()?;
                let sq = x.sub(g)?.square()?.sum_cols()?;
                Ok(sq
                    .scale(-0.5 / (s * s))?
                    .add_scalar(-d * (s.ln() + 0.5 * (2.0 * PI).ln()))?)
            }
            Likelihood::Bernoulli => Ok(x
                .mul(logits)?
                .sub(logits.softplus()?)?
                .sum_cols()?),
        }
    }

    /// Per-example closed-form KL to the standard normal prior, shape `[n]`.
    pub fn kl(&self, mu: Var<'t>, sigma: Var<'t>) -> Result<Var<'t>> {
        let inner = mu
            .square()?
            .add(sigma.square()?)?
            .add_scalar(-1.0)?
            .sub(sigma.log()?.scale(2.0)?)?;
        Ok(inner.sum_cols()?.scale(0.5)?)
    }

    pub fn elbo(&self, x: Var<'t>, noise: Var<'t>) -> Result<ElboTerms<'t>> {
        let (mu, sigma) = self.encode(x)?;
        let z = self.reparameterize(mu, sigma, noise)?;
        let ll = self.log_likelihood(x, self.decode_logits(z)?)?.mean()?;
        let kl = self.kl(mu, sigma)?.mean()?;
        let loss = ll.sub(kl.scale(self.config.kl_weight)?)?.neg()?;
        Ok(ElboTerms {
            loss,
            ll: ll.item()?,
            kl: kl.item()?,
        })
    }
}

/// Evaluates per-example `(ll, kl, elbo)` means with one posterior sample each.
pub fn evaluate_elbo(model: &VaeModel, data: &Tensor, seed: u64) -> Result<(f64, f64, f64)> {
    let (n, _) = data.dims2("evaluate_elbo")?;
    let mut rng = Rng::seeded(seed);
    let (mut ll, mut kl) = (0.0, 0.0);
    for start in (0..n).step_by(EVAL_CHUNK) {
        let m = EVAL_CHUNK.min(n - start);
        let tape = Tape::new();
        let b = model.bind(&tape);
        let x = tape.leaf(data.slice_rows(start, m)?);
        let noise = tape.leaf(rng.normal_tensor(&[m, model.latent_dim()]));
        let terms = b.elbo(x, noise)?;
        ll += terms.ll * m as f64;
        kl += terms.kl * m as f64;
    }
    let (ll, kl) = (ll / n as f64, kl / n as f64);
    Ok((ll, kl, ll - kl))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 100,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            seed: 0,
        }
    }
}

/// One line of the training log (per-example nats, averaged over the epoch).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub ll: f64,
    pub kl: f64,
    pub elbo: f64,
}

/// Trains in place, then fills `sigma_bar` from the whole training set.
pub fn train_vae(
    model: &mut VaeModel,
    data: &Tensor,
    cfg: &VaeTrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    let (n, d) = data.dims2("train_vae")?;
    if n == 0 {
        return Err(Error::Invalid("train_vae: empty dataset".into()));
    }
    if d != model.config.input_dim {
        return Err(Error::Config(format!(
            "train_vae: data has {d} features, model expects {}",
            model.config.input_dim
        )));
    }
    let mut rng = Rng::seeded(cfg.seed);
    let mut opt = Optimizer::new(AdamConfig::new(cfg.lr, cfg.beta1, cfg.beta2), model);
    let mut order: Vec<usize> = (0..n).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let (mut ll_sum, mut kl_sum) = (0.0, 0.0);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = data.select_rows(idx)?;
            let noise = rng.normal_tensor(&[idx.len(), model.latent_dim()]);
            let tape = Tape::new();
            let bound = model.bind(&tape);
            let step = bound
                .elbo(tape.leaf(x), tape.leaf(noise))
                .and_then(|t| Ok((tape.gradients(t.loss, &bound.vars())?, t.ll, t.kl)));
            let (grads, ll, kl) = match step {
                Ok(v) => v,
                Err(Error::Tensor(e @ autodiff::Error::NonFinite { .. })) => {
                    return Err(Error::Divergence(format!(
                        "VAE epoch {epoch} batch {b}: {e} (sigma_x={}, lr={})",
                        model.config.sigma_x, cfg.lr
                    )))
                }
                Err(e) => return Err(e),
            };
            ll_sum += ll * idx.len() as f64;
            kl_sum += kl * idx.len() as f64;
            opt.step(model, &grads)?;
        }
        let (ll, kl) = (ll_sum / n as f64, kl_sum / n as f64);
        let log = EpochLog {
            epoch,
            ll,
            kl,
            elbo: ll - kl,
        };
        on_epoch(&log);
        logs.push(log);
    }
    model.sigma_bar = Some(mean_posterior_sigma(model, data)?);
    Ok(logs)
}

/// `σ̄_z`: encoder scale averaged over `data`, per latent dimension.
pub fn mean_posterior_sigma(model: &VaeModel, data: &Tensor) -> Result<Vec<f64>> {
    let enc = model.encode(data)?;
    let (n, k) = enc.sigma.dims2("sigma_bar")?;
    let mut out = vec![0.0; k];
    for i in 0..n {
        out.iter_mut().zip(enc.sigma.row(i)).for_each(|(o, &s)| *o += s);
    }
    out.iter_mut().for_each(|o| *o /= n as f64);
    Ok(out)
}

/// `σ̄_z` sorted ascending (most-used dimensions first).
pub fn posterior_std_profile(model: &VaeModel, data: &Tensor) -> Result<Vec<f64>> {
    let mut p = mean_posterior_sigma(model, data)?;
    p.sort_by(f64::total_cmp);
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> VaeConfig {
        VaeConfig {
            input_dim: 6,
            latent_dim: 3,
            hidden_dims: vec![8],
            ..VaeConfig::default()
        }
    }

    #[test]
    fn kl_closed_form_values() {
        assert_eq!(kl_diag_gaussian(&[0.0], &[1.0]), 0.0);
        assert_eq!(kl_diag_gaussian(&[1.0], &[1.0]), 0.5);
        let v = kl_diag_gaussian(&[0.0], &[2.0]);
        assert!((v - (1.5 - 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn gaussian_log_likelihood_values() {
        let at_mean = gaussian_log_likelihood(&[0.3], &[0.3], 1.0);
        assert!((at_mean + 0.5 * (2.0 * PI).ln()).abs() < 1e-12);
        let off = gaussian_log_likelihood(&[0.5], &[0.4], 0.1);
        let expected = -0.5 - 0.1f64.ln() - 0.5 * (2.0 * PI).ln();
        assert!((off - expected).abs() < 1e-12, "{off} vs {expected}");
        assert!((expected - 0.8837).abs() < 1e-4);
    }

    #[test]
    fn untrained_encoder_is_zero_mean_ln2_scale() {
        let mut rng = Rng::seeded(0);
        let m = VaeModel::new(small_config(), &mut rng).unwrap();
        let x = rng.uniform_tensor(&[4, 6], 0.0, 1.0);
        let enc = m.encode(&x).unwrap();
        assert!(enc.mu.data().iter().all(|&v| v == 0.0));
        assert!(enc.sigma.data().iter().all(|&s| (s - 2f64.ln()).abs() < 1e-15));
        let profile = posterior_std_profile(&m, &x).unwrap();
        assert_eq!(profile.len(), 3);
        assert!(profile.iter().all(|&s| (s - 2f64.ln()).abs() < 1e-15));
    }

    #[test]
    fn decode_range_and_determinism() {
        let mut rng = Rng::seeded(1);
        let m = VaeModel::new(small_config(), &mut rng).unwrap();
        let z = rng.normal_tensor(&[5, 3]).map(|v| v * 10.0);
        let g = m.decode(&z).unwrap();
        assert!(g.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(g, m.decode(&z).unwrap());
        assert!(m.decode(&Tensor::zeros([1, 4])).is_err());
    }

    #[test]
    fn reparameterize_zero_noise_is_mean() {
        let enc = EncoderOutput {
            mu: Tensor::vector(vec![0.5, -1.0]).reshape([1, 2]).unwrap(),
            sigma: Tensor::vector(vec![2.0, 3.0]).reshape([1, 2]).unwrap(),
        };
        assert_eq!(reparameterize(&enc, &Tensor::zeros([1, 2])).unwrap(), enc.mu);
        assert!(reparameterize(&enc, &Tensor::zeros([2, 2])).is_err());
    }

    #[test]
    fn elbo_decomposes_exactly() {
        let mut rng = Rng::seeded(2);
        for kl_weight in [0.0, 0.5, 1.0] {
            let cfg = VaeConfig {
                kl_weight,
                ..small_config()
            };
            let m = VaeModel::new(cfg, &mut rng).unwrap();
            let tape = Tape::new();
            let b = m.bind(&tape);
            let x = tape.leaf(rng.uniform_tensor(&[3, 6], 0.0, 1.0));
            let noise = tape.leaf(rng.normal_tensor(&[3, 3]));
            let t = b.elbo(x, noise).unwrap();
            assert_eq!(t.loss.item().unwrap(), -(t.ll - kl_weight * t.kl));
        }
    }

    #[test]
    fn bound_elbo_matches_value_functions() {
        let mut rng = Rng::seeded(3);
        let m = VaeModel::new(small_config(), &mut rng).unwrap();
        let x = rng.uniform_tensor(&[2, 6], 0.0, 1.0);
        let noise = rng.normal_tensor(&[2, 3]);
        let tape = Tape::new();
        let t = m.bind(&tape).elbo(tape.leaf(x.clone()), tape.leaf(noise.clone())).unwrap();
        let enc = m.encode(&x).unwrap();
        let z = reparameterize(&enc, &noise).unwrap();
        let g = m.decode(&z).unwrap();
        let mut ll = 0.0;
        let mut kl = 0.0;
        for i in 0..2 {
            ll += gaussian_log_likelihood(x.row(i), g.row(i), 0.1) / 2.0;
            kl += kl_diag_gaussian(enc.mu.row(i), enc.sigma.row(i)) / 2.0;
        }
        assert!((t.ll - ll).abs() < 1e-9);
        assert!((t.kl - kl).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_configs() {
        let mut rng = Rng::seeded(0);
        for bad in [
            VaeConfig {
                latent_dim: 1,
                ..small_config()
            },
            VaeConfig {
                sigma_x: 0.0,
                ..small_config()
            },
            VaeConfig {
                kl_weight: -1.0,
                ..small_config()
            },
        ] {
            assert!(matches!(VaeModel::new(bad, &mut rng), Err(Error::Config(_))));
        }
    }

    #[test]
    fn training_improves_elbo_and_sets_sigma_bar() {
        let mut rng = Rng::seeded(5);
        let mut m = VaeModel::new(small_config(), &mut rng).unwrap();
        let data = rng.uniform_tensor(&[64, 6], 0.0, 1.0);
        let before = evaluate_elbo(&m, &data, 9).unwrap().2;
        let cfg = VaeTrainConfig {
            epochs: 30,
            batch_size: 16,
            ..VaeTrainConfig::default()
        };
        let logs = train_vae(&mut m, &data, &cfg, |_| {}).unwrap();
        assert_eq!(logs.len(), 30);
        let after = evaluate_elbo(&m, &data, 9).unwrap().2;
        assert!(after > before, "{after} <= {before}");
        let sb = m.sigma_bar().unwrap();
        assert_eq!(sb.len(), 3);
        assert!(sb.iter().all(|&s| s > 0.0));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        use crate::io::checkpoint::{load_checkpoint, save_checkpoint};
        let dir = tempfile::tempdir().unwrap();
        let mut rng = Rng::seeded(8);
        let mut m = VaeModel::new(small_config(), &mut rng).unwrap();
        m.sigma_bar = Some(vec![0.1, 0.2, 1.0 / 3.0]);
        save_checkpoint(&m, dir.path(), 8).unwrap();
        let (back, manifest) = load_checkpoint::<VaeModel>(dir.path()).unwrap();
        assert_eq!(back, m);
        assert_eq!(manifest.kind, "image-vae");
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut rng = Rng::seeded(0);
        let mut m = VaeModel::new(small_config(), &mut rng).unwrap();
        let r = train_vae(&mut m, &Tensor::zeros([0, 6]), &VaeTrainConfig::default(), |_| {});
        assert!(r.is_err());
    }
}
