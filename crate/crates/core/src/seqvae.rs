//! LSTM VAE over melody tokens.
//!
//! An LSTM encoder (optionally bidirectional) reads embedded tokens and maps
//! its final state to `q(z|m)`. A flat autoregressive LSTM decoder starts
//! from a state projected from `z` and reads `[embed(prev), z]` at each step.

use autodiff::{AdamConfig, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::io::checkpoint::{config_from, take_shaped, Checkpoint};
use crate::melody::{Melody, MelodyFormat};
use crate::nn::{BoundLinear, Linear, Module, Optimizer};
use crate::rng::Rng;
use crate::vae::{EncoderOutput, SIGMA_FLOOR};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeqVaeConfig {
    pub format: MelodyFormat,
    pub latent_dim: usize,
    pub hidden: usize,
    pub embed: usize,
    pub bidirectional: bool,
    pub kl_weight: f64,
}

impl Default for SeqVaeConfig {
    fn default() -> Self {
        Self {
            format: MelodyFormat::default(),
            latent_dim: 16,
            hidden: 64,
            embed: 32,
            bidirectional: true,
            kl_weight: 0.2,
        }
    }
}

impl SeqVaeConfig {
    pub fn validate(&self) -> Result<()> {
        self.format.validate()?;
        if self.latent_dim < 2 || self.hidden == 0 || self.embed == 0 {
            return Err(Error::Config(format!("invalid sequence VAE sizes {self:?}")));
        }
        if !(self.kl_weight >= 0.0) {
            return Err(Error::Config("kl_weight must be >= 0".into()));
        }
        Ok(())
    }
}

/// Gate order along the `4H` axis: input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Lstm {
    pub fn new(inputs: usize, hidden: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut bias = Tensor::zeros([4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(1.0);
        Self {
            weight: rng.uniform_tensor(&[inputs + hidden, 4 * hidden], -bound, bound),
            bias,
        }
    }

    pub fn hidden(&self) -> usize {
        self.bias.len() / 4
    }

    fn bind<'t>(&self, tape: &'t Tape) -> BoundLstm<'t> {
        BoundLstm {
            weight: tape.leaf(self.weight.clone()),
            bias: tape.leaf(self.bias.clone()),
            hidden: self.hidden(),
        }
    }

    /// Value-only step used for sampling.
    fn step_values(&self, x: &Tensor, h: &Tensor, c: &Tensor) -> Result<(Tensor, Tensor)> {
        let (n, hd) = h.dims2("lstm")?;
        let xin = concat_values(x, h)?;
        let g = xin.matmul(&self.weight)?;
        let b = self.bias.data();
        let g = g.data();
        let mut h2 = vec![0.0; n * hd];
        let mut c2 = vec![0.0; n * hd];
        for r in 0..n {
            let row = &g[r * 4 * hd..(r + 1) * 4 * hd];
            for j in 0..hd {
                let i = crate::nn::sigmoid(row[j] + b[j]);
                let f = crate::nn::sigmoid(row[hd + j] + b[hd + j]);
                let u = (row[2 * hd + j] + b[2 * hd + j]).tanh();
                let o = crate::nn::sigmoid(row[3 * hd + j] + b[3 * hd + j]);
                let cv = f * c.data()[r * hd + j] + i * u;
                c2[r * hd + j] = cv;
                h2[r * hd + j] = o * cv.tanh();
            }
        }
        Ok((Tensor::new([n, hd], h2)?, Tensor::new([n, hd], c2)?))
    }
}

fn concat_values(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, da) = a.dims2("concat")?;
    let (_, db) = b.dims2("concat")?;
    let mut out = Vec::with_capacity(n * (da + db));
    for r in 0..n {
        out.extend_from_slice(a.row(r));
        out.extend_from_slice(b.row(r));
    }
    Ok(Tensor::new([n, da + db], out)?)
}

#[derive(Clone, Copy)]
struct BoundLstm<'t> {
    weight: Var<'t>,
    bias: Var<'t>,
    hidden: usize,
}

impl<'t> BoundLstm<'t> {
    fn step(&self, x: Var<'t>, h: Var<'t>, c: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let hd = self.hidden;
        let g = x.concat_cols(h)?.matmul(self.weight)?.add_row(self.bias)?;
        let i = g.narrow_cols(0, hd)?.sigmoid()?;
        let f = g.narrow_cols(hd, hd)?.sigmoid()?;
        let u = g.narrow_cols(2 * hd, hd)?.tanh()?;
        let o = g.narrow_cols(3 * hd, hd)?.sigmoid()?;
        let c2 = f.mul(c)?.add(i.mul(u)?)?;
        let h2 = o.mul(c2.tanh()?)?;
        Ok((h2, c2))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeqVaeModel {
    pub config: SeqVaeConfig,
    pub embedding: Tensor,
    pub enc_fwd: Lstm,
    pub enc_bwd: Option<Lstm>,
    pub latent: Linear,
    pub dec_init: Linear,
    pub decoder: Lstm,
    pub output: Linear,
    pub sigma_bar: Option<Vec<f64>>,
}

/// One-hot rows for step `t` of every melody; `None` gives the all-zero
/// start symbol.
fn onehot_step(batch: &[&Melody], t: Option<usize>, vocab: usize) -> Tensor {
    let mut x = Tensor::zeros([batch.len(), vocab]);
    if let Some(t) = t {
        for (r, m) in batch.iter().enumerate() {
            x.data_mut()[r * vocab + m.tokens[t] as usize] = 1.0;
        }
    }
    x
}

impl SeqVaeModel {
    pub fn new(config: SeqVaeConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (v, e, h, k) = (
            config.format.vocab,
            config.embed,
            config.hidden,
            config.latent_dim,
        );
        let enc_width = if config.bidirectional { 2 * h } else { h };
        Ok(Self {
            embedding: rng.uniform_tensor(&[v, e], -0.5, 0.5),
            enc_fwd: Lstm::new(e, h, rng),
            enc_bwd: config.bidirectional.then(|| Lstm::new(e, h, rng)),
            latent: Linear::zeros(enc_width, 2 * k),
            dec_init: Linear::new(k, 2 * h, rng),
            decoder: Lstm::new(e + k, h, rng),
            output: Linear::new(h, v, rng),
            sigma_bar: None,
            config,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn format(&self) -> &MelodyFormat {
        &self.config.format
    }

    fn check_batch(&self, batch: &[&Melody]) -> Result<()> {
        let f = &self.config.format;
        for m in batch {
            if m.len() != f.length {
                return Err(Error::Invalid(format!(
                    "melody length {} but model expects T={}",
                    m.len(),
                    f.length
                )));
            }
            if let Some(&t) = m.tokens.iter().find(|&&t| t as usize >= f.vocab) {
                return Err(Error::Invalid(format!("token {t} out of range for V={}", f.vocab)));
            }
        }
        Ok(())
    }

    fn bind<'t>(&'t self, tape: &'t Tape) -> BoundSeqVae<'t> {
        BoundSeqVae {
            model: self,
            embedding: tape.leaf(self.embedding.clone()),
            enc_fwd: self.enc_fwd.bind(tape),
            enc_bwd: self.enc_bwd.as_ref().map(|l| l.bind(tape)),
            latent: self.latent.bind(tape),
            dec_init: self.dec_init.bind(tape),
            decoder: self.decoder.bind(tape),
            output: self.output.bind(tape),
        }
    }

    /// `q(z|m)` for a batch; deterministic.
    pub fn encode(&self, melodies: &[Melody]) -> Result<EncoderOutput> {
        let batch: Vec<&Melody> = melodies.iter().collect();
        self.check_batch(&batch)?;
        let mut mus = Vec::new();
        let mut sigmas = Vec::new();
        for chunk in batch.chunks(512) {
            let tape = Tape::new();
            let (mu, sigma) = self.bind(&tape).encode(chunk)?;
            mus.push(mu.value().as_ref().clone());
            sigmas.push(sigma.value().as_ref().clone());
        }
        Ok(EncoderOutput {
            mu: Tensor::vstack(&mus.iter().collect::<Vec<_>>())?,
            sigma: Tensor::vstack(&sigmas.iter().collect::<Vec<_>>())?,
        })
    }

    fn initial_state(&self, z: &Tensor) -> Result<(Tensor, Tensor)> {
        let h = self.config.hidden;
        let s = z.matmul(&self.dec_init.weight)?;
        let (n, _) = s.dims2("dec_init")?;
        let b = self.dec_init.bias.data();
        let mut h0 = Vec::with_capacity(n * h);
        let mut c0 = Vec::with_capacity(n * h);
        for r in 0..n {
            let row = s.row(r);
            h0.extend((0..h).map(|j| (row[j] + b[j]).tanh()));
            c0.extend((h..2 * h).map(|j| (row[j] + b[j]).tanh()));
        }
        Ok((Tensor::new([n, h], h0)?, Tensor::new([n, h], c0)?))
    }

    fn step_logits(&self, prev: &[Option<u8>], z: &Tensor, h: &Tensor, c: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let v = self.config.format.vocab;
        let mut onehot = Tensor::zeros([prev.len(), v]);
        for (r, p) in prev.iter().enumerate() {
            if let Some(t) = p {
                onehot.data_mut()[r * v + *t as usize] = 1.0;
            }
        }
        let x = concat_values(&onehot.matmul(&self.embedding)?, z)?;
        let (h2, c2) = self.decoder.step_values(&x, h, c)?;
        let mut logits = h2.matmul(&self.output.weight)?;
        let bias = self.output.bias.data();
        for (i, l) in logits.data_mut().iter_mut().enumerate() {
            *l += bias[i % v];
        }
        Ok((logits, h2, c2))
    }

    /// Next-token distribution at temperature `temperature` after `prefix`.
    pub fn next_token_probs(&self, z: &[f64], prefix: &[u8], temperature: f64) -> Result<Vec<f64>> {
        let z = Tensor::new([1, z.len()], z.to_vec())?;
        let (mut h, mut c) = self.initial_state(&z)?;
        let mut prev = None;
        let mut logits = None;
        for step in 0..=prefix.len() {
            let (l, h2, c2) = self.step_logits(&[prev], &z, &h, &c)?;
            (h, c) = (h2, c2);
            logits = Some(l);
            prev = prefix.get(step).copied();
        }
        Ok(softmax(logits.expect("at least one step").row(0), temperature))
    }

    /// Autoregressive sampling, one melody per row of `z`. Row `i` draws from
    /// stream `i` of `seed`, so it does not depend on the rest of the batch.
    pub fn decode_sample(&self, z: &Tensor, temperature: f64, seed: u64) -> Result<Vec<Melody>> {
        if !(temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be > 0, got {temperature}")));
        }
        let (n, k) = z.dims2("decode_sample")?;
        if k != self.config.latent_dim {
            return Err(Error::Invalid(format!(
                "z has {k} dims, model expects {}",
                self.config.latent_dim
            )));
        }
        let mut rngs: Vec<Rng> = (0..n as u64).map(|i| Rng::stream(seed, i)).collect();
        let (mut h, mut c) = self.initial_state(z)?;
        let mut prev: Vec<Option<u8>> = vec![None; n];
        let mut tokens = vec![Vec::with_capacity(self.config.format.length); n];
        for _ in 0..self.config.format.length {
            let (logits, h2, c2) = self.step_logits(&prev, z, &h, &c)?;
            (h, c) = (h2, c2);
            for r in 0..n {
                let p = softmax(logits.row(r), temperature);
                let t = rngs[r].categorical(&p) as u8;
                tokens[r].push(t);
                prev[r] = Some(t);
            }
        }
        Ok(tokens.into_iter().map(|tokens| Melody { tokens }).collect())
    }

    /// Argmax decoding.
    pub fn decode_greedy(&self, z: &Tensor) -> Result<Vec<Melody>> {
        let (n, _) = z.dims2("decode_greedy")?;
        let (mut h, mut c) = self.initial_state(z)?;
        let mut prev: Vec<Option<u8>> = vec![None; n];
        let mut tokens = vec![Vec::new(); n];
        for _ in 0..self.config.format.length {
            let (logits, h2, c2) = self.step_logits(&prev, z, &h, &c)?;
            (h, c) = (h2, c2);
            for r in 0..n {
                let t = argmax(logits.row(r)) as u8;
                tokens[r].push(t);
                prev[r] = Some(t);
            }
        }
        Ok(tokens.into_iter().map(|tokens| Melody { tokens }).collect())
    }

    /// Teacher-forced per-example `(cross-entropy, token accuracy)` at `z`.
    pub fn teacher_forced(&self, melodies: &[Melody], z: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
        let batch: Vec<&Melody> = melodies.iter().collect();
        self.check_batch(&batch)?;
        let tape = Tape::new();
        let b = self.bind(&tape);
        let (ce, correct) = b.reconstruction(&batch, tape.leaf(z.clone()), None)?;
        let t = self.config.format.length as f64;
        Ok((
            ce.value().data().to_vec(),
            correct.iter().map(|&c| c as f64 / t).collect(),
        ))
    }

    pub fn sigma_bar(&self) -> Result<&[f64]> {
        self.sigma_bar
            .as_deref()
            .ok_or_else(|| Error::Invalid("sequence VAE has no sigma_bar; train it first".into()))
    }
}

/// `softmax(l / temperature)`, computed from a shifted log-sum-exp.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| ((l - m) / temperature).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

impl Module for SeqVaeModel {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("embedding".to_string(), &self.embedding),
            ("enc_fwd.weight".to_string(), &self.enc_fwd.weight),
            ("enc_fwd.bias".to_string(), &self.enc_fwd.bias),
        ];
        if let Some(l) = &self.enc_bwd {
            out.push(("enc_bwd.weight".into(), &l.weight));
            out.push(("enc_bwd.bias".into(), &l.bias));
        }
        for (name, l) in [
            ("latent", &self.latent),
            ("dec_init", &self.dec_init),
        ] {
            out.push((format!("{name}.weight"), &l.weight));
            out.push((format!("{name}.bias"), &l.bias));
        }
        out.push(("decoder.weight".into(), &self.decoder.weight));
        out.push(("decoder.bias".into(), &self.decoder.bias));
        out.push(("output.weight".into(), &self.output.weight));
        out.push(("output.bias".into(), &self.output.bias));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![
            &mut self.embedding,
            &mut self.enc_fwd.weight,
            &mut self.enc_fwd.bias,
        ];
        if let Some(l) = &mut self.enc_bwd {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.latent.weight);
        out.push(&mut self.latent.bias);
        out.push(&mut self.dec_init.weight);
        out.push(&mut self.dec_init.bias);
        out.push(&mut self.decoder.weight);
        out.push(&mut self.decoder.bias);
        out.push(&mut self.output.weight);
        out.push(&mut self.output.bias);
        out
    }
}

impl Checkpoint for SeqVaeModel {
    const KIND: &'static str = "seq-vae";

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
        let mut model = SeqVaeModel::new(config_from(config)?, &mut Rng::seeded(0))?;
        let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(model.params_mut()) {
            *slot = take_shaped(take, name, slot.shape())?;
        }
        model.sigma_bar = take("sigma_bar").ok().map(Tensor::into_data);
        Ok(model)
    }
}

struct BoundSeqVae<'t> {
    model: &'t SeqVaeModel,
    embedding: Var<'t>,
    enc_fwd: BoundLstm<'t>,
    enc_bwd: Option<BoundLstm<'t>>,
    latent: BoundLinear<'t>,
    dec_init: BoundLinear<'t>,
    decoder: BoundLstm<'t>,
    output: BoundLinear<'t>,
}

impl<'t> BoundSeqVae<'t> {
    fn vars(&self) -> Vec<Var<'t>> {
        let mut out = vec![self.embedding, self.enc_fwd.weight, self.enc_fwd.bias];
        if let Some(l) = &self.enc_bwd {
            out.extend([l.weight, l.bias]);
        }
        out.extend([
            self.latent.weight,
            self.latent.bias,
            self.dec_init.weight,
            self.dec_init.bias,
            self.decoder.weight,
            self.decoder.bias,
            self.output.weight,
            self.output.bias,
        ]);
        out
    }

    fn tape(&self) -> &'t Tape {
        self.embedding.tape()
    }

    fn run_encoder(&self, lstm: BoundLstm<'t>, batch: &[&Melody], reverse: bool) -> Result<Var<'t>> {
        let cfg = &self.model.config;
        let tape = self.tape();
        let mut h = tape.leaf(Tensor::zeros([batch.len(), cfg.hidden]));
        let mut c = h;
        for s in 0..cfg.format.length {
            let t = if reverse { cfg.format.length - 1 - s } else { s };
            let x = tape
                .leaf(onehot_step(batch, Some(t), cfg.format.vocab))
                .matmul(self.embedding)?;
            (h, c) = lstm.step(x, h, c)?;
        }
        Ok(h)
    }

    fn encode(&self, batch: &[&Melody]) -> Result<(Var<'t>, Var<'t>)> {
        let mut h = self.run_encoder(self.enc_fwd, batch, false)?;
        if let Some(b) = self.enc_bwd {
            h = h.concat_cols(self.run_encoder(b, batch, true)?)?;
        }
        let out = self.latent.forward(h)?;
        let k = self.model.config.latent_dim;
        let mu = out.narrow_cols(0, k)?;
        let sigma = out.narrow_cols(k, k)?.softplus()?.clamp_min(SIGMA_FLOOR)?;
        Ok((mu, sigma))
    }

    /// Per-example teacher-forced cross-entropy `[n]` and correct-token counts.
    /// `dropout` zeroes previous-token inputs with the given mask probability.
    fn reconstruction(
        &self,
        batch: &[&Melody],
        z: Var<'t>,
        mut dropout: Option<(&mut Rng, f64)>,
    ) -> Result<(Var<'t>, Vec<usize>)> {
        let cfg = &self.model.config;
        let (hd, v) = (cfg.hidden, cfg.format.vocab);
        let tape = self.tape();
        let init = self.dec_init.forward(z)?.tanh()?;
        let mut h = init.narrow_cols(0, hd)?;
        let mut c = init.narrow_cols(hd, hd)?;
        let mut ce: Option<Var<'t>> = None;
        let mut correct = vec![0usize; batch.len()];
        for t in 0..cfg.format.length {
            let mut prev = onehot_step(batch, t.checked_sub(1), v);
            if let Some((rng, p)) = dropout.as_mut() {
                for r in 0..batch.len() {
                    if rng.bernoulli(*p) {
                        prev.data_mut()[r * v..(r + 1) * v].fill(0.0);
                    }
                }
            }
            let x = tape.leaf(prev).matmul(self.embedding)?.concat_cols(z)?;
            (h, c) = self.decoder.step(x, h, c)?;
            let logits = self.output.forward(h)?;
            let target = onehot_step(batch, Some(t), v);
            let lv = logits.value();
            for (r, m) in batch.iter().enumerate() {
                if argmax(lv.row(r)) == m.tokens[t] as usize {
                    correct[r] += 1;
                }
            }
            let nll = logits.log_softmax()?.mul(tape.leaf(target))?.sum_cols()?.neg()?;
            ce = Some(match ce {
                None => nll,
                Some(acc) => acc.add(nll)?,
            });
        }
        Ok((ce.expect("T > 0"), correct))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeqTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Epochs over which the KL weight ramps linearly up to `kl_weight`.
    pub kl_warmup_epochs: usize,
    /// Probability of hiding the previous token from the decoder.
    pub input_dropout: f64,
    /// Per-dimension floor (nats) on the batch-mean KL term.
    pub free_bits: f64,
    /// Global gradient-norm ceiling; `0` disables clipping.
    pub clip_norm: f64,
    /// Learning-rate factor applied after every epoch.
    pub lr_decay: f64,
}

impl Default for SeqTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            lr: 1e-2,
            seed: 0,
            kl_warmup_epochs: 3,
            input_dropout: 0.3,
            free_bits: 0.25,
            clip_norm: 5.0,
            lr_decay: 0.93,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqEpochLog {
    pub epoch: usize,
    /// Mean per-melody cross-entropy (nats).
    pub ce: f64,
    pub kl: f64,
    /// Teacher-forced token accuracy.
    pub accuracy: f64,
}

/// Teacher-forced reconstruction cross-entropy plus weighted KL, averaged over
/// melodies; fills `sigma_bar` when done.
pub fn seq_train(
    model: &mut SeqVaeModel,
    corpus: &[Melody],
    cfg: &SeqTrainConfig,
    mut on_epoch: impl FnMut(&SeqEpochLog),
) -> Result<Vec<SeqEpochLog>> {
    if corpus.is_empty() {
        return Err(Error::Invalid("seq_train: empty corpus".into()));
    }
    model.check_batch(&corpus.iter().collect::<Vec<_>>())?;
    let mut rng = Rng::seeded(cfg.seed);
    let mut opt = Optimizer::new(AdamConfig::new(cfg.lr, 0.9, 0.999), model);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let k = model.latent_dim();
    let t_len = model.config.format.length as f64;
    let mut logs = Vec::new();
    for epoch in 0..cfg.epochs {
        let warm = if cfg.kl_warmup_epochs == 0 {
            1.0
        } else {
            ((epoch + 1) as f64 / cfg.kl_warmup_epochs as f64).min(1.0)
        };
        let beta = model.config.kl_weight * warm;
        rng.shuffle(&mut order);
        let (mut ce_sum, mut kl_sum, mut correct) = (0.0, 0.0, 0usize);
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Melody> = idx.iter().map(|&i| &corpus[i]).collect();
            let noise = rng.normal_tensor(&[batch.len(), k]);
            let tape = Tape::new();
            let b = model.bind(&tape);
            let step = (|| -> Result<_> {
                let (mu, sigma) = b.encode(&batch)?;
                let z = mu.add(sigma.mul(tape.leaf(noise))?)?;
                let (ce, corr) = b.reconstruction(&batch, z, Some((&mut rng, cfg.input_dropout)))?;
                let ce = ce.mean()?;
                let kl_dims = mu
                    .square()?
                    .add(sigma.square()?)?
                    .add_scalar(-1.0)?
                    .sub(sigma.log()?.scale(2.0)?)?
                    .sum_rows()?
                    .scale(0.5 / batch.len() as f64)?;
                let kl = kl_dims.sum()?;
                let penalty = if cfg.free_bits > 0.0 {
                    kl_dims.clamp_min(cfg.free_bits)?.sum()?
                } else {
                    kl
                };
                let loss = ce.add(penalty.scale(beta)?)?;
                let grads = tape.gradients(loss, &b.vars())?;
                Ok((grads, ce.item()?, kl.item()?, corr))
            })();
            let (grads, ce, kl, corr) = match step {
                Ok(v) => v,
                Err(Error::Tensor(e @ autodiff::Error::NonFinite { .. })) => {
                    return Err(Error::Divergence(format!("sequence VAE epoch {epoch} batch {bi}: {e}")))
                }
                Err(e) => return Err(e),
            };
            let mut grads = grads;
            crate::nn::clip_grad_norm(&mut grads, cfg.clip_norm);
            ce_sum += ce * batch.len() as f64;
            kl_sum += kl * batch.len() as f64;
            correct += corr.iter().sum::<usize>();
            opt.step(model, &grads)?;
        }
        let n = corpus.len() as f64;
        let log = SeqEpochLog {
            epoch,
            ce: ce_sum / n,
            kl: kl_sum / n,
            accuracy: correct as f64 / (n * t_len),
        };
        on_epoch(&log);
        logs.push(log);
        opt.set_lr(cfg.lr * cfg.lr_decay.powi(epoch as i32 + 1));
    }
    let enc = model.encode(corpus)?;
    let (n, k) = enc.sigma.dims2("sigma_bar")?;
    let mut sb = vec![0.0; k];
    for i in 0..n {
        sb.iter_mut().zip(enc.sigma.row(i)).for_each(|(s, &v)| *s += v / n as f64);
    }
    model.sigma_bar = Some(sb);
    Ok(logs)
}

/// Mean teacher-forced token accuracy when decoding from `μ(m)`.
pub fn reconstruction_accuracy(model: &SeqVaeModel, melodies: &[Melody]) -> Result<f64> {
    let mu = model.encode(melodies)?.mu;
    let mut total = 0.0;
    for (chunk, start) in melodies.chunks(512).zip((0..).step_by(512)) {
        let z = mu.slice_rows(start, chunk.len())?;
        total += model.teacher_forced(chunk, &z)?.1.iter().sum::<f64>();
    }
    Ok(total / melodies.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::checkpoint::{load_checkpoint, save_checkpoint};
    use crate::melody::{generate_corpus, CorpusConfig};

    fn tiny() -> SeqVaeConfig {
        SeqVaeConfig {
            format: MelodyFormat {
                vocab: 6,
                length: 5,
                pitch_base: 60,
            },
            latent_dim: 3,
            hidden: 8,
            embed: 4,
            bidirectional: false,
            kl_weight: 1.0,
        }
    }

    fn melodies(n: usize, seed: u64) -> Vec<Melody> {
        let mut rng = Rng::seeded(seed);
        (0..n)
            .map(|_| Melody {
                tokens: (0..5).map(|_| rng.below(6) as u8).collect(),
            })
            .collect()
    }

    #[test]
    fn untrained_encoder_sigma_positive_and_batch_equivariant() {
        let mut rng = Rng::seeded(0);
        let mut m = SeqVaeModel::new(tiny(), &mut rng).unwrap();
        // give the latent head non-zero weights
        m.latent = Linear::new(8, 6, &mut rng);
        let ms = melodies(4, 1);
        let enc = m.encode(&ms).unwrap();
        assert!(enc.sigma.data().iter().all(|&s| s > 0.0));
        let rev: Vec<Melody> = ms.iter().rev().cloned().collect();
        let enc_rev = m.encode(&rev).unwrap();
        for i in 0..4 {
            assert_eq!(enc.mu.row(i), enc_rev.mu.row(3 - i));
            assert_eq!(enc.sigma.row(i), enc_rev.sigma.row(3 - i));
        }
    }

    #[test]
    fn rejects_bad_tokens_and_temperature() {
        let m = SeqVaeModel::new(tiny(), &mut Rng::seeded(0)).unwrap();
        let bad = Melody {
            tokens: vec![0, 1, 6, 2, 3],
        };
        assert!(m.encode(&[bad]).is_err());
        assert!(m.decode_sample(&Tensor::zeros([1, 3]), 0.0, 0).is_err());
    }

    #[test]
    fn teacher_forced_ce_is_sum_of_stepwise_ce() {
        let mut rng = Rng::seeded(2);
        let m = SeqVaeModel::new(tiny(), &mut rng).unwrap();
        let ms = melodies(3, 4);
        let z = rng.normal_tensor(&[3, 3]);
        let (ce, _) = m.teacher_forced(&ms, &z).unwrap();
        for (i, mel) in ms.iter().enumerate() {
            let zi = z.row(i);
            let mut stepwise = 0.0;
            for t in 0..5 {
                let p = m.next_token_probs(zi, &mel.tokens[..t], 1.0).unwrap();
                stepwise -= p[mel.tokens[t] as usize].ln();
            }
            assert!((ce[i] - stepwise).abs() < 1e-12 * stepwise.abs().max(1.0), "{} vs {stepwise}", ce[i]);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_greedy_at_low_temperature() {
        let mut rng = Rng::seeded(3);
        let m = SeqVaeModel::new(tiny(), &mut rng).unwrap();
        let z = rng.normal_tensor(&[4, 3]).map(|v| 3.0 * v);
        let a = m.decode_sample(&z, 1.0, 11).unwrap();
        assert_eq!(a, m.decode_sample(&z, 1.0, 11).unwrap());
        let cold = m.decode_sample(&z, 1e-4, 5).unwrap();
        assert_eq!(cold, m.decode_greedy(&z).unwrap());
        // row results do not depend on the rest of the batch
        let first = m.decode_sample(&z.slice_rows(0, 1).unwrap(), 1.0, 11).unwrap();
        assert_eq!(first[0], a[0]);
    }

    #[test]
    fn first_step_frequencies_match_softmax() {
        let mut rng = Rng::seeded(4);
        let m = SeqVaeModel::new(tiny(), &mut rng).unwrap();
        let zrow = [0.3, -0.7, 1.1];
        let n = 10_000;
        let z = Tensor::new([n, 3], zrow.repeat(n)).unwrap();
        let p = m.next_token_probs(&zrow, &[], 1.0).unwrap();
        let draws = m.decode_sample(&z, 1.0, 99).unwrap();
        for (v, &pv) in p.iter().enumerate() {
            let count = draws.iter().filter(|d| d.tokens[0] as usize == v).count() as f64;
            let sd = (n as f64 * pv * (1.0 - pv)).sqrt();
            assert!((count - n as f64 * pv).abs() <= 3.0 * sd + 1.0, "token {v}: {count} vs {}", n as f64 * pv);
        }
    }

    #[test]
    fn training_learns_corpus_and_records_sigma_bar() {
        let cfg = SeqVaeConfig {
            format: MelodyFormat {
                vocab: 16,
                length: 16,
                pitch_base: 60,
            },
            hidden: 32,
            embed: 8,
            latent_dim: 4,
            ..SeqVaeConfig::default()
        };
        let corpus = generate_corpus(&CorpusConfig {
            count: 200,
            format: cfg.format,
            ..CorpusConfig::default()
        })
        .unwrap();
        let mut m = SeqVaeModel::new(cfg, &mut Rng::seeded(0)).unwrap();
        let before = reconstruction_accuracy(&m, &corpus).unwrap();
        let tc = SeqTrainConfig {
            epochs: 8,
            batch_size: 32,
            lr: 3e-3,
            ..SeqTrainConfig::default()
        };
        let logs = seq_train(&mut m, &corpus, &tc, |_| {}).unwrap();
        assert!(logs.last().unwrap().kl > 0.0);
        assert!(logs.last().unwrap().ce < logs[0].ce);
        let after = reconstruction_accuracy(&m, &corpus).unwrap();
        assert!(after > before, "{after} <= {before}");
        assert_eq!(m.sigma_bar().unwrap().len(), 4);
    }

    #[test]
    fn bidirectional_checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SeqVaeConfig {
            bidirectional: true,
            ..tiny()
        };
        let m = SeqVaeModel::new(cfg, &mut Rng::seeded(6)).unwrap();
        let mut m = m;
        m.sigma_bar = Some(vec![0.5, 0.25, 1.0]);
        save_checkpoint(&m, dir.path(), 6).unwrap();
        let (back, _) = load_checkpoint::<SeqVaeModel>(dir.path()).unwrap();
        assert_eq!(back, m);
    }
}
