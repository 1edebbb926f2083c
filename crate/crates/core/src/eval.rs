//! Measurements: the independent image classifier, attribute metrics, latent
//! shift, reward satisfaction, critic contour grids, AUC and the `σ_x` sweep.

use std::fmt::Write as _;

use autodiff::{AdamConfig, Tape, Tensor};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::actors::LatentCritic;
use crate::constraints::Ratio;
use crate::error::{Error, Result};
use crate::io::checkpoint::{config_from, take_shaped, Checkpoint};
use crate::io::render::{heatmap, Raster};
use crate::nn::{one_hot, Mlp, Module, Optimizer};
use crate::rng::Rng;
use crate::vae::{evaluate_elbo, posterior_std_profile, train_vae, VaeConfig, VaeModel, VaeTrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256, 256],
            classes: 10,
            epochs: 15,
            batch_size: 100,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Pixel-space MLP classifier, trained separately from every latent model.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub config: ClassifierConfig,
    pub mlp: Mlp,
}

impl Classifier {
    pub fn new(inputs: usize, config: ClassifierConfig) -> Result<Self> {
        let mut dims = vec![inputs];
        dims.extend(&config.hidden);
        dims.push(config.classes);
        let mlp = Mlp::new(&dims, &mut Rng::seeded(config.seed))?;
        Ok(Self { config, mlp })
    }

    pub fn logits(&self, images: &Tensor) -> Result<Tensor> {
        self.mlp.eval(images)
    }

    pub fn predict(&self, images: &Tensor) -> Result<Vec<usize>> {
        let l = self.logits(images)?;
        let (n, _) = l.dims2("predict")?;
        Ok((0..n).map(|i| crate::constraints::argmax(l.row(i))).collect())
    }

    pub fn accuracy(&self, images: &Tensor, labels: &[usize]) -> Result<f64> {
        let pred = self.predict(images)?;
        if pred.len() != labels.len() {
            return Err(Error::CountMismatch {
                images: pred.len(),
                labels: labels.len(),
            });
        }
        Ok(hit_rate(&pred, labels))
    }
}

fn hit_rate(pred: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64
}

impl Module for Classifier {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.mlp.named_params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.mlp.params_mut()
    }
}

impl Checkpoint for Classifier {
    const KIND: &'static str = "classifier";

    fn config_json(&self) -> Result<Value> {
        Ok(serde_json::json!({ "inputs": self.mlp.input_dim(), "classifier": self.config }))
    }

    fn tensors(&self) -> Vec<(String, Tensor)> {
        self.named_params().into_iter().map(|(n, t)| (n, t.clone())).collect()
    }

    fn from_parts(config: &Value, take: &mut dyn FnMut(&str) -> Result<Tensor>) -> Result<Self> {
        let inputs: usize = config_from(&config["inputs"])?;
        let mut c = Classifier::new(inputs, config_from(&config["classifier"])?)?;
        let names: Vec<String> = c.named_params().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(c.params_mut()) {
            *slot = take_shaped(take, name, slot.shape())?;
        }
        Ok(c)
    }
}

/// Softmax cross-entropy training on pixels.
pub fn train_classifier(images: &Tensor, labels: &[usize], cfg: &ClassifierConfig) -> Result<Classifier> {
    let (n, d) = images.dims2("train_classifier")?;
    if n != labels.len() || n == 0 {
        return Err(Error::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    if labels.iter().any(|&l| l >= cfg.classes) {
        return Err(Error::Invalid("label out of range".into()));
    }
    let mut clf = Classifier::new(d, cfg.clone())?;
    let mut opt = Optimizer::new(AdamConfig::new(cfg.lr, 0.9, 0.999), &clf);
    let mut rng = Rng::seeded(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for idx in order.chunks(cfg.batch_size.max(1)) {
            let x = images.select_rows(idx)?;
            let y = one_hot(&idx.iter().map(|&i| labels[i]).collect::<Vec<_>>(), cfg.classes);
            let tape = Tape::new();
            let m = clf.mlp.bind(&tape);
            let loss = m
                .forward(tape.leaf(x))?
                .log_softmax()?
                .mul(tape.leaf(y))?
                .sum_cols()?
                .neg()?
                .mean()?;
            let grads = tape.gradients(loss, &m.vars())?;
            opt.step(&mut clf, &grads)?;
        }
    }
    Ok(clf)
}

/// Macro-averaged (per attribute, then mean) binary metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributeMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Rows where every bit matches.
    pub exact_match: f64,
}

/// Metrics of predicted vs target bit matrices (`[n][A]`, entries 0/1).
/// Precision (recall) of an attribute with no predicted (actual) positives
/// counts as 0; F1 is 0 unless both are positive.
pub fn attribute_metrics(pred: &[Vec<u8>], target: &[Vec<u8>]) -> Result<AttributeMetrics> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Invalid("prediction and target counts differ or are empty".into()));
    }
    let a = target[0].len();
    if pred.iter().chain(target).any(|r| r.len() != a) || a == 0 {
        return Err(Error::Invalid("ragged attribute rows".into()));
    }
    let n = pred.len() as f64;
    let (mut acc, mut prec, mut rec, mut f1) = (0.0, 0.0, 0.0, 0.0);
    for j in 0..a {
        let (mut tp, mut fp, mut fneg, mut tn) = (0.0, 0.0, 0.0, 0.0);
        for (p, t) in pred.iter().zip(target) {
            match (p[j] == 1, t[j] == 1) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fneg += 1.0,
                (false, false) => tn += 1.0,
            }
        }
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let r = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
        acc += (tp + tn) / n;
        prec += p;
        rec += r;
        f1 += if p > 0.0 && r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    let a = a as f64;
    let exact = pred.iter().zip(target).filter(|(p, t)| p == t).count() as f64 / n;
    Ok(AttributeMetrics {
        accuracy: acc / a,
        precision: prec / a,
        recall: rec / a,
        f1: f1 / a,
        exact_match: exact,
    })
}

/// One-hot rows for class indices.
pub fn class_bits(classes: &[usize], width: usize) -> Vec<Vec<u8>> {
    classes
        .iter()
        .map(|&c| (0..width).map(|j| (j == c) as u8).collect())
        .collect()
}

/// `mean_n mean_i ((z′_i − z_i) / σ̄_i)²`.
pub fn z_mse(z: &Tensor, z_prime: &Tensor, sigma_bar: &[f64]) -> Result<f64> {
    let (n, k) = z.dims2("z_mse")?;
    if z_prime.shape() != z.shape() || sigma_bar.len() != k {
        return Err(Error::Invalid("z_mse: shape mismatch".into()));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in 0..n {
        for ((a, b), s) in z.row(i).iter().zip(z_prime.row(i)).zip(sigma_bar) {
            total += ((b - a) / s).powi(2);
        }
    }
    Ok(total / (n * k) as f64)
}

/// `p/q` with the smallest `q ≤ max_den` within `tol` of `v`, by continued
/// fractions.
pub fn rational_approx(v: f64, max_den: u64, tol: f64) -> Option<(i64, u64)> {
    let (mut h0, mut h1) = (0i64, 1i64);
    let (mut k0, mut k1) = (1u64, 0u64);
    let mut x = v;
    for _ in 0..64 {
        let a = x.floor();
        let (h2, k2) = (a as i64 * h1 + h0, a as u64 * k1 + k0);
        if k2 > max_den {
            return None;
        }
        if (h2 as f64 / k2 as f64 - v).abs() <= tol {
            return Some((h2, k2));
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        let frac = x - a;
        if frac == 0.0 {
            return None;
        }
        x = 1.0 / frac;
    }
    None
}

/// Reward equal to exactly 1 once reconstructed as a small-integer ratio.
pub fn fully_satisfied(reward: f64) -> bool {
    matches!(rational_approx(reward, 1 << 16, 1e-12), Some((p, q)) if p as u64 == q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Satisfaction {
    pub mean_reward: f64,
    pub satisfaction_rate: f64,
    pub count: usize,
}

pub fn satisfaction(rewards: &[f64]) -> Satisfaction {
    let n = rewards.len();
    if n == 0 {
        return Satisfaction {
            mean_reward: 0.0,
            satisfaction_rate: 0.0,
            count: 0,
        };
    }
    Satisfaction {
        mean_reward: rewards.iter().sum::<f64>() / n as f64,
        satisfaction_rate: rewards.iter().filter(|&&r| fully_satisfied(r)).count() as f64 / n as f64,
        count: n,
    }
}

/// Same as [`satisfaction`] from exact ratios.
pub fn satisfaction_exact(rewards: &[Ratio]) -> Satisfaction {
    let values: Vec<f64> = rewards.iter().map(|r| r.value()).collect();
    let mut s = satisfaction(&values);
    if !rewards.is_empty() {
        s.satisfaction_rate = rewards.iter().filter(|r| r.is_one()).count() as f64 / rewards.len() as f64;
    }
    s
}

/// Mann-Whitney AUC that positives score above negatives (ties count half).
pub fn auc(pos: &[f64], neg: &[f64]) -> f64 {
    if pos.is_empty() || neg.is_empty() {
        return 0.5;
    }
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&v| (v, true)).chain(neg.iter().map(|&v| (v, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // average ranks over ties
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        rank_sum += avg * all[i..j].iter().filter(|e| e.1).count() as f64;
        i = j;
    }
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    (rank_sum - np * (np + 1.0) / 2.0) / (np * nn)
}

/// Mean pairwise Euclidean distance between rows.
pub fn mean_pairwise_distance(x: &Tensor) -> Result<f64> {
    let (n, _) = x.dims2("mean_pairwise_distance")?;
    if n < 2 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourGrid {
    pub dims: (usize, usize),
    pub axis: Vec<f64>,
    /// `values[r][c]` at `z_i = axis[c]`, `z_j = axis[r]`.
    pub values: Vec<Vec<f64>>,
    pub anchor: Vec<f64>,
}

impl ContourGrid {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("zi,zj,d\n");
        for (r, row) in self.values.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                let _ = writeln!(out, "{},{},{}", self.axis[c], self.axis[r], v);
            }
        }
        out
    }

    /// Value at the cell nearest the anchor.
    pub fn anchor_value(&self) -> f64 {
        let near = |x: f64| {
            (0..self.axis.len())
                .min_by(|&a, &b| (self.axis[a] - x).abs().total_cmp(&(self.axis[b] - x).abs()))
                .unwrap_or(0)
        };
        self.values[near(self.anchor[self.dims.1])][near(self.anchor[self.dims.0])]
    }

    /// Heatmap with high `j` at the top.
    pub fn render(&self, scale: usize) -> Result<Raster> {
        let flipped: Vec<Vec<f64>> = self.values.iter().rev().cloned().collect();
        heatmap(&flipped, 0.0, 1.0, scale)
    }
}

/// Critic probability over a grid in dims `(i, j)` through `anchor`; both axes
/// take absolute values spanning `range`, other dims stay at the anchor.
pub fn critic_contour_grid(
    critic: &LatentCritic,
    anchor: &[f64],
    dims: (usize, usize),
    range: (f64, f64),
    resolution: usize,
) -> Result<ContourGrid> {
    let k = critic.spec.latent_dim;
    let (i, j) = dims;
    if i == j || i >= k || j >= k || anchor.len() != k || resolution < 2 {
        return Err(Error::Invalid(format!("bad contour request: dims {dims:?} of {k}")));
    }
    let axis: Vec<f64> = (0..resolution)
        .map(|s| range.0 + (range.1 - range.0) * s as f64 / (resolution - 1) as f64)
        .collect();
    let mut rows = Vec::with_capacity(resolution * resolution);
    for &y in &axis {
        for &x in &axis {
            let mut z = anchor.to_vec();
            z[i] = x;
            z[j] = y;
            rows.push(z);
        }
    }
    let p = critic.prob(&Tensor::from_rows(&rows)?, None)?;
    let values = p.data().chunks(resolution).map(<[f64]>::to_vec).collect();
    Ok(ContourGrid {
        dims,
        axis,
        values,
        anchor: anchor.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElboRow {
    pub sigma_x: f64,
    pub sigma_x_sq: f64,
    pub ll: f64,
    pub kl: f64,
    pub elbo: f64,
    /// Sorted `σ̄_z` profile.
    pub sigma_profile: Vec<f64>,
    pub failed: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElboTable {
    pub rows: Vec<ElboRow>,
    pub argmax: Option<usize>,
}

/// One VAE per `σ_x` from the same seed; a diverged row is recorded, not fatal.
pub fn elbo_table(
    data: &Tensor,
    sigmas: &[f64],
    vae: &VaeConfig,
    train: &VaeTrainConfig,
    mut on_row: impl FnMut(&ElboRow),
) -> Result<ElboTable> {
    if sigmas.len() < 3 {
        return Err(Error::Config("the sweep needs at least three sigma_x values".into()));
    }
    let mut rows = Vec::with_capacity(sigmas.len());
    for &s in sigmas {
        let cfg = VaeConfig {
            sigma_x: s,
            ..vae.clone()
        };
        let mut model = VaeModel::new(cfg, &mut Rng::seeded(train.seed))?;
        let row = match train_vae(&mut model, data, train, |_| {}) {
            Ok(_) => {
                let (ll, kl, elbo) = evaluate_elbo(&model, data, train.seed)?;
                ElboRow {
                    sigma_x: s,
                    sigma_x_sq: s * s,
                    ll,
                    kl,
                    elbo,
                    sigma_profile: posterior_std_profile(&model, data)?,
                    failed: None,
                }
            }
            Err(Error::Divergence(msg)) => ElboRow {
                sigma_x: s,
                sigma_x_sq: s * s,
                ll: f64::NAN,
                kl: f64::NAN,
                elbo: f64::NAN,
                sigma_profile: vec![],
                failed: Some(msg),
            },
            Err(e) => return Err(e),
        };
        on_row(&row);
        rows.push(row);
    }
    let argmax = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.failed.is_none())
        .max_by(|a, b| a.1.elbo.total_cmp(&b.1.elbo))
        .map(|(i, _)| i);
    Ok(ElboTable { rows, argmax })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actors::NetSpec;
    use crate::nn::Linear;

    #[test]
    fn metrics_match_a_brute_force_count() {
        let mut rng = Rng::seeded(5);
        for _ in 0..20 {
            let (n, a) = (1 + rng.below(12), 1 + rng.below(4));
            let draw = |rng: &mut Rng| -> Vec<Vec<u8>> {
                (0..n).map(|_| (0..a).map(|_| rng.below(2) as u8).collect()).collect()
            };
            let (p, t) = (draw(&mut rng), draw(&mut rng));
            let m = attribute_metrics(&p, &t).unwrap();
            let mut acc = 0.0;
            let mut f1 = 0.0;
            for j in 0..a {
                let col = |x: &Vec<Vec<u8>>| x.iter().map(|r| r[j]).collect::<Vec<_>>();
                let (pc, tc) = (col(&p), col(&t));
                let tp = pc.iter().zip(&tc).filter(|(a, b)| **a == 1 && **b == 1).count() as f64;
                let pp = pc.iter().filter(|&&v| v == 1).count() as f64;
                let ap = tc.iter().filter(|&&v| v == 1).count() as f64;
                acc += pc.iter().zip(&tc).filter(|(a, b)| a == b).count() as f64 / n as f64;
                let pr = if pp > 0.0 { tp / pp } else { 0.0 };
                let re = if ap > 0.0 { tp / ap } else { 0.0 };
                f1 += if pr > 0.0 && re > 0.0 { 2.0 * pr * re / (pr + re) } else { 0.0 };
            }
            assert!((m.accuracy - acc / a as f64).abs() < 1e-12);
            assert!((m.f1 - f1 / a as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn one_of_each_outcome_gives_one_half() {
        let pred = vec![vec![1], vec![1], vec![0], vec![0]];
        let target = vec![vec![1], vec![0], vec![1], vec![0]];
        let m = attribute_metrics(&pred, &target).unwrap();
        assert_eq!((m.precision, m.recall, m.f1, m.accuracy), (0.5, 0.5, 0.5, 0.5));
    }

    #[test]
    fn negated_predictions_score_zero() {
        let t = vec![vec![1, 0], vec![0, 1], vec![1, 1]];
        let p: Vec<Vec<u8>> = t.iter().map(|r| r.iter().map(|b| 1 - b).collect()).collect();
        let m = attribute_metrics(&p, &t).unwrap();
        assert_eq!(m.accuracy, 0.0);
        assert_eq!(m.exact_match, 0.0);
        let same = attribute_metrics(&t, &t).unwrap();
        assert_eq!((same.accuracy, same.precision, same.recall, same.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn satisfaction_arithmetic() {
        let s = satisfaction(&[1.0, 0.5, 1.0]);
        assert!((s.mean_reward - 2.5 / 3.0).abs() < 1e-15);
        assert!((s.satisfaction_rate - 2.0 / 3.0).abs() < 1e-15);
        let all = satisfaction(&[1.0; 4]);
        assert_eq!((all.mean_reward, all.satisfaction_rate), (1.0, 1.0));
        // 1 - 1/4096 is not full satisfaction; a product that rounds to 1 is
        assert!(!fully_satisfied(1.0 - 1.0 / 4096.0));
        assert!(fully_satisfied((3.0 / 7.0) * (7.0 / 3.0)));
        let exact = satisfaction_exact(&[Ratio::ONE, Ratio { num: 3, den: 4 }]);
        assert_eq!(exact.satisfaction_rate, 0.5);
    }

    #[test]
    fn rational_approx_recovers_small_fractions() {
        assert_eq!(rational_approx(0.75, 100, 1e-12), Some((3, 4)));
        assert_eq!(rational_approx(2.0 / 7.0, 100, 1e-12), Some((2, 7)));
        assert_eq!(rational_approx(std::f64::consts::PI, 100, 1e-12), None);
    }

    #[test]
    fn z_mse_weights_and_permutes() {
        let z = Tensor::from_rows(&[[0.0, 0.0]]).unwrap();
        let zp = Tensor::from_rows(&[[1.0, 1.0]]).unwrap();
        assert_eq!(z_mse(&z, &zp, &[1.0, 0.5]).unwrap(), 2.5);
        let zs = Tensor::from_rows(&[[0.3, -1.0], [2.0, 0.1]]).unwrap();
        let zps = Tensor::from_rows(&[[0.0, 1.0], [1.0, 0.5]]).unwrap();
        let swap = |t: &Tensor| Tensor::from_rows(&[[t.row(0)[1], t.row(0)[0]], [t.row(1)[1], t.row(1)[0]]]).unwrap();
        let a = z_mse(&zs, &zps, &[0.2, 0.7]).unwrap();
        let b = z_mse(&swap(&zs), &swap(&zps), &[0.7, 0.2]).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn auc_counts_pairs() {
        assert_eq!(auc(&[2.0, 3.0], &[0.0, 1.0]), 1.0);
        assert_eq!(auc(&[0.0], &[1.0]), 0.0);
        assert_eq!(auc(&[1.0], &[1.0]), 0.5);
        assert!((auc(&[1.0, 3.0], &[2.0]) - 0.5).abs() < 1e-15);
    }

    fn radial_critic() -> LatentCritic {
        // logit = 1 − (z0² + z1²) is not linear; emulate with a ReLU pair per axis
        // |z| = relu(z) + relu(−z), logit = 1 − |z0| − |z1|
        LatentCritic {
            spec: NetSpec {
                latent_dim: 2,
                hidden: vec![4],
                label_dim: None,
                label_proj: 0,
                outputs: 1,
            },
            label_proj: None,
            mlp: Mlp::from_layers(vec![
                Linear {
                    weight: Tensor::new([2, 4], vec![1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0, -1.0]).unwrap(),
                    bias: Tensor::zeros([4]),
                },
                Linear {
                    weight: Tensor::new([4, 1], vec![-1.0; 4]).unwrap(),
                    bias: Tensor::vector(vec![1.0]),
                },
            ]),
        }
    }

    #[test]
    fn contour_grid_is_symmetric_for_a_radial_critic() {
        let g = critic_contour_grid(&radial_critic(), &[0.0, 0.0], (0, 1), (-2.0, 2.0), 9).unwrap();
        for r in 0..9 {
            for c in 0..9 {
                assert!((g.values[r][c] - g.values[c][r]).abs() < 1e-15);
                assert!((g.values[r][c] - g.values[8 - r][c]).abs() < 1e-15);
            }
        }
        assert_eq!(g.anchor_value(), g.values[4][4]);
        assert!(g.to_csv().starts_with("zi,zj,d\n-2,-2,"));
        assert_eq!(g.render(2).unwrap().width, 18);
        assert!(critic_contour_grid(&radial_critic(), &[0.0, 0.0], (1, 1), (-1.0, 1.0), 3).is_err());
    }

    #[test]
    fn constant_critic_gives_a_flat_grid() {
        let mut c = radial_critic();
        c.mlp.layers[1].weight = Tensor::zeros([4, 1]);
        let g = critic_contour_grid(&c, &[0.5, -0.5], (1, 0), (-1.0, 1.0), 5).unwrap();
        let first = g.values[0][0];
        assert!(g.values.iter().flatten().all(|&v| v == first));
    }

    #[test]
    fn classifier_learns_separable_blobs() {
        let mut rng = Rng::seeded(0);
        let n = 200;
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let rows: Vec<Vec<f64>> = labels
            .iter()
            .map(|&l| (0..4).map(|j| if j == l { 2.0 } else { 0.0 } + 0.3 * rng.normal()).collect())
            .collect();
        let x = Tensor::from_rows(&rows).unwrap();
        let cfg = ClassifierConfig {
            hidden: vec![16],
            classes: 3,
            epochs: 30,
            batch_size: 20,
            lr: 1e-2,
            seed: 0,
        };
        let clf = train_classifier(&x, &labels, &cfg).unwrap();
        assert!(clf.accuracy(&x, &labels).unwrap() > 0.95);
        let dir = tempfile::tempdir().unwrap();
        crate::io::checkpoint::save_checkpoint(&clf, dir.path(), 0).unwrap();
        let (back, _) = crate::io::checkpoint::load_checkpoint::<Classifier>(dir.path()).unwrap();
        assert_eq!(back, clf);
    }

    #[test]
    fn pairwise_distance_of_identical_rows_is_zero() {
        assert_eq!(mean_pairwise_distance(&Tensor::full([3, 2], 0.4)).unwrap(), 0.0);
        let x = Tensor::from_rows(&[[0.0, 0.0], [3.0, 4.0]]).unwrap();
        assert_eq!(mean_pairwise_distance(&x).unwrap(), 5.0);
    }
}
