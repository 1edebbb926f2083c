//! Task driver behind the `latcon` binary: experiment config, artifact layout
//! under `out_dir`, dependency checks between tasks and metrics files.
//!
//! Every task writes `metrics/<task>.json` stamped with the crate version, the
//! seed and a digest of the config (paths excluded), so reruns with the same
//! seed produce identical bytes.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use autodiff::Tensor;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::actors::{apply_actor, train_realism_pair, GOptConfig, GanTrainConfig, LatentActor, LatentCritic, LatentData};
use crate::constraints::{
    conditional_latents, optimize_latents, train_attribute_critic, transform_identity, zero_shot_train,
    AttrCriticConfig, RewardSpec, SampleMode, StopReason, TransformConfig, ZeroShotConfig,
};
use crate::error::{Error, Result};
use crate::eval::{
    attribute_metrics, auc, class_bits, critic_contour_grid, elbo_table, mean_pairwise_distance, satisfaction_exact,
    train_classifier, z_mse, Classifier, ClassifierConfig,
};
use crate::io::checkpoint::{config_digest, load_checkpoint, save_checkpoint, Checkpoint, MANIFEST_FILE, VERSION};
use crate::io::mnist::{load_mnist_dir, Dataset};
use crate::io::render::{image_grid, pianoroll_grid};
use crate::melody::{generate_corpus, read_corpus, write_corpus, CorpusConfig, Melody, PitchSet};
use crate::nn::one_hot;
use crate::rng::Rng;
use crate::seqvae::{reconstruction_accuracy, seq_train, SeqTrainConfig, SeqVaeConfig, SeqVaeModel};
use crate::vae::{evaluate_elbo, train_vae, VaeConfig, VaeModel, VaeTrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    TrainVae,
    ElboSweep,
    TrainRealism,
    Contour,
    TrainCgan,
    TrainAttrCritic,
    Sample,
    Transform,
    GenCorpus,
    TrainSeqvae,
    ZeroShot,
    Evaluate,
}

impl Task {
    /// Every task in dependency order.
    pub const ALL: [Task; 12] = [
        Task::TrainVae,
        Task::ElboSweep,
        Task::TrainRealism,
        Task::Contour,
        Task::TrainCgan,
        Task::TrainAttrCritic,
        Task::Sample,
        Task::Transform,
        Task::GenCorpus,
        Task::TrainSeqvae,
        Task::ZeroShot,
        Task::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::TrainVae => "train-vae",
            Task::ElboSweep => "elbo-sweep",
            Task::TrainRealism => "train-realism",
            Task::Contour => "contour",
            Task::TrainCgan => "train-cgan",
            Task::TrainAttrCritic => "train-attr-critic",
            Task::Sample => "sample",
            Task::Transform => "transform",
            Task::GenCorpus => "gen-corpus",
            Task::TrainSeqvae => "train-seqvae",
            Task::ZeroShot => "zero-shot",
            Task::Evaluate => "evaluate",
        }
    }

    /// Small per-task offset mixed into the experiment seed.
    fn stream(self) -> u64 {
        Task::ALL.iter().position(|&t| t == self).unwrap_or(0) as u64 * 1000
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub sigmas: Vec<f64>,
    pub epochs: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sigmas: vec![1.0, 0.3, 0.1, 0.03],
            epochs: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContourConfig {
    pub range: (f64, f64),
    pub resolution: usize,
    /// Held-out encodings whose own grid cell is checked.
    pub anchors: usize,
}

impl Default for ContourConfig {
    fn default() -> Self {
        Self {
            range: (-3.0, 3.0),
            resolution: 41,
            anchors: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub count: usize,
    /// Leading samples also drawn in optimize mode.
    pub parity_count: usize,
    pub g_opt: GOptConfig,
    pub realism_weight: f64,
    pub attr_weight: f64,
    /// Per-class spread below this share of the real-data spread raises the
    /// diversity alarm.
    pub diversity_fraction: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            count: 1000,
            parity_count: 200,
            g_opt: GOptConfig::default(),
            realism_weight: 0.1,
            attr_weight: 1.0,
            diversity_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformTaskConfig {
    pub count: usize,
    pub transform: TransformConfig,
}

impl Default for TransformTaskConfig {
    fn default() -> Self {
        Self {
            count: 200,
            transform: TransformConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZeroShotTaskConfig {
    pub train: ZeroShotConfig,
    pub eval_count: usize,
    /// Density target as a quantile of the corpus note-on counts.
    pub density_quantile: f64,
}

impl Default for ZeroShotTaskConfig {
    fn default() -> Self {
        Self {
            train: ZeroShotConfig::default(),
            eval_count: 1000,
            density_quantile: 0.75,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub mnist_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Cap on digits loaded; `None` loads the whole file.
    pub limit: Option<usize>,
    /// Digits held out from every model (taken from the end).
    pub holdout: usize,
    pub vae: VaeConfig,
    pub vae_train: VaeTrainConfig,
    pub sweep: SweepConfig,
    pub realism: GanTrainConfig,
    pub contour: ContourConfig,
    pub cgan: GanTrainConfig,
    pub attr_critic: AttrCriticConfig,
    pub classifier: ClassifierConfig,
    pub sample: SampleConfig,
    pub transform: TransformTaskConfig,
    pub corpus: CorpusConfig,
    pub seqvae: SeqVaeConfig,
    pub seq_train: SeqTrainConfig,
    pub seq_holdout: usize,
    pub zero_shot: ZeroShotTaskConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mnist_dir: PathBuf::from("data/mnist"),
            out_dir: PathBuf::from("out"),
            limit: None,
            holdout: 1000,
            vae: VaeConfig::default(),
            vae_train: VaeTrainConfig::default(),
            sweep: SweepConfig::default(),
            realism: GanTrainConfig {
                iterations: 400,
                ..GanTrainConfig::default()
            },
            contour: ContourConfig::default(),
            cgan: GanTrainConfig {
                lambda_dist: 0.0,
                batch: 64,
                iterations: 1000,
                mismatch_weight: 1.0,
                actor_hidden: Some(vec![512, 512, 512]),
                ..GanTrainConfig::default()
            },
            attr_critic: AttrCriticConfig::default(),
            classifier: ClassifierConfig::default(),
            sample: SampleConfig::default(),
            transform: TransformTaskConfig::default(),
            corpus: CorpusConfig::default(),
            seqvae: SeqVaeConfig::default(),
            seq_train: SeqTrainConfig::default(),
            seq_holdout: 300,
            zero_shot: ZeroShotTaskConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// A minutes-scale configuration over the bundled 512-digit fixture, for
    /// smoke runs and determinism checks.
    pub fn smoke(mnist_dir: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        let gan = GanTrainConfig {
            iterations: 20,
            d_steps_per_g_step: 2,
            batch: 32,
            hidden: vec![32, 32],
            ..GanTrainConfig::default()
        };
        Self {
            mnist_dir: mnist_dir.into(),
            out_dir: out_dir.into(),
            holdout: 112,
            vae: VaeConfig {
                hidden_dims: vec![64],
                ..VaeConfig::default()
            },
            vae_train: VaeTrainConfig {
                epochs: 2,
                ..VaeTrainConfig::default()
            },
            sweep: SweepConfig {
                sigmas: vec![1.0, 0.3, 0.1],
                epochs: 1,
            },
            realism: gan.clone(),
            contour: ContourConfig {
                resolution: 9,
                anchors: 10,
                ..ContourConfig::default()
            },
            cgan: gan.clone(),
            attr_critic: AttrCriticConfig {
                hidden: vec![32],
                iterations: 50,
                ..AttrCriticConfig::default()
            },
            classifier: ClassifierConfig {
                hidden: vec![32],
                epochs: 2,
                ..ClassifierConfig::default()
            },
            sample: SampleConfig {
                count: 40,
                parity_count: 20,
                g_opt: GOptConfig {
                    steps: 5,
                    ..GOptConfig::default()
                },
                ..SampleConfig::default()
            },
            transform: TransformTaskConfig {
                count: 20,
                transform: TransformConfig {
                    max_steps: 20,
                    ..TransformConfig::default()
                },
            },
            corpus: CorpusConfig {
                count: 120,
                ..CorpusConfig::default()
            },
            seqvae: SeqVaeConfig {
                hidden: 16,
                embed: 8,
                ..SeqVaeConfig::default()
            },
            seq_train: SeqTrainConfig {
                epochs: 1,
                ..SeqTrainConfig::default()
            },
            seq_holdout: 20,
            zero_shot: ZeroShotTaskConfig {
                train: ZeroShotConfig {
                    gan: GanTrainConfig {
                        iterations: 5,
                        batch: 16,
                        hidden: vec![16],
                        ..ZeroShotConfig::default().gan
                    },
                    ..ZeroShotConfig::default()
                },
                eval_count: 40,
                ..ZeroShotTaskConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.vae.validate()?;
        self.realism.validate()?;
        self.cgan.validate()?;
        self.transform.transform.validate()?;
        self.corpus.validate()?;
        self.seqvae.validate()?;
        if self.corpus.format != self.seqvae.format {
            return Err(Error::Config("corpus.format and seqvae.format differ".into()));
        }
        if self.sweep.sigmas.len() < 3 {
            return Err(Error::Config("sweep.sigmas needs at least three values".into()));
        }
        if self.sample.parity_count > self.sample.count {
            return Err(Error::Config("sample.parity_count exceeds sample.count".into()));
        }
        if !(0.0..=1.0).contains(&self.zero_shot.density_quantile) {
            return Err(Error::Config("zero_shot.density_quantile must be in [0, 1]".into()));
        }
        if self.seq_holdout >= self.corpus.count {
            return Err(Error::Config("seq_holdout must be smaller than corpus.count".into()));
        }
        Ok(())
    }

    /// Digest of the config with paths removed.
    pub fn digest(&self) -> Result<String> {
        Ok(config_digest(&cfg_without_paths(self)?))
    }

    fn seed_for(&self, task: Task, local: u64) -> u64 {
        self.seed.wrapping_mul(1_000_003).wrapping_add(task.stream()).wrapping_add(local)
    }
}

/// Runs tasks against one output directory.
pub struct Pipeline {
    pub config: ExperimentConfig,
    pub quiet: bool,
    digest: String,
    mnist: Option<(Dataset, Dataset)>,
}

/// MNIST split into (train, held-out).
fn split_mnist(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    if !cfg.mnist_dir.is_dir() {
        return Err(Error::Config(format!(
            "mnist_dir {} does not exist (expected images-idx3-ubyte[.gz] and labels-idx1-ubyte[.gz])",
            cfg.mnist_dir.display()
        )));
    }
    let mut all = load_mnist_dir(&cfg.mnist_dir)?;
    if let Some(n) = cfg.limit {
        all = all.take(n.min(all.len()))?;
    }
    if cfg.holdout >= all.len() {
        return Err(Error::Config(format!("holdout {} leaves no training digits of {}", cfg.holdout, all.len())));
    }
    all.split(all.len() - cfg.holdout)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn col0(t: &Tensor) -> Vec<f64> {
    let (n, _) = t.dims2("col0").expect("2-d tensor");
    (0..n).map(|i| t.row(i)[0]).collect()
}

fn sample_posterior(enc: &crate::vae::EncoderOutput, rng: &mut Rng) -> Result<Tensor> {
    let eps = rng.normal_tensor(enc.mu.shape());
    Ok(enc.mu.zip_map(&enc.sigma.zip_map(&eps, "sample", |s, e| s * e)?, "sample", |a, b| a + b)?)
}

impl Pipeline {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let digest = config.digest()?;
        Ok(Self {
            config,
            quiet: false,
            digest,
            mnist: None,
        })
    }

    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    pub fn out(&self, rel: &str) -> PathBuf {
        self.config.out_dir.join(rel)
    }

    pub fn metrics_path(&self, task: Task) -> PathBuf {
        self.out("metrics").join(format!("{}.json", task.name()))
    }

    fn mnist(&mut self) -> Result<&(Dataset, Dataset)> {
        if self.mnist.is_none() {
            self.mnist = Some(split_mnist(&self.config)?);
        }
        Ok(self.mnist.as_ref().expect("loaded above"))
    }

    fn save<M: Checkpoint>(&self, model: &M, rel: &str, task: Task) -> Result<()> {
        save_checkpoint(model, self.out(rel), self.config.seed_for(task, 0))?;
        Ok(())
    }

    /// Loads a checkpoint produced by `requires`, or names that task.
    fn need<M: Checkpoint>(&self, task: Task, requires: Task, rel: &str) -> Result<M> {
        let dir = self.out(rel);
        if !dir.join(MANIFEST_FILE).exists() {
            return Err(Error::Dependency {
                task: task.name().into(),
                requires: requires.name().into(),
                detail: format!("no checkpoint at {}", dir.display()),
            });
        }
        Ok(load_checkpoint::<M>(&dir)?.0)
    }

    fn check_dim(&self, task: Task, requires: Task, found: usize, expected: usize) -> Result<()> {
        if found != expected {
            return Err(Error::Dependency {
                task: task.name().into(),
                requires: requires.name().into(),
                detail: format!("checkpoint latent_dim {found} does not match the VAE's {expected}"),
            });
        }
        Ok(())
    }

    fn write_metrics(&self, task: Task, metrics: Value) -> Result<Value> {
        let doc = json!({
            "task": task.name(),
            "version": VERSION,
            "seed": self.config.seed,
            "config_digest": self.digest,
            "metrics": metrics,
        });
        let path = self.metrics_path(task);
        let dir = self.out("metrics");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(doc)
    }

    fn write_text(&self, rel: &str, text: &str) -> Result<()> {
        let path = self.out(rel);
        if let Some(p) = path.parent() {
            fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
        }
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Runs one task and returns its metrics document.
    pub fn run(&mut self, task: Task) -> Result<Value> {
        let start = Instant::now();
        self.note(format!("[{}] start", task.name()));
        let metrics = match task {
            Task::TrainVae => self.train_vae()?,
            Task::ElboSweep => self.elbo_sweep()?,
            Task::TrainRealism => self.train_realism()?,
            Task::Contour => self.contour()?,
            Task::TrainCgan => self.train_cgan()?,
            Task::TrainAttrCritic => self.train_attr_critic()?,
            Task::Sample => self.sample()?,
            Task::Transform => self.transform()?,
            Task::GenCorpus => self.gen_corpus()?,
            Task::TrainSeqvae => self.train_seqvae()?,
            Task::ZeroShot => self.zero_shot()?,
            Task::Evaluate => self.evaluate()?,
        };
        let doc = self.write_metrics(task, metrics)?;
        self.note(format!("[{}] done in {:.1}s", task.name(), start.elapsed().as_secs_f64()));
        Ok(doc)
    }

    /// Every task in order.
    pub fn run_all(&mut self) -> Result<Value> {
        let mut last = Value::Null;
        for t in Task::ALL {
            last = self.run(t)?;
        }
        Ok(last)
    }

    fn train_vae(&mut self) -> Result<Value> {
        let cfg = self.config.clone();
        let (train, held) = self.mnist()?.clone();
        let seed = cfg.seed_for(Task::TrainVae, cfg.vae_train.seed);
        let mut model = VaeModel::new(cfg.vae.clone(), &mut Rng::seeded(seed))?;
        let quiet = self.quiet;
        let log = train_vae(&mut model, &train.images, &VaeTrainConfig { seed, ..cfg.vae_train.clone() }, |l| {
            if !quiet {
                eprintln!("  epoch {} ll {:.2} kl {:.2} elbo {:.2}", l.epoch, l.ll, l.kl, l.elbo);
            }
        })?;
        let (ll, kl, elbo) = evaluate_elbo(&model, &held.images, seed)?;
        self.save(&model, "vae", Task::TrainVae)?;
        let shown = held.take(held.len().min(50))?;
        let recon = model.reconstruct(&shown.images)?;
        let both = Tensor::vstack(&[&shown.images, &recon])?;
        image_grid(&both, held.rows, held.cols, 10, 10)?.save(self.out("vae/reconstructions"))?;
        Ok(json!({
            "train_digits": train.len(),
            "heldout_digits": held.len(),
            "final_epoch": log.last(),
            "heldout": { "ll": ll, "kl": kl, "elbo": elbo },
            "sigma_bar": model.sigma_bar()?,
        }))
    }

    fn elbo_sweep(&mut self) -> Result<Value> {
        let cfg = self.config.clone();
        let (train, held) = self.mnist()?.clone();
        let all = Tensor::vstack(&[&train.images, &held.images])?;
        let train_cfg = VaeTrainConfig {
            epochs: cfg.sweep.epochs,
            seed: cfg.seed_for(Task::ElboSweep, cfg.vae_train.seed),
            ..cfg.vae_train.clone()
        };
        let quiet = self.quiet;
        let table = elbo_table(&all, &cfg.sweep.sigmas, &cfg.vae, &train_cfg, |r| {
            if !quiet {
                eprintln!(
                    "  sigma_x {} ll {:.2} kl {:.2} elbo {:.2} min sigma_bar {:.4}",
                    r.sigma_x,
                    r.ll,
                    r.kl,
                    r.elbo,
                    r.sigma_profile.first().copied().unwrap_or(f64::NAN)
                );
            }
        })?;
        // rows sorted by decreasing sigma_x
        let mut order: Vec<usize> = (0..table.rows.len()).collect();
        order.sort_by(|&a, &b| table.rows[b].sigma_x.total_cmp(&table.rows[a].sigma_x));
        let ok = table.rows.iter().all(|r| r.failed.is_none());
        let kl_increasing = ok && order.windows(2).all(|w| table.rows[w[1]].kl > table.rows[w[0]].kl);
        let min_decreasing = ok
            && order.windows(2).all(|w| {
                table.rows[w[1]].sigma_profile.first() < table.rows[w[0]].sigma_profile.first()
            });
        let interior = table
            .argmax
            .map(|a| {
                let pos = order.iter().position(|&i| i == a).unwrap_or(0);
                pos > 0 && pos + 1 < order.len()
            })
            .unwrap_or(false);
        let mut csv = String::from("sigma_x,sigma_x_sq,ll,kl,elbo,min_sigma_bar\n");
        for r in &table.rows {
            csv += &format!(
                "{},{},{},{},{},{}\n",
                r.sigma_x,
                r.sigma_x_sq,
                r.ll,
                r.kl,
                r.elbo,
                r.sigma_profile.first().copied().unwrap_or(f64::NAN)
            );
        }
        self.write_text("elbo_sweep/table.csv", &csv)?;
        Ok(json!({
            "digits": all.shape()[0],
            "rows": table.rows,
            "argmax": table.argmax,
            "kl_increasing_as_sigma_decreases": kl_increasing,
            "argmax_interior": interior,
            "min_sigma_bar_decreasing": min_decreasing,
        }))
    }

    fn realism_data(&mut self, task: Task) -> Result<(VaeModel, crate::vae::EncoderOutput, Dataset, Dataset)> {
        let vae: VaeModel = self.need(task, Task::TrainVae, "vae")?;
        let (train, held) = self.mnist()?.clone();
        let enc = vae.encode(&train.images)?;
        Ok((vae, enc, train, held))
    }

    fn train_realism(&mut self) -> Result<Value> {
        let task = Task::TrainRealism;
        let cfg = self.config.clone();
        let (vae, enc, _, held) = self.realism_data(task)?;
        let sigma_bar = vae.sigma_bar()?.to_vec();
        let data = LatentData {
            posterior: &enc,
            labels: None,
            sigma_bar: &sigma_bar,
        };
        let seed = cfg.seed_for(task, cfg.realism.seed);
        let quiet = self.quiet;
        let progress = |name: &'static str| {
            move |l: &crate::actors::GanLog| {
                if !quiet && l.iteration % 50 == 0 {
                    eprintln!("  {name} it {} d {:.4} gp {:.4} g {:.4}", l.iteration, l.d_loss, l.gp, l.g_loss);
                }
            }
        };
        let main = train_realism_pair(&data, &GanTrainConfig { seed, ..cfg.realism.clone() }, progress("dist"))?;
        let plain = train_realism_pair(
            &data,
            &GanTrainConfig {
                seed,
                lambda_dist: 0.0,
                ..cfg.realism.clone()
            },
            progress("no-dist"),
        )?;
        self.save(&main.critic, "realism/critic", task)?;
        self.save(&main.actor, "realism/actor", task)?;

        let mut rng = Rng::seeded(cfg.seed_for(task, 1));
        let held_z = sample_posterior(&vae.encode(&held.images)?, &mut rng)?;
        let prior = rng.normal_tensor(&[held.len(), vae.latent_dim()]);
        let d_held = col0(&main.critic.prob(&held_z, None)?);
        let d_prior = col0(&main.critic.prob(&prior, None)?);

        let z = rng.normal_tensor(&[1000, vae.latent_dim()]);
        let shift = |pair: &crate::actors::RealismPair, lambda: f64| -> Result<Value> {
            let zp = apply_actor(&pair.actor, &z, None)?;
            Ok(json!({
                "lambda_dist": lambda,
                "z_mse": z_mse(&z, &zp, &sigma_bar)?,
                "mean_d_prior": mean(&col0(&pair.critic.prob(&z, None)?)),
                "mean_d_actor": mean(&col0(&pair.critic.prob(&zp, None)?)),
                "collapse": pair.collapse,
                "final": pair.log.last(),
            }))
        };
        Ok(json!({
            "auc_heldout_vs_prior": auc(&d_held, &d_prior),
            "mean_d_heldout": mean(&d_held),
            "mean_d_prior": mean(&d_prior),
            "with_distance": shift(&main, cfg.realism.lambda_dist)?,
            "without_distance": shift(&plain, 0.0)?,
        }))
    }

    fn contour(&mut self) -> Result<Value> {
        let task = Task::Contour;
        let cfg = self.config.contour.clone();
        let critic: LatentCritic = self.need(task, Task::TrainRealism, "realism/critic")?;
        let vae: VaeModel = self.need(task, Task::TrainVae, "vae")?;
        self.check_dim(task, Task::TrainRealism, critic.spec.latent_dim, vae.latent_dim())?;
        let held = self.mnist()?.1.clone();
        let sb = vae.sigma_bar()?;
        let mut dims: Vec<usize> = (0..sb.len()).collect();
        dims.sort_by(|&a, &b| sb[a].total_cmp(&sb[b]));
        let (i, j) = (dims[0], dims[1]);
        let mu = vae.encode(&held.images)?.mu;
        let anchors = cfg.anchors.min(held.len()).max(1);
        let mut values = Vec::with_capacity(anchors);
        let mut first = None;
        for a in 0..anchors {
            let g = critic_contour_grid(&critic, mu.row(a), (i, j), cfg.range, cfg.resolution)?;
            values.push(g.anchor_value());
            if first.is_none() {
                first = Some(g);
            }
        }
        let g = first.expect("at least one anchor");
        self.write_text("contour/grid.csv", &g.to_csv())?;
        g.render(4)?.save(self.out("contour/grid"))?;
        Ok(json!({
            "dims": [i, j],
            "sigma_bar": [sb[i], sb[j]],
            "anchor_value": g.anchor_value(),
            "anchors": anchors,
            "mean_anchor_value": mean(&values),
            "share_anchor_at_least_half": values.iter().filter(|&&v| v >= 0.5).count() as f64 / anchors as f64,
        }))
    }

    fn train_cgan(&mut self) -> Result<Value> {
        let task = Task::TrainCgan;
        let cfg = self.config.clone();
        let (vae, enc, train, held) = self.realism_data(task)?;
        let sigma_bar = vae.sigma_bar()?.to_vec();
        let labels = train.one_hot_labels(10);
        let data = LatentData {
            posterior: &enc,
            labels: Some(&labels),
            sigma_bar: &sigma_bar,
        };
        let quiet = self.quiet;
        let pair = train_realism_pair(
            &data,
            &GanTrainConfig {
                seed: cfg.seed_for(task, cfg.cgan.seed),
                ..cfg.cgan.clone()
            },
            |l| {
                if !quiet && l.iteration % 50 == 0 {
                    eprintln!("  it {} d {:.4} gp {:.4} g {:.4}", l.iteration, l.d_loss, l.gp, l.g_loss);
                }
            },
        )?;
        self.save(&pair.critic, "cgan/critic", task)?;
        self.save(&pair.actor, "cgan/actor", task)?;
        // critic on held-out encodings with their own vs shifted labels
        let mu = vae.encode(&held.images)?.mu;
        let own = held.one_hot_labels(10);
        let wrong = one_hot(&held.labels.iter().map(|&l| (l as usize + 1) % 10).collect::<Vec<_>>(), 10);
        let d_own = col0(&pair.critic.prob(&mu, Some(&own))?);
        let d_wrong = col0(&pair.critic.prob(&mu, Some(&wrong))?);
        Ok(json!({
            "mean_d_true_label": mean(&d_own),
            "mean_d_wrong_label": mean(&d_wrong),
            "auc_true_vs_wrong_label": auc(&d_own, &d_wrong),
            "collapse": pair.collapse,
            "final": pair.log.last(),
        }))
    }

    fn train_attr_critic(&mut self) -> Result<Value> {
        let task = Task::TrainAttrCritic;
        let cfg = self.config.clone();
        let (vae, enc, train, held) = self.realism_data(task)?;
        let critic = train_attribute_critic(
            &enc,
            &train.one_hot_labels(10),
            &AttrCriticConfig {
                seed: cfg.seed_for(task, cfg.attr_critic.seed),
                ..cfg.attr_critic.clone()
            },
        )?;
        self.save(&critic, "attr/critic", task)?;
        let mu = vae.encode(&held.images)?.mu;
        let acc = crate::constraints::one_hot_accuracy(&critic, &mu, &held.one_hot_labels(10))?;
        Ok(json!({ "heldout_accuracy": acc }))
    }

    /// The pixel classifier, trained on first use and cached under `classifier/`.
    fn classifier(&mut self) -> Result<Classifier> {
        let dir = self.out("classifier");
        if dir.join(MANIFEST_FILE).exists() {
            return Ok(load_checkpoint::<Classifier>(&dir)?.0);
        }
        let cfg = ClassifierConfig {
            seed: self.config.seed_for(Task::Evaluate, self.config.classifier.seed),
            ..self.config.classifier.clone()
        };
        let train = self.mnist()?.0.clone();
        self.note("  training the pixel classifier");
        let clf = train_classifier(&train.images, &train.label_indices(), &cfg)?;
        save_checkpoint(&clf, &dir, cfg.seed)?;
        Ok(clf)
    }

    fn sample(&mut self) -> Result<Value> {
        let task = Task::Sample;
        let cfg = self.config.clone();
        let vae: VaeModel = self.need(task, Task::TrainVae, "vae")?;
        let actor: LatentActor = self.need(task, Task::TrainCgan, "cgan/actor")?;
        let d_real: LatentCritic = self.need(task, Task::TrainRealism, "realism/critic")?;
        let d_attr: LatentCritic = self.need(task, Task::TrainAttrCritic, "attr/critic")?;
        let k = vae.latent_dim();
        self.check_dim(task, Task::TrainCgan, actor.spec.latent_dim, k)?;
        self.check_dim(task, Task::TrainRealism, d_real.spec.latent_dim, k)?;
        self.check_dim(task, Task::TrainAttrCritic, d_attr.spec.latent_dim, k)?;
        let clf = self.classifier()?;
        let held = self.mnist()?.1.clone();
        let sc = &cfg.sample;
        let sigma_bar = vae.sigma_bar()?.to_vec();

        let mut rng = Rng::seeded(cfg.seed_for(task, 0));
        let z = rng.normal_tensor(&[sc.count, k]);
        let targets: Vec<usize> = (0..sc.count).map(|i| i % 10).collect();
        let y = one_hot(&targets, 10);
        let zp = conditional_latents(&SampleMode::Actor(&actor), &z, &y)?;
        let images = vae.decode(&zp)?;
        let pred = clf.predict(&images)?;
        let metrics = attribute_metrics(&class_bits(&pred, 10), &class_bits(&targets, 10))?;

        // per-class spread of samples vs. real held-out digits
        let mut diversity = Vec::new();
        let mut alarm = false;
        for c in 0..10 {
            let gen: Vec<usize> = (0..sc.count).filter(|&i| targets[i] == c).collect();
            let real: Vec<usize> = (0..held.len()).filter(|&i| held.labels[i] as usize == c).take(100).collect();
            let g = mean_pairwise_distance(&images.select_rows(&gen)?)?;
            let r = mean_pairwise_distance(&held.images.select_rows(&real)?)?;
            let ratio = if r > 0.0 { g / r } else { 0.0 };
            alarm |= ratio < sc.diversity_fraction;
            diversity.push(json!({ "class": c, "sample_spread": g, "real_spread": r, "ratio": ratio }));
        }

        let p = sc.parity_count;
        let zs = z.slice_rows(0, p)?;
        let ys = y.slice_rows(0, p)?;
        let mode = SampleMode::Optimize {
            d_real: &d_real,
            d_attr: &d_attr,
            realism_weight: sc.realism_weight,
            attr_weight: sc.attr_weight,
            g_opt: sc.g_opt.clone(),
        };
        let zo = conditional_latents(&mode, &zs, &ys)?;
        let opt_images = vae.decode(&zo)?;
        let opt_pred = clf.predict(&opt_images)?;
        let hits = |pred: &[usize]| pred.iter().zip(&targets).filter(|(a, b)| a == b).count() as f64 / pred.len().max(1) as f64;
        let actor_acc_parity = hits(&pred[..p]);
        let opt_acc = hits(&opt_pred);

        let show = sc.count.min(100);
        image_grid(&images.slice_rows(0, show)?, held.rows, held.cols, show.div_ceil(10), 10)?
            .save(self.out("sample/actor"))?;
        let show = p.min(100);
        if show > 0 {
            image_grid(&opt_images.slice_rows(0, show)?, held.rows, held.cols, show.div_ceil(10), 10)?
                .save(self.out("sample/optimize"))?;
        }
        Ok(json!({
            "count": sc.count,
            "actor": {
                "accuracy": metrics.exact_match,
                "metrics": metrics,
                "z_mse": z_mse(&z, &zp, &sigma_bar)?,
                "mean_d_realism": mean(&col0(&d_real.prob(&zp, None)?)),
            },
            "diversity": { "classes": diversity, "fraction": sc.diversity_fraction, "alarm": alarm },
            "parity": {
                "count": p,
                "actor_accuracy": actor_acc_parity,
                "optimize_accuracy": opt_acc,
                "gap": (actor_acc_parity - opt_acc).abs(),
                "optimize_z_mse": z_mse(&zs, &zo, &sigma_bar)?,
            },
        }))
    }

    fn transform(&mut self) -> Result<Value> {
        let task = Task::Transform;
        let cfg = self.config.clone();
        let vae: VaeModel = self.need(task, Task::TrainVae, "vae")?;
        let d_real: LatentCritic = self.need(task, Task::TrainRealism, "realism/critic")?;
        let d_attr: LatentCritic = self.need(task, Task::TrainAttrCritic, "attr/critic")?;
        let k = vae.latent_dim();
        self.check_dim(task, Task::TrainRealism, d_real.spec.latent_dim, k)?;
        self.check_dim(task, Task::TrainAttrCritic, d_attr.spec.latent_dim, k)?;
        let clf = self.classifier()?;
        let held = self.mnist()?.1.clone();
        let sigma_bar = vae.sigma_bar()?.to_vec();
        let tc = &cfg.transform;
        let n = tc.count.min(held.len());
        let src = held.take(n)?;
        let mut rng = Rng::seeded(cfg.seed_for(task, 0));
        let targets: Vec<usize> = src.labels.iter().map(|&l| (l as usize + 1 + rng.below(9)) % 10).collect();
        let y = one_hot(&targets, 10);
        let z0 = vae.encode(&src.images)?.mu;
        let res = transform_identity(&z0, &d_real, &d_attr, &y, &tc.transform)?;
        let images = vae.decode(&res.z)?;
        let pred = clf.predict(&images)?;
        let reached = pred.iter().zip(&targets).filter(|(a, b)| a == b).count() as f64 / n.max(1) as f64;
        let satisfied = res.reasons.iter().filter(|r| **r == StopReason::Satisfied).count() as f64 / n.max(1) as f64;
        let steps: Vec<f64> = res.steps.iter().map(|&s| s as f64).collect();

        // prior-to-conditional shifts under the same critics
        let zp = rng.normal_tensor(&[n, k]);
        let zo = optimize_latents(
            &zp,
            &d_real,
            &d_attr,
            &y,
            (cfg.sample.realism_weight, cfg.sample.attr_weight),
            &cfg.sample.g_opt,
        )?
        .z;

        let show = n.min(50);
        let pairs = Tensor::vstack(&[&src.images.slice_rows(0, show)?, &images.slice_rows(0, show)?])?;
        image_grid(&pairs, held.rows, held.cols, (2 * show).div_ceil(10), 10)?.save(self.out("transform/pairs"))?;
        Ok(json!({
            "count": n,
            "max_steps": tc.transform.max_steps,
            "target_rate": reached,
            "satisfied_rate": satisfied,
            "mean_steps": mean(&steps),
            "transform_z_mse": z_mse(&z0, &res.z, &sigma_bar)?,
            "prior_to_conditional_z_mse": z_mse(&zp, &zo, &sigma_bar)?,
            "source_accuracy": clf.accuracy(&src.images, &src.label_indices())?,
        }))
    }

    fn gen_corpus(&mut self) -> Result<Value> {
        let cfg = CorpusConfig {
            seed: self.config.seed_for(Task::GenCorpus, self.config.corpus.seed),
            ..self.config.corpus.clone()
        };
        let melodies = generate_corpus(&cfg)?;
        write_corpus(self.out("corpus"), &melodies, &cfg)?;
        let pitch = RewardSpec::c_major();
        let ratios = melodies
            .iter()
            .map(|m| pitch.ratio(m, &cfg.format))
            .collect::<Result<Vec<_>>>()?;
        let counts: Vec<f64> = melodies.iter().map(|m| m.note_on_count() as f64).collect();
        let show: Vec<Melody> = melodies.iter().take(16).cloned().collect();
        pianoroll_grid(&show, &cfg.format, Some(&PitchSet::c_major()), 4, 4)?.save(self.out("corpus/examples"))?;
        Ok(json!({
            "count": melodies.len(),
            "c_major": satisfaction_exact(&ratios),
            "mean_note_ons": mean(&counts),
        }))
    }

    fn corpus(&self, task: Task) -> Result<(Vec<Melody>, crate::melody::CorpusMeta)> {
        let dir = self.out("corpus");
        if !dir.join(crate::melody::META_FILE).exists() {
            return Err(Error::Dependency {
                task: task.name().into(),
                requires: Task::GenCorpus.name().into(),
                detail: format!("no corpus at {}", dir.display()),
            });
        }
        read_corpus(dir)
    }

    fn train_seqvae(&mut self) -> Result<Value> {
        let task = Task::TrainSeqvae;
        let cfg = self.config.clone();
        let (melodies, meta) = self.corpus(task)?;
        if meta.length != cfg.seqvae.format.length || meta.vocab != cfg.seqvae.format.vocab {
            return Err(Error::Dependency {
                task: task.name().into(),
                requires: Task::GenCorpus.name().into(),
                detail: "corpus format differs from seqvae.format".into(),
            });
        }
        let split = melodies.len() - cfg.seq_holdout.min(melodies.len() - 1);
        let (train, held) = melodies.split_at(split);
        let seed = cfg.seed_for(task, cfg.seq_train.seed);
        let mut model = SeqVaeModel::new(cfg.seqvae.clone(), &mut Rng::seeded(seed))?;
        let quiet = self.quiet;
        let log = seq_train(&mut model, train, &SeqTrainConfig { seed, ..cfg.seq_train.clone() }, |l| {
            if !quiet {
                eprintln!("  epoch {} ce {:.3} kl {:.3} acc {:.4}", l.epoch, l.ce, l.kl, l.accuracy);
            }
        })?;
        self.save(&model, "seqvae", task)?;
        let held_acc = reconstruction_accuracy(&model, held)?;
        // token agreement between greedy prior decodes and held-out melodies
        let mut rng = Rng::seeded(cfg.seed_for(task, 1));
        let z = rng.normal_tensor(&[held.len(), model.latent_dim()]);
        let prior = model.decode_greedy(&z)?;
        let (mut same, mut total) = (0usize, 0usize);
        for (a, b) in prior.iter().zip(held) {
            same += a.tokens.iter().zip(&b.tokens).filter(|(x, y)| x == y).count();
            total += b.len();
        }
        Ok(json!({
            "train_melodies": train.len(),
            "heldout_melodies": held.len(),
            "final_epoch": log.last(),
            "heldout_reconstruction_accuracy": held_acc,
            "prior_token_match": same as f64 / total.max(1) as f64,
            "sigma_bar": model.sigma_bar()?,
        }))
    }

    fn zero_shot(&mut self) -> Result<Value> {
        let task = Task::ZeroShot;
        let cfg = self.config.clone();
        let model: SeqVaeModel = self.need(task, Task::TrainSeqvae, "seqvae")?;
        let (melodies, _) = self.corpus(task)?;
        let zc = &cfg.zero_shot;
        let mut counts: Vec<usize> = melodies.iter().map(Melody::note_on_count).collect();
        counts.sort_unstable();
        let d = counts[((counts.len() - 1) as f64 * zc.density_quantile).round() as usize];
        let pitch = RewardSpec::c_major();
        let density = RewardSpec::Density { d };
        let joint = RewardSpec::Product {
            of: vec![pitch.clone(), density.clone()],
        };
        let quiet = self.quiet;
        let train = |reward: &RewardSpec, name: &'static str, local: u64| {
            let c = ZeroShotConfig {
                gan: GanTrainConfig {
                    seed: cfg.seed_for(task, zc.train.gan.seed + local),
                    ..zc.train.gan.clone()
                },
                ..zc.train.clone()
            };
            zero_shot_train(&model, reward, &c, |l| {
                if !quiet && l.iteration % 50 == 0 {
                    eprintln!("  {name} it {} critic {:.4} actor {:.4}", l.iteration, l.d_loss, l.g_loss);
                }
            })
        };
        let pitch_pair = train(&pitch, "pitch", 0)?;
        let joint_pair = train(&joint, "joint", 1)?;
        self.save(&pitch_pair.critic, "zero_shot/pitch/critic", task)?;
        self.save(&pitch_pair.actor, "zero_shot/pitch/actor", task)?;
        self.save(&joint_pair.critic, "zero_shot/joint/critic", task)?;
        self.save(&joint_pair.actor, "zero_shot/joint/actor", task)?;

        let mut rng = Rng::seeded(cfg.seed_for(task, 7));
        let z = rng.normal_tensor(&[zc.eval_count, model.latent_dim()]);
        let decode_seed = cfg.seed_for(task, 8);
        let sigma_bar = model.sigma_bar()?.to_vec();
        let format = model.format().clone();
        let table = |zz: &Tensor| -> Result<(Value, Vec<Melody>)> {
            let ms = model.decode_sample(zz, zc.train.temperature, decode_seed)?;
            let rate = |spec: &RewardSpec| -> Result<crate::eval::Satisfaction> {
                let r = ms.iter().map(|m| spec.ratio(m, &format)).collect::<Result<Vec<_>>>()?;
                Ok(satisfaction_exact(&r))
            };
            Ok((
                json!({
                    "c_pitch": rate(&pitch)?,
                    "c_density": rate(&density)?,
                    "z_mse": z_mse(&z, zz, &sigma_bar)?,
                }),
                ms,
            ))
        };
        let (prior, prior_ms) = table(&z)?;
        let (pitch_row, pitch_ms) = table(&apply_actor(&pitch_pair.actor, &z, None)?)?;
        let (joint_row, joint_ms) = table(&apply_actor(&joint_pair.actor, &z, None)?)?;
        for (name, ms) in [("prior", &prior_ms), ("pitch", &pitch_ms), ("joint", &joint_ms)] {
            let show: Vec<Melody> = ms.iter().take(16).cloned().collect();
            pianoroll_grid(&show, &format, Some(&PitchSet::c_major()), 4, 4)?
                .save(self.out(&format!("zero_shot/{name}")))?;
        }
        Ok(json!({
            "density_d": d,
            "count": zc.eval_count,
            "prior": prior,
            "pitch_actor": pitch_row,
            "joint_actor": joint_row,
            "final_pitch": pitch_pair.log.last(),
            "final_joint": joint_pair.log.last(),
        }))
    }

    fn evaluate(&mut self) -> Result<Value> {
        let cfg = self.config.clone();
        let clf = self.classifier()?;
        let (train, held) = self.mnist()?.clone();
        let labels = held.label_indices();
        let pred = clf.predict(&held.images)?;
        let test_metrics = attribute_metrics(&class_bits(&pred, 10), &class_bits(&labels, 10))?;
        // null control: the same classifier trained on shuffled labels
        let mut shuffled = train.label_indices();
        Rng::seeded(cfg.seed_for(Task::Evaluate, 1)).shuffle(&mut shuffled);
        let control = train_classifier(
            &train.images,
            &shuffled,
            &ClassifierConfig {
                epochs: cfg.classifier.epochs.min(3),
                seed: cfg.seed_for(Task::Evaluate, 2),
                ..cfg.classifier.clone()
            },
        )?;
        let mut tasks = serde_json::Map::new();
        let mut missing = Vec::new();
        for t in Task::ALL.iter().filter(|&&t| t != Task::Evaluate) {
            let path = self.metrics_path(*t);
            match fs::read_to_string(&path) {
                Ok(text) => {
                    let v: Value = serde_json::from_str(&text)?;
                    tasks.insert(t.name().into(), v["metrics"].clone());
                }
                Err(_) => missing.push(t.name()),
            }
        }
        let classifier = json!({
            "heldout_accuracy": test_metrics.exact_match,
            "heldout_metrics": test_metrics,
            "shuffled_label_accuracy": control.accuracy(&held.images, &labels)?,
        });
        let bundle = json!({
            "version": VERSION,
            "seed": cfg.seed,
            "config_digest": self.digest,
            "config": cfg_without_paths(&cfg)?,
            "classifier": classifier,
            "tasks": tasks,
            "missing": missing,
        });
        self.write_text("metrics.json", &(serde_json::to_string_pretty(&bundle)? + "\n"))?;
        Ok(classifier)
    }
}

fn cfg_without_paths(cfg: &ExperimentConfig) -> Result<Value> {
    let mut v = serde_json::to_value(cfg)?;
    if let Value::Object(m) = &mut v {
        m.remove("mnist_dir");
        m.remove("out_dir");
    }
    Ok(v)
}
