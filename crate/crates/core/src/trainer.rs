//! L1 pretraining and alternating adversarial training, with checkpoints
//! that resume bit-exactly.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Archive;
use crate::data::{synthetic, Batch, BatchSpec, Corpus, DatasetConfig};
use crate::discriminator::DiscOutput;
use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::losses::{self, Convention, LossParts, LossWeights, PlainGeneratorLoss};
use crate::model::{Mode, ModelConfig, SharedUpdates, SrModel};
use crate::optim::{Adam, AdamConfig};
use crate::param::Module;
use crate::perceptual::{self, FeatureExtractor};
use crate::tensor::Tensor;
use crate::Rng;

/// Procedurally generated HR images used instead of `data.hr_dir`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSource {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for SyntheticSource {
    fn default() -> Self {
        SyntheticSource {
            count: 8,
            size: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    /// Architecture trained by `psnr-pretrain`.
    pub pretrain_target: Mode,
    pub seed: u64,
    pub total_steps: u64,
    /// Leading L1-only steps of an adversarial run.
    pub pretrain_steps: u64,
    pub lr0: f64,
    pub lr_halve_every: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Rescales each update's gradients to at most this global norm.
    pub clip_norm: Option<f64>,
    pub shared_update_policy: SharedUpdates,
    pub attention_enabled: bool,
    pub convention: Convention,
    pub plain_generator_loss: PlainGeneratorLoss,
    /// Feature extractor name for the perceptual term; `None` disables it.
    pub perceptual: Option<String>,
    pub checkpoint_every: u64,
    pub weights: LossWeights,
    pub data: DatasetConfig,
    pub synthetic: Option<SyntheticSource>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Fasrgan,
            pretrain_target: Mode::Fasrgan,
            seed: 0,
            total_steps: 500_000,
            pretrain_steps: 100_000,
            lr0: 1e-4,
            lr_halve_every: 200_000,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: None,
            shared_update_policy: SharedUpdates::Both,
            attention_enabled: true,
            convention: Convention::AsPrinted,
            plain_generator_loss: PlainGeneratorLoss::NonSaturating,
            perceptual: None,
            checkpoint_every: 5_000,
            weights: LossWeights::default(),
            data: DatasetConfig::default(),
            synthetic: None,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<TrainConfig> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut unknown = Vec::new();
        unknown_keys(&table, &TrainConfig::schema()?, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
        }
        let c: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainConfig::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {}", path.display(), m)),
            e => e,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            bad.push(format!("lr0 must be > 0, got {}", self.lr0));
        }
        if self.lr_halve_every == 0 {
            bad.push("lr_halve_every must be > 0".to_string());
        }
        for (k, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                bad.push(format!("{} must lie in [0, 1), got {}", k, b));
            }
        }
        if !(self.adam_eps > 0.0) {
            bad.push(format!("adam_eps must be > 0, got {}", self.adam_eps));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                bad.push(format!("clip_norm must be > 0, got {}", c));
            }
        }
        if self.pretrain_target == Mode::PsnrPretrain {
            bad.push("pretrain_target must name an adversarial mode".to_string());
        }
        if self.model.generator.scale != self.data.scale {
            bad.push(format!(
                "model.generator.scale ({}) differs from data.scale ({})",
                self.model.generator.scale, self.data.scale
            ));
        }
        if self.checkpoint_every == 0 {
            bad.push("checkpoint_every must be > 0".to_string());
        }
        if let Some(s) = self.synthetic {
            if s.count == 0 {
                bad.push("synthetic.count must be ≥ 1".to_string());
            }
        }
        for check in [self.weights.validate(), self.data.validate()] {
            if let Err(e) = check {
                bad.push(e.to_string());
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    /// Architecture whose generator is trained.
    pub fn generator_mode(&self) -> Mode {
        match self.mode {
            Mode::PsnrPretrain => self.pretrain_target,
            m => m,
        }
    }

    pub fn hr_patch(&self) -> usize {
        self.data.patch_size_lr * self.data.scale
    }

    /// Training corpus named by the config.
    pub fn load_corpus(&self) -> Result<Corpus> {
        match self.synthetic {
            Some(s) => {
                let corpus = Corpus::from_hr_images(synthetic::corpus(s.count, s.size, s.seed), self.data.scale)?;
                corpus.check_patch_fits(self.data.patch_size_lr)?;
                Ok(corpus)
            }
            None => Corpus::load(&self.data),
        }
    }

    /// Every accepted key, as a table with all optional fields present.
    fn schema() -> Result<toml::Table> {
        let mut c = TrainConfig {
            clip_norm: Some(1.0),
            perceptual: Some(String::new()),
            synthetic: Some(SyntheticSource::default()),
            ..TrainConfig::default()
        };
        c.data.lr_dir = Some(Default::default());
        toml::Table::try_from(c).map_err(|e| Error::Config(e.to_string()))
    }

    /// The config with fields that may change across a resume cleared.
    fn resume_fingerprint(&self) -> Result<serde_json::Value> {
        let mut c = self.clone();
        c.total_steps = 0;
        c.checkpoint_every = 1;
        Ok(serde_json::to_value(c)?)
    }
}

fn unknown_keys(table: &toml::Table, schema: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in table {
        let path = if prefix.is_empty() { k.clone() } else { format!("{}.{}", prefix, k) };
        match (v, schema.get(k)) {
            (_, None) => out.push(path),
            (toml::Value::Table(t), Some(toml::Value::Table(s))) => unknown_keys(t, s, &path, out),
            _ => {}
        }
    }
}

/// `lr0 · 0.5^floor(step / lr_halve_every)`.
pub fn lr_at(step: u64, config: &TrainConfig) -> f64 {
    let halvings = step / config.lr_halve_every;
    config.lr0 * 0.5f64.powi(halvings.min(i32::MAX as u64) as i32)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Adversarial,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Adversarial => "gan",
        }
    }
}

/// Losses observed during one step. Disabled terms are absent.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub phase: Phase,
    pub lr: f64,
    pub values: Vec<(String, f64)>,
}

impl StepRecord {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.iter().find(|(k, _)| k == key).map(|&(_, v)| v)
    }

    /// `step=<n> phase=<p> lr=<lr> key=value ...`; values print in the
    /// shortest form that parses back to the same f64.
    pub fn log_line(&self) -> String {
        let mut s = format!("step={} phase={} lr={}", self.step, self.phase.name(), self.lr);
        for (k, v) in &self.values {
            s.push_str(&format!(" {}={}", k, v));
        }
        s
    }
}

/// Splits a metrics log line into `(key, value)` pairs.
pub fn parse_log_line(line: &str) -> Vec<(String, String)> {
    line.split_whitespace()
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// Append-only line-delimited metrics file.
pub struct MetricsLog {
    out: BufWriter<File>,
}

impl MetricsLog {
    pub fn open(path: &Path) -> Result<MetricsLog> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(MetricsLog { out: BufWriter::new(f) })
    }

    pub fn write(&mut self, record: &StepRecord) -> std::io::Result<()> {
        writeln!(self.out, "{}", record.log_line())?;
        self.out.flush()
    }
}

/// Model, optimizers and step counter. The batch for step `k` is drawn as
/// a pure function of `(seed, k)`, so no sampler state is carried.
pub struct Trainer {
    config: TrainConfig,
    corpus: Corpus,
    spec: BatchSpec,
    model: SrModel,
    perceptual: Option<Box<dyn FeatureExtractor>>,
    gen_opt: Adam,
    disc_opt: Option<Adam>,
    step: u64,
}

// Keeps model initialisation independent of the sampler's streams.
const INIT_STREAM: u64 = 1 << 62;

impl Trainer {
    pub fn new(config: TrainConfig, corpus: Corpus) -> Result<Trainer> {
        config.validate()?;
        if corpus.scale() != config.data.scale {
            return Err(Error::Config(format!(
                "corpus scale {} differs from data.scale {}",
                corpus.scale(),
                config.data.scale
            )));
        }
        corpus.check_patch_fits(config.data.patch_size_lr)?;
        let mut rng = Rng::seed_from_u64(config.seed);
        rng.set_stream(INIT_STREAM);
        let model = if config.mode.is_adversarial() {
            SrModel::build(config.mode, &config.model, config.hr_patch(), &mut rng)?
        } else {
            SrModel::build_generator(config.pretrain_target, &config.model, &mut rng)?
        };
        let perceptual = match &config.perceptual {
            Some(spec) => Some(perceptual::from_spec(spec, config.model.generator.channels)?),
            None => None,
        };
        let gen_opt = Adam::new(model.generator.params(), config.adam());
        let disc_opt = model
            .discriminator
            .as_ref()
            .map(|d| Adam::new(d.params(), config.adam()));
        Ok(Trainer {
            spec: BatchSpec::from(&config.data),
            config,
            corpus,
            model,
            perceptual,
            gen_opt,
            disc_opt,
            step: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &SrModel {
        &self.model
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    /// Number of completed steps.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        lr_at(self.step, &self.config)
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.config.total_steps
    }

    pub fn phase(&self) -> Phase {
        if self.config.mode.is_adversarial() && self.step >= self.config.pretrain_steps {
            Phase::Adversarial
        } else {
            Phase::Pretrain
        }
    }

    pub fn batch_at(&self, index: u64) -> Result<Batch> {
        self.corpus.batch_at(&self.spec, self.config.seed, index)
    }

    /// Runs the step due next on its scheduled batch.
    pub fn step(&mut self) -> Result<StepRecord> {
        let batch = self.batch_at(self.step)?;
        match self.phase() {
            Phase::Pretrain => self.pretrain_step(&batch),
            Phase::Adversarial => self.gan_step(&batch),
        }
    }

    /// Steps until `total_steps`, passing each record to `on_step`.
    pub fn run(&mut self, on_step: &mut dyn FnMut(&Trainer, &StepRecord) -> Result<()>) -> Result<()> {
        while !self.is_finished() {
            let rec = self.step()?;
            on_step(self, &rec)?;
        }
        Ok(())
    }

    fn clip(&self, grads: &mut Gradients) {
        if let Some(c) = self.config.clip_norm {
            let n = grads.norm();
            if n > c {
                grads.scale(c / n);
            }
        }
    }

    fn diverged(&self, key: &str, value: f64) -> Result<()> {
        if value.is_finite() {
            Ok(())
        } else {
            Err(Error::Divergence {
                step: self.step,
                key: key.to_string(),
                value,
            })
        }
    }

    /// One Adam step on the generator path minimising the L1 content loss.
    pub fn pretrain_step(&mut self, batch: &Batch) -> Result<StepRecord> {
        let lr = self.lr();
        let trainable = self.model.generator.params();
        let mut g = Graph::with_trainable(&trainable);
        let x = g.constant(batch.lr.clone());
        let hr = g.constant(batch.hr.clone());
        let sr = self.model.generator.forward(&mut g, x)?;
        let l1 = losses::l1_content(&mut g, sr, hr)?;
        let value = g.scalar(l1);
        self.diverged("l1", value)?;
        let mut grads = g.backward(l1)?;
        self.clip(&mut grads);
        self.gen_opt.step(&grads, lr);
        let rec = StepRecord {
            step: self.step,
            phase: Phase::Pretrain,
            lr,
            values: vec![("l1".into(), value), ("l_total".into(), value)],
        };
        self.step += 1;
        Ok(rec)
    }

    /// Discriminator update followed by generator update on one batch.
    pub fn gan_step(&mut self, batch: &Batch) -> Result<StepRecord> {
        let lr = self.lr();
        let mut values = self.discriminator_update(batch)?;
        values.extend(self.generator_update(batch)?);
        let rec = StepRecord {
            step: self.step,
            phase: Phase::Adversarial,
            lr,
            values,
        };
        self.step += 1;
        Ok(rec)
    }

    fn require_adversarial(&self) -> Result<()> {
        if self.model.discriminator.is_none() {
            return Err(Error::Config(format!(
                "mode {} has no discriminator",
                self.config.mode
            )));
        }
        Ok(())
    }

    /// Minimises the discriminator objective with the generator frozen:
    /// the fake batch enters as a constant. Does not advance the step.
    pub fn discriminator_update(&mut self, batch: &Batch) -> Result<Vec<(String, f64)>> {
        self.require_adversarial()?;
        let lr = self.lr();
        let conv = self.config.convention;
        let fake = self.model.generator.infer(&batch.lr)?;
        let disc = self.model.discriminator.as_ref().expect("checked");
        let trainable = self.model.discriminator_trainable(self.config.shared_update_policy);
        let mut g = Graph::with_trainable(&trainable);
        let hr = g.constant(batch.hr.clone());
        let fake = g.constant(fake);
        let out_r = disc.forward(&mut g, hr)?;
        let out_f = disc.forward(&mut g, fake)?;
        let (c_r, c_f) = (logit(&out_r)?, logit(&out_f)?);
        let mut values = Vec::new();
        let total = if self.config.mode.uses_fine_grained() {
            let (m_r, m_f) = (mask(&out_r)?, mask(&out_f)?);
            let d_adv = losses::d_adversarial(&mut g, c_r, c_f, conv)?;
            let d_mask = losses::d_mask_loss(&mut g, m_r, m_f, conv)?;
            values.push(("d_adv".to_string(), g.scalar(d_adv)));
            values.push(("d_mask".to_string(), g.scalar(d_mask)));
            values.push(("mask_real".to_string(), g.value(m_r).mean()));
            values.push(("mask_fake".to_string(), g.value(m_f).mean()));
            g.add(d_adv, d_mask)?
        } else {
            let (loss_d, _) = losses::plain_gan_losses(&mut g, c_r, c_f, conv, self.config.plain_generator_loss)?;
            values.push(("d_adv".to_string(), g.scalar(loss_d)));
            loss_d
        };
        for (k, v) in &values {
            self.diverged(k, *v)?;
        }
        let mut grads = g.backward(total)?;
        self.clip(&mut grads);
        self.disc_opt.as_mut().expect("adversarial mode").step(&grads, lr);
        Ok(values)
    }

    /// Minimises the weighted generator objective with discriminator-only
    /// parameters frozen. Does not advance the step.
    pub fn generator_update(&mut self, batch: &Batch) -> Result<Vec<(String, f64)>> {
        self.require_adversarial()?;
        let lr = self.lr();
        let conv = self.config.convention;
        let disc = self.model.discriminator.as_ref().expect("checked");
        let trainable = self.model.generator_trainable(self.config.shared_update_policy);
        let mut g = Graph::with_trainable(&trainable);
        let x = g.constant(batch.lr.clone());
        let hr = g.constant(batch.hr.clone());
        let sr = self.model.generator.forward(&mut g, x)?;
        let l1 = losses::l1_content(&mut g, sr, hr)?;
        let l_percep = match &self.perceptual {
            Some(phi) => Some(losses::perceptual(&mut g, sr, hr, phi.as_ref())?),
            None => None,
        };
        let out_f = disc.forward(&mut g, sr)?;
        let out_r = disc.forward(&mut g, hr)?;
        let (c_r, c_f) = (logit(&out_r)?, logit(&out_f)?);
        let parts: LossParts<Var> = if self.config.mode.uses_fine_grained() {
            let (m_r, m_f) = (mask(&out_r)?, mask(&out_f)?);
            let entire = losses::g_adversarial_entire(&mut g, c_r, c_f, conv)?;
            let fine = losses::g_mask_loss(&mut g, m_r, m_f, conv)?;
            let attention = if self.config.attention_enabled {
                Some(losses::attention_l1(&mut g, sr, hr, m_f)?)
            } else {
                None
            };
            LossParts {
                l1,
                l_percep,
                l_adv_entire: Some(entire),
                l_adv_fine: Some(fine),
                l_attention: attention,
            }
        } else {
            let (_, loss_g) = losses::plain_gan_losses(&mut g, c_r, c_f, conv, self.config.plain_generator_loss)?;
            LossParts {
                l1,
                l_percep,
                l_adv_entire: Some(loss_g),
                l_adv_fine: None,
                l_attention: None,
            }
        };
        let total = losses::generator_total(&mut g, &parts, &self.config.weights).map_err(|e| e.at_step(self.step))?;
        let mut values: Vec<(String, f64)> = parts
            .entries()
            .into_iter()
            .map(|(k, v)| (k.to_string(), g.scalar(v)))
            .collect();
        values.push(("l_total".to_string(), g.scalar(total)));
        let mut grads = g.backward(total)?;
        self.clip(&mut grads);
        self.gen_opt.step(&grads, lr);
        Ok(values)
    }

    fn manifest(&self) -> Result<serde_json::Value> {
        Ok(serde_json::json!({
            "kind": "train",
            "config": serde_json::to_value(&self.config)?,
        }))
    }

    /// Parameters, optimizer moments, step counter and config.
    pub fn to_archive(&self) -> Result<Archive> {
        let mut a = Archive::new(self.step, self.manifest()?);
        a.insert_params(&self.model.params())?;
        let mut states = vec![self.gen_opt.state("opt.gen")];
        if let Some(d) = &self.disc_opt {
            states.push(d.state("opt.disc"));
        }
        for (tensors, counters) in states {
            for (k, t) in tensors {
                if a.tensors.insert(k.clone(), t).is_some() {
                    return Err(Error::Checkpoint(format!("duplicate tensor name '{}'", k)));
                }
            }
            a.counters.extend(counters);
        }
        Ok(a)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        self.to_archive()?.save(path)
    }

    /// Rebuilds a trainer from `archive`. `config` must match the saved
    /// one except for `total_steps` and `checkpoint_every`.
    pub fn from_archive(config: TrainConfig, corpus: Corpus, archive: &Archive) -> Result<Trainer> {
        let saved = archive
            .manifest
            .get("config")
            .cloned()
            .ok_or_else(|| Error::Checkpoint("archive has no training config".into()))?;
        let saved: TrainConfig = serde_json::from_value(saved)
            .map_err(|e| Error::Checkpoint(format!("unreadable training config: {}", e)))?;
        let (a, b) = (saved.resume_fingerprint()?, config.resume_fingerprint()?);
        if a != b {
            return Err(Error::Checkpoint(format!(
                "config differs from the checkpoint's in: {}",
                differing_keys(&a, &b, "").join(", ")
            )));
        }
        let mut t = Trainer::new(config, corpus)?;
        archive.load_params(&t.model.params())?;
        let tensor = |k: &str| archive.tensors.get(k).cloned();
        let counter = |k: &str| archive.counters.get(k).copied();
        t.gen_opt.load_state("opt.gen", &tensor, &counter)?;
        if let Some(d) = &mut t.disc_opt {
            d.load_state("opt.disc", &tensor, &counter)?;
        }
        t.step = archive.step;
        Ok(t)
    }

    pub fn resume(config: TrainConfig, corpus: Corpus, path: &Path) -> Result<Trainer> {
        Trainer::from_archive(config, corpus, &Archive::load(path)?)
    }
}

fn logit(out: &DiscOutput) -> Result<Var> {
    out.logit.ok_or_else(|| {
        Error::Config("discriminator produced no score: training patch size differs from its configured input".into())
    })
}

fn mask(out: &DiscOutput) -> Result<Var> {
    out.mask
        .ok_or_else(|| Error::Config("fine-grained discriminator produced no mask".into()))
}

/// Dotted paths at which two JSON values differ.
fn differing_keys(a: &serde_json::Value, b: &serde_json::Value, prefix: &str) -> Vec<String> {
    use serde_json::Value;
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
            keys.sort();
            keys.dedup();
            keys.into_iter()
                .flat_map(|k| {
                    let p = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{}.{}", prefix, k)
                    };
                    differing_keys(x.get(k).unwrap_or(&Value::Null), y.get(k).unwrap_or(&Value::Null), &p)
                })
                .collect()
        }
        _ if a == b => Vec::new(),
        _ => vec![prefix.to_string()],
    }
}

/// Generator path restored from a training checkpoint, for inference.
pub fn load_generator(path: &Path) -> Result<(TrainConfig, SrModel)> {
    let archive = Archive::load(path)?;
    let config: TrainConfig = archive
        .manifest
        .get("config")
        .cloned()
        .ok_or_else(|| Error::Checkpoint(format!("{}: no training config in archive", path.display())))
        .and_then(|v| serde_json::from_value(v).map_err(|e| Error::Checkpoint(e.to_string())))?;
    let mut rng = Rng::seed_from_u64(config.seed);
    let model = SrModel::build_generator(config.generator_mode(), &config.model, &mut rng)?;
    archive.load_params(&model.generator.params())?;
    Ok((config, model))
}

/// Path of the checkpoint written at `step` inside `dir`.
pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("step_{:08}.ckpt", step))
}

/// Snapshot of every parameter value, for exact before/after comparisons.
pub fn snapshot(params: &[crate::param::Param]) -> Vec<Tensor> {
    params.iter().map(|p| p.value().clone()).collect()
}
