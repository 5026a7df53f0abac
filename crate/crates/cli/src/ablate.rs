//! `ablate`: train a matrix of model variants and compare them.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use fasrgan::data::{list_png, synthetic, Corpus, Image};
use fasrgan::infer::upscale;
use fasrgan::metrics::{evaluate_pair, Aggregates, EvalOptions, EvalReport};
use fasrgan::model::{Mode, SrModel};
use fasrgan::trainer::TrainConfig;
use fasrgan::{Module, Param};
use serde::{Deserialize, Serialize};

use crate::error::{usage, CliResult};
use crate::run::{self, to_json, write_atomic, RunOptions};

/// One variant: a preset name (`fasrgan`, `fasrgan-no-attention`,
/// `fs-srgan`, `fa-fs-srgan`, `fa-fs-srgan-no-attention`, `psnr-pretrain`,
/// or `E<e>G<g>`) or an explicit table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArmSpec {
    Preset(String),
    Custom(Arm),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arm {
    pub name: String,
    pub mode: Option<Mode>,
    pub attention_enabled: Option<bool>,
    /// RRDBs in the shared extractor.
    pub shared_blocks: Option<usize>,
    /// RRDBs in the generator trunk.
    pub trunk_blocks: Option<usize>,
}

/// Expands to one `E<e>G<g>` arm per entry of `shared_blocks`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    #[serde(default = "fa_fs")]
    pub mode: Mode,
    pub shared_blocks: Vec<usize>,
    pub trunk_blocks: usize,
}

fn fa_fs() -> Mode {
    Mode::FaFsSrgan
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    #[serde(default)]
    pub arms: Vec<ArmSpec>,
    pub sweep: Option<Sweep>,
    /// HR PNGs scored after training; a held-out synthetic set otherwise.
    pub eval_hr_dir: Option<PathBuf>,
    #[serde(default)]
    pub base: TrainConfig,
}

impl AblationConfig {
    pub fn load(path: &Path) -> CliResult<AblationConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {}", path.display(), e)))?;
        let c: AblationConfig = toml::from_str(&text).map_err(|e| usage(format!("{}: {}", path.display(), e)))?;
        c.base.validate()?;
        Ok(c)
    }

    /// Every arm, presets resolved and the sweep expanded.
    pub fn resolve(&self) -> CliResult<Vec<Arm>> {
        let mut arms: Vec<Arm> = self.arms.iter().map(resolve_arm).collect::<CliResult<_>>()?;
        if let Some(s) = &self.sweep {
            for &e in &s.shared_blocks {
                arms.push(Arm {
                    name: format!("E{}G{}", e, s.trunk_blocks),
                    mode: Some(s.mode),
                    attention_enabled: None,
                    shared_blocks: Some(e),
                    trunk_blocks: Some(s.trunk_blocks),
                });
            }
        }
        if arms.is_empty() {
            return Err(usage("the ablation config lists no arms"));
        }
        let mut names = HashSet::new();
        for a in &arms {
            if !names.insert(a.name.as_str()) {
                return Err(usage(format!("arm name '{}' appears twice", a.name)));
            }
            if a.name.is_empty() || a.name.contains(['/', '\\']) || a.name.starts_with('.') {
                return Err(usage(format!("arm name '{}' is not a valid directory name", a.name)));
            }
        }
        Ok(arms)
    }
}

fn resolve_arm(spec: &ArmSpec) -> CliResult<Arm> {
    let name = match spec {
        ArmSpec::Custom(a) => return Ok(a.clone()),
        ArmSpec::Preset(n) => n.clone(),
    };
    let arm = |mode, attention| Arm {
        name: name.clone(),
        mode: Some(mode),
        attention_enabled: attention,
        shared_blocks: None,
        trunk_blocks: None,
    };
    if let Some(base) = name.strip_suffix("-no-attention") {
        let mode: Mode = base.parse()?;
        if !mode.uses_fine_grained() {
            return Err(usage(format!("arm '{}': {} has no attention term", name, mode)));
        }
        return Ok(arm(mode, Some(false)));
    }
    if let Ok(mode) = name.parse::<Mode>() {
        return Ok(arm(mode, None));
    }
    let depths = name
        .strip_prefix('E')
        .and_then(|r| r.split_once('G'))
        .and_then(|(e, g)| Some((e.parse::<usize>().ok()?, g.parse::<usize>().ok()?)));
    match depths {
        Some((e, g)) => Ok(Arm {
            shared_blocks: Some(e),
            trunk_blocks: Some(g),
            ..arm(Mode::FaFsSrgan, None)
        }),
        None => Err(usage(format!("unknown arm '{}'", name))),
    }
}

impl Arm {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        if let Some(m) = self.mode {
            c.mode = m;
        }
        if let Some(a) = self.attention_enabled {
            c.attention_enabled = a;
        }
        if let Some(e) = self.shared_blocks {
            c.model.shared_blocks = e;
        }
        if let Some(g) = self.trunk_blocks {
            if c.generator_mode().uses_shared() {
                c.model.shared_mode_trunk_blocks = g;
            } else {
                c.model.generator.trunk.num_blocks = g;
            }
        }
        c
    }
}

fn count(params: &[Param]) -> usize {
    params.iter().map(Param::numel).sum()
}

/// Generator-path, discriminator-path and distinct total parameter counts.
pub fn param_counts(model: &SrModel) -> (usize, usize, usize) {
    let g = model.generator.params();
    let d = model.discriminator.as_ref().map(|d| d.params()).unwrap_or_default();
    let mut seen = HashSet::new();
    let total = count(&g.iter().chain(&d).filter(|p| seen.insert(p.id())).cloned().collect::<Vec<_>>());
    (count(&g), count(&d), total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub name: String,
    pub mode: Mode,
    pub attention_enabled: bool,
    pub shared_blocks: Option<usize>,
    pub trunk_blocks: usize,
    pub run_dir: PathBuf,
    pub steps: u64,
    pub generator_params: usize,
    pub discriminator_params: usize,
    pub total_params: usize,
    pub final_losses: BTreeMap<String, f64>,
    pub eval: Aggregates,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub eval_set: String,
    pub arms: Vec<ArmResult>,
}

impl Comparison {
    pub fn table(&self) -> String {
        let w = self.arms.iter().map(|a| a.name.len()).max().unwrap_or(0).max(3);
        let mut s = format!(
            "{:<w$}  {:<13}  {:>4}  {:>2}  {:>2}  {:>9}  {:>9}  {:>9}  {:>8}  {:>8}\n",
            "arm", "mode", "attn", "E", "G", "gen_par", "disc_par", "psnr_y", "rmse", "ssim"
        );
        for a in &self.arms {
            let e = a.shared_blocks.map_or_else(|| "-".to_string(), |e| e.to_string());
            s += &format!(
                "{:<w$}  {:<13}  {:>4}  {:>2}  {:>2}  {:>9}  {:>9}  {:>9.4}  {:>8.5}  {:>8.5}\n",
                a.name,
                a.mode.name(),
                if a.attention_enabled { "on" } else { "off" },
                e,
                a.trunk_blocks,
                a.generator_params,
                a.discriminator_params,
                a.eval.psnr_y,
                a.eval.rmse,
                a.eval.ssim
            );
        }
        s
    }
}

fn eval_corpus(config: &AblationConfig) -> CliResult<(String, Corpus)> {
    let scale = config.base.data.scale;
    match &config.eval_hr_dir {
        Some(dir) => {
            let images = list_png(dir)?
                .into_iter()
                .map(|p| {
                    let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    Ok((id, Image::load_png(&p)?))
                })
                .collect::<fasrgan::Result<Vec<_>>>()?;
            Ok((dir.display().to_string(), Corpus::from_hr_images(images, scale)?))
        }
        None => {
            let size = config.base.synthetic.map_or(64, |s| s.size);
            let seed = config.base.seed.wrapping_add(1_000_003);
            let images = synthetic::corpus(4, size, seed);
            Ok((format!("synthetic:4x{}:seed{}", size, seed), Corpus::from_hr_images(images, scale)?))
        }
    }
}

fn score(model: &SrModel, corpus: &Corpus) -> CliResult<Aggregates> {
    let opts = EvalOptions {
        border_crop: corpus.scale(),
        scale: Some(corpus.scale()),
        ..EvalOptions::default()
    };
    let records = corpus
        .pairs()
        .iter()
        .map(|p| evaluate_pair(&p.id, &upscale(&model.generator, &p.lr)?, &p.hr, &opts))
        .collect::<fasrgan::Result<Vec<_>>>()?;
    Ok(EvalReport::from_records(records, Vec::new(), opts)?.aggregates)
}

/// Trains each arm in `<dir>/<arm>/` and writes `comparison.json` and
/// `comparison.txt` to `dir`.
pub fn ablate(config: &AblationConfig, dir: &Path, opts: &RunOptions) -> CliResult<Comparison> {
    let arms = config.resolve()?;
    let configs: Vec<TrainConfig> = arms.iter().map(|a| a.apply(&config.base)).collect();
    for (a, c) in arms.iter().zip(&configs) {
        c.validate()
            .map_err(|e| usage(format!("arm '{}': {}", a.name, e)))?;
    }
    let (eval_set, eval) = eval_corpus(config)?;
    let mut results = Vec::new();
    for (arm, cfg) in arms.iter().zip(configs) {
        eprintln!("arm {}: {} for {} steps", arm.name, cfg.mode, cfg.total_steps);
        let run_dir = dir.join(&arm.name);
        let out = run::start(cfg.clone(), &run_dir, opts)?;
        let model = out.trainer.model();
        let (g, d, total) = param_counts(model);
        let gen_mode = cfg.generator_mode();
        results.push(ArmResult {
            name: arm.name.clone(),
            mode: cfg.mode,
            attention_enabled: cfg.attention_enabled && gen_mode.uses_fine_grained(),
            shared_blocks: gen_mode.uses_shared().then_some(cfg.model.shared_blocks),
            trunk_blocks: if gen_mode.uses_shared() {
                cfg.model.shared_mode_trunk_blocks
            } else {
                cfg.model.generator.trunk.num_blocks
            },
            run_dir,
            steps: out.trainer.step_count(),
            generator_params: g,
            discriminator_params: d,
            total_params: total,
            final_losses: out.last.map(|r| r.values.into_iter().collect()).unwrap_or_default(),
            eval: score(model, &eval)?,
        });
    }
    let cmp = Comparison {
        eval_set,
        arms: results,
    };
    write_atomic(&dir.join("comparison.json"), &to_json(&cmp)?)?;
    write_atomic(&dir.join("comparison.txt"), cmp.table().as_bytes())?;
    Ok(cmp)
}
