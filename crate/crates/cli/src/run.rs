//! Run directories, manifests and the training driver shared by `train`
//! and `ablate`.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use fasrgan::data::Image;
use fasrgan::infer::upscale;
use fasrgan::trainer::{checkpoint_path, parse_log_line, MetricsLog, StepRecord, TrainConfig, Trainer};
use serde::{Deserialize, Serialize};

use crate::error::{io, runtime, usage, CliResult};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunPaths {
    pub run_dir: PathBuf,
    pub checkpoints: PathBuf,
    pub log: PathBuf,
    pub samples: PathBuf,
}

impl RunPaths {
    pub fn under(run_dir: &Path) -> RunPaths {
        RunPaths {
            run_dir: run_dir.to_path_buf(),
            checkpoints: run_dir.join("checkpoints"),
            log: run_dir.join("logs").join("metrics.log"),
            samples: run_dir.join("samples"),
        }
    }

    fn create(&self) -> CliResult {
        for d in [&self.checkpoints, &self.samples, &self.run_dir.join("logs")] {
            std::fs::create_dir_all(d).map_err(|e| io(d, e))?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Running,
    Finished,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resumption {
    pub at: String,
    pub from_step: u64,
}

/// Everything needed to reproduce a run; one per run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub deterministic: bool,
    pub config: TrainConfig,
    pub started: String,
    pub finished: Option<String>,
    pub status: Status,
    pub step: u64,
    pub last_checkpoint: Option<PathBuf>,
    pub last_checkpoint_step: Option<u64>,
    pub error: Option<String>,
    pub resumptions: Vec<Resumption>,
    pub paths: RunPaths,
}

impl RunManifest {
    pub fn load(run_dir: &Path) -> CliResult<RunManifest> {
        let path = run_dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| usage(format!("{}: {}", path.display(), e)))?;
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {}", path.display(), e)))
    }

    fn save(&self) -> CliResult {
        write_atomic(&self.paths.run_dir.join(MANIFEST), &to_json(self)?)
    }
}

pub fn now() -> String {
    chrono::Local::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, false)
}

pub fn to_json<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value).map_err(|e| runtime(e.to_string()))?;
    v.push(b'\n');
    Ok(v)
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult {
    let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
    std::fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(bytes).and_then(|_| f.sync_all()))
        .map_err(|e| io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io(path, e))
}

/// A fresh `<runs_dir>/<timestamp>-<label>` directory.
pub fn new_run_dir(runs_dir: &Path, label: &str) -> CliResult<PathBuf> {
    let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S");
    std::fs::create_dir_all(runs_dir).map_err(|e| io(runs_dir, e))?;
    for n in 0.. {
        let name = match n {
            0 => format!("{}-{}", stamp, label),
            n => format!("{}-{}-{}", stamp, label, n),
        };
        let dir = runs_dir.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(io(&dir, e)),
        }
    }
    unreachable!()
}

/// Reads a training config from TOML, or from the `config` field of a
/// run manifest when the path ends in `.json`.
pub fn load_config(path: &Path) -> CliResult<TrainConfig> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {}", path.display(), e)))?;
        let m: RunManifest = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {}", path.display(), e)))?;
        m.config.validate()?;
        return Ok(m.config);
    }
    if !path.is_file() {
        return Err(usage(format!("{}: no such config file", path.display())));
    }
    Ok(TrainConfig::load(path)?)
}

fn latest_checkpoint(dir: &Path) -> CliResult<Option<(u64, PathBuf)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| io(dir, e))?;
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in entries {
        let path = entry.map_err(|e| io(dir, e))?.path();
        let step = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("step_")?.strip_suffix(".ckpt")?.parse::<u64>().ok());
        if let Some(s) = step {
            if best.as_ref().is_none_or(|(b, _)| s > *b) {
                best = Some((s, path));
            }
        }
    }
    Ok(best)
}

/// Drops log lines for steps at or after `step`, so a resumed run's log
/// matches an uninterrupted one.
fn truncate_log(path: &Path, step: u64) -> CliResult {
    if !path.exists() {
        return Ok(());
    }
    let f = std::fs::File::open(path).map_err(|e| io(path, e))?;
    let mut kept = String::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| io(path, e))?;
        let s = parse_log_line(&line)
            .into_iter()
            .find(|(k, _)| k == "step")
            .and_then(|(_, v)| v.parse::<u64>().ok());
        if s.is_some_and(|s| s < step) {
            kept.push_str(&line);
            kept.push('\n');
        }
    }
    write_atomic(path, kept.as_bytes())
}

/// Upscales a central crop of the first training image.
fn write_sample(trainer: &Trainer, path: &Path) -> CliResult {
    let Some(pair) = trainer.corpus().pairs().first() else {
        return Ok(());
    };
    let (h, w) = pair.lr.dims();
    let (ch, cw) = (h.min(32), w.min(32));
    let crop = pair.lr.crop((h - ch) / 2, (w - cw) / 2, ch, cw)?;
    let sr: Image = upscale(&trainer.model().generator, &crop)?;
    sr.save_png(path)?;
    Ok(())
}

pub struct RunOptions {
    pub deterministic: bool,
    /// Print a progress line this many times over the run.
    pub progress_lines: u64,
}

pub struct RunOutcome {
    pub manifest: RunManifest,
    pub last: Option<StepRecord>,
    pub trainer: Trainer,
}

/// Trains in a fresh run directory.
pub fn start(config: TrainConfig, run_dir: &Path, opts: &RunOptions) -> CliResult<RunOutcome> {
    let paths = RunPaths::under(run_dir);
    paths.create()?;
    let corpus = config.load_corpus()?;
    let trainer = Trainer::new(config.clone(), corpus)?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        deterministic: opts.deterministic,
        config,
        started: now(),
        finished: None,
        status: Status::Running,
        step: 0,
        last_checkpoint: None,
        last_checkpoint_step: None,
        error: None,
        resumptions: Vec::new(),
        paths,
    };
    drive(trainer, manifest, opts)
}

/// Continues the run in `run_dir` from its newest checkpoint. `config`
/// replaces the recorded one and may only differ in `total_steps` and
/// `checkpoint_every`.
pub fn resume(run_dir: &Path, config: Option<TrainConfig>, opts: &RunOptions) -> CliResult<RunOutcome> {
    let mut manifest = RunManifest::load(run_dir)?;
    manifest.paths = RunPaths::under(run_dir);
    let config = config.unwrap_or_else(|| manifest.config.clone());
    let (step, ckpt) = latest_checkpoint(&manifest.paths.checkpoints)?
        .ok_or_else(|| usage(format!("{}: no checkpoint to resume from", run_dir.display())))?;
    if let Some(recorded) = manifest.last_checkpoint_step {
        if step < recorded {
            return Err(usage(format!(
                "newest checkpoint is step {} but the manifest records step {}",
                step, recorded
            )));
        }
    }
    let corpus = config.load_corpus()?;
    let trainer = Trainer::resume(config.clone(), corpus, &ckpt)?;
    if trainer.step_count() != step {
        return Err(runtime(format!(
            "{} holds step {}, expected {}",
            ckpt.display(),
            trainer.step_count(),
            step
        )));
    }
    truncate_log(&manifest.paths.log, step)?;
    manifest.config = config;
    manifest.status = Status::Running;
    manifest.finished = None;
    manifest.error = None;
    manifest.step = step;
    manifest.resumptions.push(Resumption { at: now(), from_step: step });
    drive(trainer, manifest, opts)
}

fn drive(mut trainer: Trainer, mut manifest: RunManifest, opts: &RunOptions) -> CliResult<RunOutcome> {
    manifest.save()?;
    let mut log = MetricsLog::open(&manifest.paths.log)?;
    let total = trainer.config().total_steps;
    let every = trainer.config().checkpoint_every;
    let report = (total / opts.progress_lines.max(1)).max(1);
    let mut last = None;
    let result = trainer.run(&mut |t, rec| {
        log.write(rec).map_err(|source| fasrgan::Error::Io {
            path: manifest.paths.log.clone(),
            source,
        })?;
        let done = rec.step + 1;
        if done % every == 0 || done == total {
            let path = checkpoint_path(&manifest.paths.checkpoints, done);
            t.save_checkpoint(&path)?;
            let sample = manifest.paths.samples.join(format!("step_{:08}.png", done));
            write_sample(t, &sample).map_err(|e| fasrgan::Error::Checkpoint(e.to_string()))?;
            manifest.last_checkpoint = Some(path);
            manifest.last_checkpoint_step = Some(done);
            manifest.step = done;
            manifest
                .save()
                .map_err(|e| fasrgan::Error::Checkpoint(e.to_string()))?;
        }
        if done % report == 0 || done == total {
            eprintln!("[{}/{}] {}", done, total, rec.log_line());
        }
        last = Some(rec.clone());
        Ok(())
    });
    manifest.step = trainer.step_count();
    manifest.finished = Some(now());
    match result {
        Ok(()) => {
            manifest.status = Status::Finished;
            manifest.save()?;
            Ok(RunOutcome {
                manifest,
                last,
                trainer,
            })
        }
        Err(e) => {
            manifest.status = Status::Failed;
            manifest.error = Some(e.to_string());
            manifest.save()?;
            Err(e.into())
        }
    }
}
