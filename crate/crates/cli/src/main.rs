//! `fasrgan`: data preparation, training, inference, evaluation and
//! ablation for FASRGAN-family super-resolution models.

mod ablate;
mod error;
mod infer;
mod prepare;
mod run;
mod synth;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fasrgan::infer::TileOptions;
use fasrgan::metrics::{evaluate_dir, EvalOptions, ExternalScorer};

use crate::error::{io, CliError, CliResult};
use crate::run::{to_json, write_atomic, RunOptions};

#[derive(Parser, Debug)]
#[command(name = "fasrgan", version, about = "Fine-grained attention and feature-sharing super-resolution GANs")]
struct Cli {
    /// Overrides the seed of the config (train, ablate) or the generator (synth).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Records that the run must be bit-reproducible. All computation is
    /// single-threaded with a fixed reduction order, so this holds anyway.
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write bicubic LR images under <out-dir>/X<scale>/, skipping unchanged ones.
    Prepare {
        #[arg(long)]
        hr_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 4)]
        scale: usize,
    },
    /// Train a model from a TOML config (or a run manifest.json).
    Train {
        /// Config file; optional with --resume, where the recorded one is reused.
        #[arg(long, required_unless_present = "resume")]
        config: Option<PathBuf>,
        /// Run directory to continue from its newest checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Parent of new run directories.
        #[arg(long, default_value = "runs")]
        runs_dir: PathBuf,
    },
    /// Upscale a PNG or every PNG of a directory.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Output file, or directory when the input is a directory.
        #[arg(long)]
        out: PathBuf,
        /// Expected upscaling factor; refused if the checkpoint differs.
        #[arg(long)]
        scale: Option<usize>,
        /// Tile side in LR pixels.
        #[arg(long, default_value_t = 128)]
        tile: usize,
        /// Tile overlap in LR pixels.
        #[arg(long, default_value_t = 16)]
        overlap: usize,
        /// Process each image in one pass.
        #[arg(long)]
        no_tile: bool,
    },
    /// Score SR images against HR images with the same file stem.
    Eval {
        #[arg(long)]
        sr_dir: PathBuf,
        #[arg(long)]
        hr_dir: PathBuf,
        /// Upscaling factor of the images.
        #[arg(long)]
        scale: Option<usize>,
        /// Crop a border as wide as the scale factor before scoring.
        #[arg(long, requires = "scale")]
        crop_border: bool,
        /// Crop this many pixels from each border instead.
        #[arg(long, conflicts_with = "crop_border")]
        border: Option<usize>,
        /// Compute RMSE on RGB rather than luma.
        #[arg(long)]
        rmse_rgb: bool,
        /// Command printing a perceptual score for the image path appended to it.
        #[arg(long)]
        scorer: Option<String>,
        /// Directory for report.json and scatter.csv.
        #[arg(long, default_value = "eval-report")]
        out_dir: PathBuf,
    },
    /// Train and compare the arms listed in an ablation config.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "runs")]
        runs_dir: PathBuf,
    },
    /// Write the procedural training corpus as PNG files.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
}

fn run_options(cli: &Cli) -> RunOptions {
    RunOptions {
        deterministic: cli.deterministic,
        progress_lines: 20,
    }
}

fn cmd_train(cli: &Cli, config: Option<&Path>, resume: Option<&Path>, runs_dir: &Path) -> CliResult {
    let mut config = config.map(run::load_config).transpose()?;
    if let (Some(c), Some(seed)) = (config.as_mut(), cli.seed) {
        c.seed = seed;
    }
    let out = match resume {
        Some(dir) => run::resume(dir, config, &run_options(cli))?,
        None => {
            let config = config.expect("clap requires --config without --resume");
            let dir = run::new_run_dir(runs_dir, config.mode.name())?;
            println!("run directory: {}", dir.display());
            run::start(config, &dir, &run_options(cli))?
        }
    };
    println!("finished at step {} in {}", out.manifest.step, out.manifest.paths.run_dir.display());
    if let Some(ckpt) = &out.manifest.last_checkpoint {
        println!("checkpoint: {}", ckpt.display());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    sr_dir: &Path,
    hr_dir: &Path,
    scale: Option<usize>,
    crop_border: bool,
    border: Option<usize>,
    rmse_rgb: bool,
    scorer: Option<&str>,
    out_dir: &Path,
) -> CliResult {
    let options = EvalOptions {
        border_crop: if crop_border { scale.unwrap_or(0) } else { border.unwrap_or(0) },
        rmse_rgb,
        scale,
        scorer: scorer.map(ExternalScorer::parse).transpose()?,
    };
    let report = evaluate_dir(sr_dir, hr_dir, &options)?;
    print!("{}", report.table());
    std::fs::create_dir_all(out_dir).map_err(|e| io(out_dir, e))?;
    write_atomic(&out_dir.join("report.json"), &to_json(&report)?)?;
    write_atomic(&out_dir.join("scatter.csv"), report.scatter_csv().as_bytes())?;
    println!("report: {}", out_dir.join("report.json").display());
    Ok(())
}

fn dispatch(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Prepare { hr_dir, out_dir, scale } => {
            let s = prepare::prepare(hr_dir, out_dir, *scale)?;
            println!("written {}, skipped {}", s.written, s.skipped);
            Ok(())
        }
        Command::Train {
            config,
            resume,
            runs_dir,
        } => cmd_train(cli, config.as_deref(), resume.as_deref(), runs_dir),
        Command::Infer {
            checkpoint,
            input,
            out,
            scale,
            tile,
            overlap,
            no_tile,
        } => {
            let opts = infer::InferOptions {
                scale: *scale,
                tiles: (!no_tile).then_some(TileOptions {
                    tile: *tile,
                    overlap: *overlap,
                }),
            };
            for p in infer::infer(checkpoint, input, out, &opts)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Eval {
            sr_dir,
            hr_dir,
            scale,
            crop_border,
            border,
            rmse_rgb,
            scorer,
            out_dir,
        } => cmd_eval(
            sr_dir,
            hr_dir,
            *scale,
            *crop_border,
            *border,
            *rmse_rgb,
            scorer.as_deref(),
            out_dir,
        ),
        Command::Ablate { config, runs_dir } => {
            let mut cfg = ablate::AblationConfig::load(config)?;
            if let Some(seed) = cli.seed {
                cfg.base.seed = seed;
            }
            cfg.resolve()?;
            let dir = run::new_run_dir(runs_dir, "ablate")?;
            println!("ablation directory: {}", dir.display());
            let cmp = ablate::ablate(&cfg, &dir, &run_options(cli))?;
            print!("{}", cmp.table());
            Ok(())
        }
        Command::Synth { out, count, size } => {
            let written = synth::synth(out, *count, *size, cli.seed.unwrap_or(0))?;
            println!("wrote {} images to {}", written.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = match e {
                CliError::Usage(_) => "error",
                CliError::Runtime(_) => "failed",
            };
            eprintln!("{}: {}", kind, e);
            e.exit_code()
        }
    }
}
