use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fasrgan::data::{DatasetConfig, Image};
use fasrgan::generator::{GeneratorConfig, RrdbConfig};
use fasrgan::infer::{upscale, upscale_tiled, TileOptions};
use fasrgan::model::{DiscriminatorSettings, Mode, ModelConfig, SrModel};
use fasrgan::trainer::{SyntheticSource, TrainConfig, Trainer};
use fasrgan::Rng;
use rand::SeedableRng;

fn model_config(blocks: usize) -> ModelConfig {
    ModelConfig {
        generator: GeneratorConfig {
            channels: 3,
            scale: 4,
            trunk: RrdbConfig {
                num_features: 16,
                growth: 8,
                num_blocks: blocks,
                residual_scale: 0.2,
            },
        },
        shared_blocks: 1,
        shared_mode_trunk_blocks: blocks,
        discriminator: DiscriminatorSettings {
            base_channels: 8,
            depth: 3,
            stages: 3,
            fc_hidden: 32,
            single_channel_mask: false,
        },
    }
}

fn lr_image(side: usize) -> Image {
    Image::from_fn(side, side, 3, |y, x, c| ((y * 13 + x * 7 + c * 29) % 64) as f64 / 63.0)
}

fn generator(c: &mut Criterion) {
    let mut group = c.benchmark_group("generator_inference");
    group.sample_size(10);
    for blocks in [1, 2] {
        let model = SrModel::build_generator(Mode::Fasrgan, &model_config(blocks), &mut Rng::seed_from_u64(0)).unwrap();
        let lr = lr_image(32);
        group.bench_with_input(BenchmarkId::new("whole_32px", blocks), &lr, |b, lr| {
            b.iter(|| black_box(upscale(&model.generator, lr).unwrap()))
        });
    }
    let model = SrModel::build_generator(Mode::Fasrgan, &model_config(1), &mut Rng::seed_from_u64(0)).unwrap();
    let lr = lr_image(64);
    group.bench_function("tiled_64px_tile32", |b| {
        b.iter(|| black_box(upscale_tiled(&model.generator, &lr, TileOptions { tile: 32, overlap: 16 }).unwrap()))
    });
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    for mode in [Mode::PsnrPretrain, Mode::Fasrgan, Mode::FsSrgan, Mode::FaFsSrgan] {
        let config = TrainConfig {
            mode,
            pretrain_steps: 0,
            total_steps: u64::MAX,
            data: DatasetConfig {
                patch_size_lr: 12,
                batch_size: 4,
                ..DatasetConfig::default()
            },
            synthetic: Some(SyntheticSource {
                count: 4,
                size: 64,
                seed: 0,
            }),
            model: model_config(1),
            ..TrainConfig::default()
        };
        let corpus = config.load_corpus().unwrap();
        let mut trainer = Trainer::new(config, corpus).unwrap();
        group.bench_function(mode.name(), |b| b.iter(|| black_box(trainer.step().unwrap())));
    }
    group.finish();
}

criterion_group!(benches, generator, train_step);
criterion_main!(benches);
