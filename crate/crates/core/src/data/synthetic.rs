//! Procedural HR images so training and tests run without any download.

use std::f64::consts::PI;

use rand::{Rng as _, SeedableRng};

use crate::data::image::Image;
use crate::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pattern {
    Checkerboard,
    Gradient,
    SmoothNoise,
    RoughNoise,
}

impl Pattern {
    pub const ALL: [Pattern; 4] = [
        Pattern::Checkerboard,
        Pattern::Gradient,
        Pattern::SmoothNoise,
        Pattern::RoughNoise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pattern::Checkerboard => "checker",
            Pattern::Gradient => "gradient",
            Pattern::SmoothNoise => "smooth",
            Pattern::RoughNoise => "rough",
        }
    }
}

fn random_color(rng: &mut Rng) -> [f64; 3] {
    [
        rng.random_range(0.1..0.9),
        rng.random_range(0.1..0.9),
        rng.random_range(0.1..0.9),
    ]
}

pub fn checkerboard(size: usize, cell: usize, a: [f64; 3], b: [f64; 3]) -> Image {
    Image::from_fn(size, size, 3, |y, x, c| {
        if ((y / cell) + (x / cell)).is_multiple_of(2) {
            a[c]
        } else {
            b[c]
        }
    })
}

/// Linear blend from `a` to `b` along direction `angle` (radians).
pub fn gradient(size: usize, angle: f64, a: [f64; 3], b: [f64; 3]) -> Image {
    let (s, c) = angle.sin_cos();
    let span = (size.max(2) - 1) as f64 * (s.abs() + c.abs());
    let origin = if c < 0.0 { -(size as f64 - 1.0) * c } else { 0.0 }
        + if s < 0.0 { -(size as f64 - 1.0) * s } else { 0.0 };
    Image::from_fn(size, size, 3, |y, x, ch| {
        let t = ((x as f64 * c + y as f64 * s + origin) / span).clamp(0.0, 1.0);
        a[ch] * (1.0 - t) + b[ch] * t
    })
}

/// Sum of random plane waves with spatial frequencies up to `max_cycles`
/// per image side, normalised into `[0.05, 0.95]`.
pub fn band_limited_noise(size: usize, max_cycles: f64, waves: usize, rng: &mut Rng) -> Image {
    let comps: Vec<(f64, f64, f64, [f64; 3])> = (0..waves)
        .map(|_| {
            let f = rng.random_range(0.5..max_cycles);
            let theta = rng.random_range(0.0..PI);
            let phase = rng.random_range(0.0..2.0 * PI);
            let amp = random_color(rng);
            (f * theta.cos(), f * theta.sin(), phase, amp)
        })
        .collect();
    let raw = Image::from_fn(size, size, 3, |y, x, ch| {
        let (u, v) = (x as f64 / size as f64, y as f64 / size as f64);
        comps
            .iter()
            .map(|(fx, fy, ph, amp)| amp[ch] * (2.0 * PI * (fx * u + fy * v) + ph).sin())
            .sum()
    });
    let lo = raw.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = (hi - lo).max(1e-12);
    let data = raw.data().iter().map(|v| 0.05 + 0.9 * (v - lo) / range).collect();
    Image::new(size, size, 3, data).expect("same size")
}

pub fn generate(pattern: Pattern, size: usize, rng: &mut Rng) -> Image {
    match pattern {
        Pattern::Checkerboard => {
            let cell = rng.random_range(2..=(size / 4).max(2));
            checkerboard(size, cell, random_color(rng), random_color(rng))
        }
        Pattern::Gradient => {
            let angle = rng.random_range(0.0..2.0 * PI);
            gradient(size, angle, random_color(rng), random_color(rng))
        }
        Pattern::SmoothNoise => band_limited_noise(size, 3.0, 4, rng),
        Pattern::RoughNoise => band_limited_noise(size, size as f64 / 4.0, 24, rng),
    }
}

/// `count` square images cycling through every [`Pattern`], named
/// `<pattern>_<index>`.
pub fn corpus(count: usize, size: usize, seed: u64) -> Vec<(String, Image)> {
    let mut rng = Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let p = Pattern::ALL[i % Pattern::ALL.len()];
            (format!("{}_{:03}", p.name(), i), generate(p, size, &mut rng))
        })
        .collect()
}
