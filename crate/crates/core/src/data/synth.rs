use std::f64::consts::PI;

use super::dataset::{Pair, PairDataset};
use super::degrade::make_lr;
use super::image::{quantize, Image};
use crate::error::{Error, Result};
use crate::tensor::Rng;

pub const CLASSES: [&str; 4] = ["grating", "checker", "blobs", "rects"];

fn color(rng: &mut Rng) -> [f64; 3] {
    [rng.uniform(), rng.uniform(), rng.uniform()]
}

fn render(size: usize, mut f: impl FnMut(f64, f64) -> [f64; 3]) -> Image {
    Image::from_fn(size, size, |x, y| f(x as f64, y as f64).map(quantize)).unwrap()
}

fn grating(size: usize, rng: &mut Rng) -> Image {
    let waves: Vec<_> = (0..2)
        .map(|_| {
            let theta = rng.uniform() * PI;
            let freq = rng.uniform_range(2.0, size as f64 / 6.0) / size as f64;
            let phase = rng.uniform() * 2.0 * PI;
            let amp = [0, 1, 2].map(|_| rng.uniform_range(0.1, 0.25));
            (theta.cos() * freq * 2.0 * PI, theta.sin() * freq * 2.0 * PI, phase, amp)
        })
        .collect();
    let base = color(rng).map(|c| 0.3 + 0.4 * c);
    render(size, |x, y| {
        let mut v = base;
        for &(kx, ky, ph, amp) in &waves {
            let s = (kx * x + ky * y + ph).sin();
            for c in 0..3 {
                v[c] += amp[c] * s;
            }
        }
        v
    })
}

fn checker(size: usize, rng: &mut Rng) -> Image {
    let period = 2 + rng.below(size / 8 - 1);
    let (ox, oy) = (rng.below(period), rng.below(period));
    let (a, b) = (color(rng), color(rng));
    render(size, |x, y| {
        let cell = (x as usize + ox) / period + (y as usize + oy) / period;
        if cell % 2 == 0 {
            a
        } else {
            b
        }
    })
}

fn blobs(size: usize, rng: &mut Rng) -> Image {
    let bg = color(rng).map(|c| 0.5 * c);
    let s = size as f64;
    let blobs: Vec<_> = (0..3 + rng.below(4))
        .map(|_| {
            let (cx, cy) = (rng.uniform() * s, rng.uniform() * s);
            let sigma = rng.uniform_range(s / 16.0, s / 5.0);
            (cx, cy, sigma, color(rng).map(|c| c - 0.3))
        })
        .collect();
    render(size, |x, y| {
        let mut v = bg;
        for &(cx, cy, sigma, col) in &blobs {
            let g = (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * sigma * sigma)).exp();
            for c in 0..3 {
                v[c] += g * col[c];
            }
        }
        v.map(|c| c.clamp(0.0, 1.0))
    })
}

fn rects(size: usize, rng: &mut Rng) -> Image {
    let bg = color(rng);
    let rs: Vec<_> = (0..4 + rng.below(5))
        .map(|_| {
            let (x0, y0) = (rng.below(size), rng.below(size));
            let (w, h) = (1 + rng.below(size / 2), 1 + rng.below(size / 2));
            (x0, y0, x0 + w, y0 + h, color(rng))
        })
        .collect();
    render(size, |x, y| {
        let (x, y) = (x as usize, y as usize);
        rs.iter()
            .rev()
            .find(|r| x >= r.0 && x < r.2 && y >= r.1 && y < r.3)
            .map_or(bg, |r| r.4)
    })
}

/// One synthetic HR texture of the given class index.
pub fn synth_hr(class: usize, size: usize, rng: &mut Rng) -> Image {
    match class % CLASSES.len() {
        0 => grating(size, rng),
        1 => checker(size, rng),
        2 => blobs(size, rng),
        _ => rects(size, rng),
    }
}

/// `count` square HR images cycling through the texture classes, each with its
/// bicubic LR counterpart. Identifiers are `{class}_{index:03}`.
pub fn synth_dataset(count: usize, size: usize, scale: usize, seed: u64) -> Result<PairDataset> {
    if scale < 2 || size == 0 || size % (8 * scale) != 0 {
        return Err(Error::Config(format!("size {size} must be a positive multiple of 8*scale ({})", 8 * scale)));
    }
    let mut pairs = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = Rng::derive(seed, &[i as u64]);
        let hr = synth_hr(i, size, &mut rng);
        let lr = make_lr(&hr, scale)?;
        pairs.push(Pair { id: format!("{}_{i:03}", CLASSES[i % CLASSES.len()]), lr, hr });
    }
    PairDataset::new(scale, pairs)
}
