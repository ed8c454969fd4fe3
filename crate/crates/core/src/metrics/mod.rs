//! PSNR / SSIM on 8-bit images and dataset-level reports.

mod report;

pub use report::{baseline_upscale, evaluate, evaluate_with, ClassScore, ImageScore, MetricReport};

use crate::data::Image;
use crate::error::{Error, Result};

pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ColorSpace {
    #[default]
    Rgb,
    /// ITU-R BT.601 luma on the [16, 235] studio range.
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MetricOptions {
    /// Border pixels removed from each side before measuring.
    pub shave: usize,
    pub color: ColorSpace,
}

pub fn luma(rgb: [u8; 3]) -> f64 {
    16.0 + (65.481 * rgb[0] as f64 + 128.553 * rgb[1] as f64 + 24.966 * rgb[2] as f64) / 255.0
}

/// Sample planes on the [0, 255] scale after shaving, plus their (w, h).
fn planes(img: &Image, opts: &MetricOptions) -> Result<(Vec<Vec<f64>>, usize, usize)> {
    let s = opts.shave;
    if img.width() <= 2 * s || img.height() <= 2 * s {
        return Err(Error::Dim(format!("shave {s} removes all of a {}x{} image", img.width(), img.height())));
    }
    let (w, h) = (img.width() - 2 * s, img.height() - 2 * s);
    let n = match opts.color {
        ColorSpace::Rgb => 3,
        ColorSpace::Y => 1,
    };
    let mut out = vec![Vec::with_capacity(w * h); n];
    for y in s..s + h {
        for x in s..s + w {
            let px = img.pixel(x, y);
            match opts.color {
                ColorSpace::Rgb => (0..3).for_each(|c| out[c].push(px[c] as f64)),
                ColorSpace::Y => out[0].push(luma(px)),
            }
        }
    }
    Ok((out, w, h))
}

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::Dim(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// 10·log10(255² / MSE), capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image, opts: &MetricOptions) -> Result<f64> {
    check_dims(a, b)?;
    let (pa, _, _) = planes(a, opts)?;
    let (pb, _, _) = planes(b, opts)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (x, y) in pa.iter().zip(&pb) {
        for (u, v) in x.iter().zip(y) {
            sum += (u - v) * (u - v);
        }
        count += x.len();
    }
    let mse = sum / count as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (255.0 * 255.0 / mse).log10()).min(PSNR_CAP))
}

pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Separable valid-mode filtering of a w×h plane.
fn filter(p: &[f64], w: usize, h: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| g[i] * p[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| g[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
    let g = gaussian_window();
    let c1 = (SSIM_K1 * 255.0).powi(2);
    let c2 = (SSIM_K2 * 255.0).powi(2);
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter(a, w, h, &g);
    let mu_b = filter(b, w, h, &g);
    let aa = filter(&prod(&|x, _| x * x), w, h, &g);
    let bb = filter(&prod(&|_, y| y * y), w, h, &g);
    let ab = filter(&prod(&|x, y| x * y), w, h, &g);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / n as f64
}

/// Mean structural similarity over valid 11×11 Gaussian windows, averaged
/// over channels.
pub fn ssim(a: &Image, b: &Image, opts: &MetricOptions) -> Result<f64> {
    check_dims(a, b)?;
    let (pa, w, h) = planes(a, opts)?;
    let (pb, _, _) = planes(b, opts)?;
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Dim(format!("{w}x{h} image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")));
    }
    let sum: f64 = pa.iter().zip(&pb).map(|(x, y)| ssim_plane(x, y, w, h)).sum();
    Ok(sum / pa.len() as f64)
}
