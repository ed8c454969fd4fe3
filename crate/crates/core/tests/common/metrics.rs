//! Direct-definition PSNR/SSIM: nested loops, 2-D window, centred moments.

use mbt_core::data::Image;
use mbt_core::metrics::{ColorSpace, MetricOptions, PSNR_CAP};
use mbt_core::Rng;

fn samples(img: &Image, o: &MetricOptions) -> Vec<Vec<Vec<f64>>> {
    let s = o.shave;
    let (w, h) = (img.width() - 2 * s, img.height() - 2 * s);
    let chans = if o.color == ColorSpace::Y { 1 } else { 3 };
    (0..chans)
        .map(|c| {
            (0..h)
                .map(|y| {
                    (0..w)
                        .map(|x| {
                            let [r, g, b] = img.pixel(x + s, y + s);
                            if o.color == ColorSpace::Y {
                                16.0 + (65.481 * r as f64 + 128.553 * g as f64 + 24.966 * b as f64) / 255.0
                            } else {
                                [r, g, b][c] as f64
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

pub fn naive_psnr(a: &Image, b: &Image, o: &MetricOptions) -> f64 {
    let (pa, pb) = (samples(a, o), samples(b, o));
    let (mut se, mut n) = (0.0, 0.0);
    for c in 0..pa.len() {
        for y in 0..pa[c].len() {
            for x in 0..pa[c][y].len() {
                se += (pa[c][y][x] - pb[c][y][x]).powi(2);
                n += 1.0;
            }
        }
    }
    if se == 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (255.0f64.powi(2) / (se / n)).log10()).min(PSNR_CAP)
}

/// Windowed statistics computed directly with a 2-D Gaussian and centred
/// second moments.
pub fn naive_ssim(a: &Image, b: &Image, o: &MetricOptions) -> f64 {
    let (pa, pb) = (samples(a, o), samples(b, o));
    let mut win = [[0.0; 11]; 11];
    let mut total = 0.0;
    for (dy, row) in win.iter_mut().enumerate() {
        for (dx, v) in row.iter_mut().enumerate() {
            let (u, w) = (dx as f64 - 5.0, dy as f64 - 5.0);
            *v = (-(u * u + w * w) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let mut per_channel = 0.0;
    for c in 0..pa.len() {
        let (h, w) = (pa[c].len(), pa[c][0].len());
        let mut sum = 0.0;
        let mut count = 0.0;
        for y in 0..=h - 11 {
            for x in 0..=w - 11 {
                let mut m = [0.0; 2];
                for dy in 0..11 {
                    for dx in 0..11 {
                        let g = win[dy][dx] / total;
                        m[0] += g * pa[c][y + dy][x + dx];
                        m[1] += g * pb[c][y + dy][x + dx];
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for dy in 0..11 {
                    for dx in 0..11 {
                        let g = win[dy][dx] / total;
                        let (da, db) = (pa[c][y + dy][x + dx] - m[0], pb[c][y + dy][x + dx] - m[1]);
                        va += g * da * da;
                        vb += g * db * db;
                        cov += g * da * db;
                    }
                }
                sum += (2.0 * m[0] * m[1] + c1) * (2.0 * cov + c2) / ((m[0] * m[0] + m[1] * m[1] + c1) * (va + vb + c2));
                count += 1.0;
            }
        }
        per_channel += sum / count;
    }
    per_channel / pa.len() as f64
}

pub fn random_pair(seed: u64) -> (Image, Image) {
    let mut rng = Rng::new(seed);
    let w = 13 + rng.below(12);
    let h = 13 + rng.below(12);
    let noise = 1 + rng.below(60) as i32;
    let base: Vec<u8> = (0..w * h * 3).map(|_| rng.below(256) as u8).collect();
    let other: Vec<u8> = base
        .iter()
        .map(|&v| (v as i32 + rng.below(2 * noise as usize + 1) as i32 - noise).clamp(0, 255) as u8)
        .collect();
    (Image::new(w, h, base).unwrap(), Image::new(w, h, other).unwrap())
}
