use std::fmt::Write;

use super::{psnr, ssim, MetricOptions};
use crate::data::{class_of, Image, PairDataset};
use crate::error::{Error, Result};
use crate::infer::infer_image;
use crate::model::{ModelConfig, ParamTree};
use crate::ops::{resample, ResampleMode};
use crate::tensor::Float;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageScore {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassScore {
    pub class: String,
    pub count: usize,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-image scores sorted by identifier, with overall and per-class means.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub images: Vec<ImageScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub classes: Vec<ClassScore>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl MetricReport {
    pub fn from_scores(mut images: Vec<ImageScore>) -> Self {
        images.sort_by(|a, b| a.id.cmp(&b.id));
        let mut classes: Vec<ClassScore> = Vec::new();
        let mut names: Vec<&str> = images.iter().filter_map(|s| class_of(&s.id)).collect();
        names.sort();
        names.dedup();
        for name in names {
            let members: Vec<&ImageScore> = images.iter().filter(|s| class_of(&s.id) == Some(name)).collect();
            classes.push(ClassScore {
                class: name.to_string(),
                count: members.len(),
                psnr: mean(members.iter().map(|s| s.psnr)),
                ssim: mean(members.iter().map(|s| s.ssim)),
            });
        }
        Self {
            mean_psnr: mean(images.iter().map(|s| s.psnr)),
            mean_ssim: mean(images.iter().map(|s| s.ssim)),
            images,
            classes,
        }
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let width = self.images.iter().map(|i| i.id.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(s, "{:<width$}  {:>9}  {:>7}", "image", "PSNR(dB)", "SSIM");
        for i in &self.images {
            let _ = writeln!(s, "{:<width$}  {:>9.4}  {:>7.5}", i.id, i.psnr, i.ssim);
        }
        if !self.classes.is_empty() {
            let _ = writeln!(s, "\n{:<width$}  {:>9}  {:>7}  {:>5}", "class", "PSNR(dB)", "SSIM", "n");
            for c in &self.classes {
                let _ = writeln!(s, "{:<width$}  {:>9.4}  {:>7.5}  {:>5}", c.class, c.psnr, c.ssim, c.count);
            }
        }
        let _ = writeln!(s, "\n{:<width$}  {:>9.4}  {:>7.5}  {:>5}", "mean", self.mean_psnr, self.mean_ssim, self.images.len());
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,class,psnr,ssim\n");
        for i in &self.images {
            let _ = writeln!(s, "{},{},{},{}", i.id, class_of(&i.id).unwrap_or(""), i.psnr, i.ssim);
        }
        s
    }
}

/// Scores `upscale(lr)` against every HR image of the dataset.
pub fn evaluate_with(
    dataset: &PairDataset,
    opts: &MetricOptions,
    mut upscale: impl FnMut(&Image) -> Result<Image>,
) -> Result<MetricReport> {
    let mut scores = Vec::with_capacity(dataset.len());
    for pair in dataset.pairs() {
        let sr = upscale(&pair.lr)?;
        scores.push(ImageScore {
            id: pair.id.clone(),
            psnr: psnr(&sr, &pair.hr, opts)?,
            ssim: ssim(&sr, &pair.hr, opts)?,
        });
    }
    Ok(MetricReport::from_scores(scores))
}

pub fn evaluate<T: Float>(
    params: &ParamTree<T>,
    cfg: &ModelConfig,
    dataset: &PairDataset,
    opts: &MetricOptions,
) -> Result<MetricReport> {
    if cfg.scale != dataset.scale() {
        return Err(Error::Config(format!(
            "model scale x{} does not match dataset scale x{}",
            cfg.scale,
            dataset.scale()
        )));
    }
    evaluate_with(dataset, opts, |lr| infer_image(params, cfg, lr))
}

/// Plain interpolation upscale computed in precision `T`, quantized to 8 bits.
pub fn baseline_upscale<T: Float>(lr: &Image, scale: usize, mode: ResampleMode) -> Result<Image> {
    Image::from_tensor(&resample(&lr.to_tensor::<T>(), scale, 1, mode)?, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset;
    use crate::model::init_weights;

    #[test]
    fn zero_model_matches_bilinear_baseline() {
        let ds = synth_dataset(4, 32, 2, 5).unwrap();
        let cfg = ModelConfig::tiny(2);
        let p = init_weights::<f32>(&cfg, 0).unwrap();
        let zero = p.map_values(|_, t| crate::Tensor::zeros(t.shape().to_vec()));
        let o = MetricOptions::default();
        let model = evaluate(&zero, &cfg, &ds, &o).unwrap();
        let base = evaluate_with(&ds, &o, |lr| baseline_upscale::<f32>(lr, 2, ResampleMode::Bilinear)).unwrap();
        assert_eq!(model, base);
        assert_eq!(model.classes.len(), 4);
        assert!(evaluate(&zero, &ModelConfig::tiny(3), &ds, &o).is_err());
    }

    #[test]
    fn order_does_not_change_means() {
        let scores: Vec<ImageScore> = (0..5)
            .map(|i| ImageScore { id: format!("c{}_{i}", i % 2), psnr: 20.0 + i as f64 * 0.37, ssim: 0.5 + 0.01 * i as f64 })
            .collect();
        let a = MetricReport::from_scores(scores.clone());
        let mut rev = scores.clone();
        rev.reverse();
        assert_eq!(a, MetricReport::from_scores(rev));
        let one = MetricReport::from_scores(scores[..1].to_vec());
        assert_eq!(one.mean_psnr, scores[0].psnr);
        assert!(a.to_csv().starts_with("id,class,psnr,ssim\n"));
    }
}
