use std::fmt::Write;

use crate::error::{Error, Result};

/// Training recipe.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// First epoch trained at half the base learning rate.
    pub lr_halving_epoch: usize,
    /// LR patch side; the HR patch is `scale` times larger.
    pub patch_size: usize,
    pub seed: u64,
    pub ema_decay: f64,
    /// Write a checkpoint every this many epochs (0 = only the final one).
    pub checkpoint_every: usize,
    /// Optimizer steps per epoch; 0 means one pass over the dataset.
    pub steps_per_epoch: usize,
    /// Validation cadence in epochs (0 disables validation).
    pub val_every: usize,
    pub with_replacement: bool,
    /// Evaluate with the EMA shadow instead of the live weights.
    pub eval_ema: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            epochs: 700,
            lr: 2e-4,
            lr_halving_epoch: 600,
            patch_size: 64,
            seed: 0,
            ema_decay: 0.999,
            checkpoint_every: 50,
            steps_per_epoch: 0,
            val_every: 1,
            with_replacement: false,
            eval_ema: true,
        }
    }
}

pub const TRAIN_KEYS: &[&str] = &[
    "batch_size",
    "epochs",
    "lr",
    "lr_halving_epoch",
    "patch_size",
    "seed",
    "ema_decay",
    "checkpoint_every",
    "steps_per_epoch",
    "val_every",
    "with_replacement",
    "eval_ema",
];

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.lr_halving_epoch >= self.epochs {
            return bad(format!(
                "lr_halving_epoch {} must be below epochs {}",
                self.lr_halving_epoch, self.epochs
            ));
        }
        if self.patch_size == 0 || self.patch_size % 8 != 0 {
            return bad(format!("patch_size {} must be a positive multiple of 8", self.patch_size));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad(format!("ema_decay {} must lie in [0, 1)", self.ema_decay));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "lr_halving_epoch" => self.lr_halving_epoch = parse(key, value)?,
            "patch_size" => self.patch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "ema_decay" => self.ema_decay = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "steps_per_epoch" => self.steps_per_epoch = parse(key, value)?,
            "val_every" => self.val_every = parse(key, value)?,
            "with_replacement" => self.with_replacement = parse(key, value)?,
            "eval_ema" => self.eval_ema = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown training key '{other}'"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "batch_size" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "lr" => self.lr.to_string(),
            "lr_halving_epoch" => self.lr_halving_epoch.to_string(),
            "patch_size" => self.patch_size.to_string(),
            "seed" => self.seed.to_string(),
            "ema_decay" => self.ema_decay.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "steps_per_epoch" => self.steps_per_epoch.to_string(),
            "val_every" => self.val_every.to_string(),
            "with_replacement" => self.with_replacement.to_string(),
            "eval_ema" => self.eval_ema.to_string(),
            _ => return None,
        })
    }

    pub fn to_kv(&self, prefix: &str) -> String {
        let mut s = String::new();
        for key in TRAIN_KEYS {
            let _ = writeln!(s, "{prefix}{key}={}", self.get(key).unwrap());
        }
        s
    }
}

/// Learning rate for a zero-based epoch: the base rate, halved once from
/// `lr_halving_epoch` on.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(Error::Config(format!("epoch {epoch} outside 0..{}", cfg.epochs)));
    }
    Ok(if epoch >= cfg.lr_halving_epoch { cfg.lr * 0.5 } else { cfg.lr })
}
