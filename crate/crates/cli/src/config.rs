//! Run configuration: model, training recipe and paths in one key=value file.

use std::fmt::Write;
use std::fs;
use std::path::{Path, PathBuf};

use mbt_core::kv::parse_lines;
use mbt_core::model::{ModelConfig, MODEL_KEYS};
use mbt_core::train::{TrainConfig, TRAIN_KEYS};
use mbt_core::{Error, Result};

pub const PATH_KEYS: &[&str] = &["train_dir", "val_dir", "test_dir", "checkpoint", "out_dir"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub train_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
    pub test_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            train_dir: None,
            val_dir: None,
            test_dir: None,
            checkpoint: None,
            out_dir: PathBuf::from("runs/mbt"),
        }
    }
}

impl RunConfig {
    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut cfg = Self::default();
        for (k, v) in parse_lines(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))? {
            if PATH_KEYS.contains(&k.as_str()) && !v.is_empty() && Path::new(&v).is_relative() {
                cfg.set(&k, &base.join(&v).to_string_lossy())?;
            } else {
                cfg.set(&k, &v)?;
            }
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = || (!value.is_empty()).then(|| PathBuf::from(value));
        match key {
            "train_dir" => self.train_dir = path(),
            "val_dir" => self.val_dir = path(),
            "test_dir" => self.test_dir = path(),
            "checkpoint" => self.checkpoint = path(),
            "out_dir" => self.out_dir = PathBuf::from(value),
            k if MODEL_KEYS.contains(&k) => self.model.set(k, value)?,
            k if TRAIN_KEYS.contains(&k) => self.train.set(k, value)?,
            k => return Err(Error::Config(format!("unknown config key '{k}'"))),
        }
        Ok(())
    }

    /// Applies `key=value` overrides given on the command line.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{o}' is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    /// Every key with its resolved value.
    pub fn to_kv(&self) -> String {
        let mut s = String::from("# model\n");
        s.push_str(&self.model.to_kv());
        s.push_str("# training\n");
        s.push_str(&self.train.to_kv(""));
        s.push_str("# paths\n");
        let show = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        for (k, v) in [
            ("train_dir", show(&self.train_dir)),
            ("val_dir", show(&self.val_dir)),
            ("test_dir", show(&self.test_dir)),
            ("checkpoint", show(&self.checkpoint)),
            ("out_dir", self.out_dir.display().to_string()),
        ] {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}
