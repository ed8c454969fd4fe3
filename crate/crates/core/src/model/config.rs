use std::fmt::Write;

use crate::error::{Error, Result};

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Upscaling factor r.
    pub scale: usize,
    /// Feature width C of the trunk.
    pub channels: usize,
    /// Number of context-aware blocks.
    pub n_cptb: usize,
    /// Back-projection transformer layers per block.
    pub n_spal: usize,
    pub heads: usize,
    /// Width SPAL lifts its input to before the branch split.
    pub c1: usize,
    /// Width each block reduces the trunk to before its branch split.
    pub c2: usize,
    pub pool_ratios: Vec<usize>,
    pub ffn_ratio: usize,
    pub cab_squeeze: usize,
    pub prm_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            scale: 4,
            channels: 96,
            n_cptb: 3,
            n_spal: 6,
            heads: 4,
            c1: 96,
            c2: 64,
            pool_ratios: vec![2, 4, 8],
            ffn_ratio: 2,
            cab_squeeze: 3,
            prm_hidden: 16,
        }
    }
}

pub const MODEL_KEYS: &[&str] = &[
    "scale",
    "channels",
    "n_cptb",
    "n_spal",
    "heads",
    "c1",
    "c2",
    "pool_ratios",
    "ffn_ratio",
    "cab_squeeze",
    "prm_hidden",
];

impl ModelConfig {
    /// Small configuration used by tests and gradient checks.
    pub fn tiny(scale: usize) -> Self {
        Self {
            scale,
            channels: 32,
            n_cptb: 1,
            n_spal: 2,
            heads: 2,
            c1: 32,
            c2: 32,
            ..Self::default()
        }
    }

    /// Spatial multiple every input side must be divisible by.
    pub fn spatial_multiple(&self) -> usize {
        self.pool_ratios.iter().copied().max().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(2..=4).contains(&self.scale) {
            return bad(format!("scale must be 2, 3 or 4, got {}", self.scale));
        }
        for (name, v) in [
            ("channels", self.channels),
            ("n_cptb", self.n_cptb),
            ("n_spal", self.n_spal),
            ("heads", self.heads),
            ("c1", self.c1),
            ("c2", self.c2),
            ("ffn_ratio", self.ffn_ratio),
            ("cab_squeeze", self.cab_squeeze),
            ("prm_hidden", self.prm_hidden),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.c1 % 2 != 0 || self.c2 % 2 != 0 {
            return bad(format!("c1 ({}) and c2 ({}) must be even", self.c1, self.c2));
        }
        if self.channels % self.heads != 0 {
            return bad(format!("channels {} not divisible by heads {}", self.channels, self.heads));
        }
        if (self.c1 / 2) % self.heads != 0 {
            return bad(format!("c1/2 = {} not divisible by heads {}", self.c1 / 2, self.heads));
        }
        let narrowest = (self.c1 / 2).min(self.c2 / 2);
        if narrowest < self.cab_squeeze {
            return bad(format!(
                "channel attention input width {narrowest} smaller than squeeze {}",
                self.cab_squeeze
            ));
        }
        if self.pool_ratios.is_empty() {
            return bad("pool_ratios must not be empty".into());
        }
        for (i, &r) in self.pool_ratios.iter().enumerate() {
            if r < 2 || !r.is_power_of_two() {
                return bad(format!("pool ratio {r} is not a power of two >= 2"));
            }
            if i > 0 && r <= self.pool_ratios[i - 1] {
                return bad(format!("pool_ratios {:?} must be strictly increasing", self.pool_ratios));
            }
        }
        Ok(())
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = || -> Result<usize> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key}: expected a non-negative integer, got '{value}'")))
        };
        match key {
            "scale" => self.scale = num()?,
            "channels" => self.channels = num()?,
            "n_cptb" => self.n_cptb = num()?,
            "n_spal" => self.n_spal = num()?,
            "heads" => self.heads = num()?,
            "c1" => self.c1 = num()?,
            "c2" => self.c2 = num()?,
            "ffn_ratio" => self.ffn_ratio = num()?,
            "cab_squeeze" => self.cab_squeeze = num()?,
            "prm_hidden" => self.prm_hidden = num()?,
            "pool_ratios" => {
                self.pool_ratios = value
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse()
                            .map_err(|_| Error::Config(format!("pool_ratios: bad entry '{s}'")))
                    })
                    .collect::<Result<_>>()?
            }
            other => return Err(Error::Config(format!("unknown model key '{other}'"))),
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for key in MODEL_KEYS {
            let _ = writeln!(s, "{key}={}", self.get(key).unwrap());
        }
        s
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "scale" => self.scale.to_string(),
            "channels" => self.channels.to_string(),
            "n_cptb" => self.n_cptb.to_string(),
            "n_spal" => self.n_spal.to_string(),
            "heads" => self.heads.to_string(),
            "c1" => self.c1.to_string(),
            "c2" => self.c2.to_string(),
            "ffn_ratio" => self.ffn_ratio.to_string(),
            "cab_squeeze" => self.cab_squeeze.to_string(),
            "prm_hidden" => self.prm_hidden.to_string(),
            "pool_ratios" => self
                .pool_ratios
                .iter()
                .map(|r| r.to_string())
                .collect::<Vec<_>>()
                .join(","),
            _ => return None,
        })
    }

    /// Parses `key=value` lines; `#` starts a comment.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (key, value) in crate::kv::parse_lines(text)? {
            cfg.set(&key, &value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::tiny(2).validate().unwrap();
    }

    #[test]
    fn invariant_violations() {
        let check = |f: fn(&mut ModelConfig)| {
            let mut c = ModelConfig::default();
            f(&mut c);
            assert!(c.validate().is_err(), "{c:?}");
        };
        check(|c| c.c1 = 95);
        check(|c| c.c2 = 63);
        check(|c| c.heads = 5);
        check(|c| c.pool_ratios = vec![2, 8, 4]);
        check(|c| c.pool_ratios = vec![2, 6]);
        check(|c| c.scale = 5);
        check(|c| c.cab_squeeze = 40);
    }

    #[test]
    fn kv_round_trip() {
        let mut c = ModelConfig::tiny(3);
        c.pool_ratios = vec![2, 4];
        let back = ModelConfig::from_kv(&c.to_kv()).unwrap();
        assert_eq!(back, c);
        assert!(ModelConfig::from_kv("bogus=1").is_err());
    }
}
