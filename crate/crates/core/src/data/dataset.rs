use std::fs;
use std::path::{Path, PathBuf};

use super::image::{is_image_path, Image};
use crate::error::{Error, Result};
use crate::tensor::Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pair {
    pub id: String,
    pub lr: Image,
    pub hr: Image,
}

impl Pair {
    /// Class label: the identifier up to its last underscore.
    pub fn class(&self) -> Option<&str> {
        class_of(&self.id)
    }
}

pub fn class_of(id: &str) -> Option<&str> {
    id.rsplit_once('_').map(|(c, _)| c).filter(|c| !c.is_empty())
}

/// LR/HR pairs at a fixed scale; every HR side is exactly r times its LR side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairDataset {
    scale: usize,
    pairs: Vec<Pair>,
}

impl PairDataset {
    pub fn new(scale: usize, pairs: Vec<Pair>) -> Result<Self> {
        for p in &pairs {
            if p.hr.width() != scale * p.lr.width() || p.hr.height() != scale * p.lr.height() {
                return Err(Error::Dim(format!(
                    "pair '{}': HR {}x{} is not {scale}x LR {}x{}",
                    p.id,
                    p.hr.width(),
                    p.hr.height(),
                    p.lr.width(),
                    p.lr.height()
                )));
            }
        }
        Ok(Self { scale, pairs })
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn lr_dir(root: &Path, scale: usize) -> PathBuf {
        root.join(format!("lr_x{scale}"))
    }

    /// Writes `hr/`, `lr_x{r}/` (PPM) and `manifest.txt`.
    pub fn save(&self, root: &Path) -> Result<()> {
        let hr_dir = root.join("hr");
        let lr_dir = Self::lr_dir(root, self.scale);
        fs::create_dir_all(&hr_dir)?;
        fs::create_dir_all(&lr_dir)?;
        let mut manifest = String::new();
        for p in &self.pairs {
            let name = format!("{}.ppm", p.id);
            p.hr.write(&hr_dir.join(&name))?;
            p.lr.write(&lr_dir.join(&name))?;
            manifest.push_str(&name);
            manifest.push('\n');
        }
        fs::write(root.join("manifest.txt"), manifest)?;
        Ok(())
    }

    /// Loads a dataset directory; file order comes from `manifest.txt` when
    /// present, otherwise sorted file names under `hr/`.
    pub fn load(root: &Path, scale: usize) -> Result<Self> {
        let hr_dir = root.join("hr");
        let lr_dir = Self::lr_dir(root, scale);
        for d in [&hr_dir, &lr_dir] {
            if !d.is_dir() {
                return Err(Error::Config(format!("dataset directory {} not found", d.display())));
            }
        }
        let manifest = root.join("manifest.txt");
        let names: Vec<String> = if manifest.is_file() {
            fs::read_to_string(&manifest)?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from)
                .collect()
        } else {
            let mut v: Vec<String> = fs::read_dir(&hr_dir)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.is_file() && is_image_path(p))
                .filter_map(|p| p.file_name().and_then(|n| n.to_str()).map(String::from))
                .collect();
            v.sort();
            v
        };
        if names.is_empty() {
            return Err(Error::Config(format!("dataset {} contains no images", root.display())));
        }
        let mut pairs = Vec::with_capacity(names.len());
        for name in names {
            let id = Path::new(&name)
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::Config(format!("bad manifest entry '{name}'")))?
                .to_string();
            let hr = Image::read(&hr_dir.join(&name))?;
            let lr_path = lr_dir.join(&name);
            if !lr_path.is_file() {
                return Err(Error::Config(format!("missing LR image {}", lr_path.display())));
            }
            let lr = Image::read(&lr_path)?;
            pairs.push(Pair { id, lr, hr });
        }
        Self::new(scale, pairs)
    }
}

/// LR crop of `patch`×`patch` at a uniform offset and the matching HR crop.
/// Returns the LR offset (x, y) alongside the crops.
pub fn sample_patch(pair: &Pair, scale: usize, patch: usize, rng: &mut Rng) -> Result<(Image, Image, (usize, usize))> {
    let (w, h) = (pair.lr.width(), pair.lr.height());
    if patch == 0 || patch % 8 != 0 {
        return Err(Error::Config(format!("patch size {patch} must be a positive multiple of 8")));
    }
    if patch > w || patch > h {
        return Err(Error::Dim(format!("patch {patch} larger than LR image {w}x{h} ('{}')", pair.id)));
    }
    let x = rng.below(w - patch + 1);
    let y = rng.below(h - patch + 1);
    let lr = pair.lr.crop(x, y, patch, patch)?;
    let hr = pair.hr.crop(scale * x, scale * y, scale * patch, scale * patch)?;
    Ok((lr, hr, (x, y)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset;

    #[test]
    fn class_prefix() {
        assert_eq!(class_of("checker_003"), Some("checker"));
        assert_eq!(class_of("plain"), None);
    }

    #[test]
    fn rejects_mismatched_pair() {
        let lr = Image::filled(4, 4, [0; 3]).unwrap();
        let hr = Image::filled(8, 9, [0; 3]).unwrap();
        assert!(PairDataset::new(2, vec![Pair { id: "a".into(), lr, hr }]).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let ds = synth_dataset(3, 32, 2, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        assert_eq!(PairDataset::load(dir.path(), 2).unwrap(), ds);
        fs::remove_file(dir.path().join("manifest.txt")).unwrap();
        let sorted = PairDataset::load(dir.path(), 2).unwrap();
        assert_eq!(sorted.len(), 3);
        assert!(PairDataset::load(dir.path(), 3).is_err());
    }

    #[test]
    fn full_size_patch_has_single_offset() {
        let ds = synth_dataset(1, 128, 2, 1).unwrap();
        let mut rng = Rng::new(3);
        let (lr, hr, off) = sample_patch(&ds.pairs()[0], 2, 64, &mut rng).unwrap();
        assert_eq!(off, (0, 0));
        assert_eq!(lr, ds.pairs()[0].lr);
        assert_eq!(hr, ds.pairs()[0].hr);
        assert!(sample_patch(&ds.pairs()[0], 2, 72, &mut rng).is_err());
    }

    #[test]
    fn hr_crop_tracks_lr_offset() {
        let ds = synth_dataset(1, 96, 3, 9).unwrap();
        let pair = &ds.pairs()[0];
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            let (lr, hr, (x, y)) = sample_patch(pair, 3, 8, &mut a).unwrap();
            assert_eq!(sample_patch(pair, 3, 8, &mut b).unwrap().2, (x, y));
            assert_eq!(lr, pair.lr.crop(x, y, 8, 8).unwrap());
            assert_eq!(hr, pair.hr.crop(3 * x, 3 * y, 24, 24).unwrap());
        }
    }
}
