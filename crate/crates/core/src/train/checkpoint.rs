//! Binary checkpoint container (little-endian):
//!
//! ```text
//! "MBT1" | u32 version | u32 len + UTF-8 key=value config text
//! u64 tensor count
//!   per tensor: u32 len + UTF-8 name | u8 dtype (0 f32, 1 f64) | u8 rank | rank × u64 dims | raw data
//! u64 step counter
//! ```
//!
//! Parameters are stored under their own names, the EMA shadow under
//! `ema/`, Adam moments under `opt/m/` and `opt/v/`, and the per-step loss
//! history as the f64 tensor `log/loss`.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use super::adam::Adam;
use super::config::TrainConfig;
use super::ema::Ema;
use crate::error::{Error, Result};
use crate::model::{param_specs, ModelConfig, ParamTree, MODEL_KEYS};
use crate::tensor::{DType, Float, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MBT1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum RawTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl RawTensor {
    pub fn dtype(&self) -> DType {
        match self {
            RawTensor::F32(_) => DType::F32,
            RawTensor::F64(_) => DType::F64,
        }
    }

    fn shape(&self) -> &[usize] {
        match self {
            RawTensor::F32(t) => t.shape(),
            RawTensor::F64(t) => t.shape(),
        }
    }

    fn write_data(&self, out: &mut Vec<u8>) {
        match self {
            RawTensor::F32(t) => f32::to_le_bytes_vec(t.data(), out),
            RawTensor::F64(t) => f64::to_le_bytes_vec(t.data(), out),
        }
    }

    pub fn from_tensor<T: Float>(t: &Tensor<T>) -> Self {
        match T::DTYPE {
            DType::F32 => RawTensor::F32(t.cast()),
            DType::F64 => RawTensor::F64(t.cast()),
        }
    }

    /// The tensor in precision `T`; a stored dtype other than `T` is a type error.
    pub fn into_tensor<T: Float>(self, name: &str) -> Result<Tensor<T>> {
        if self.dtype() != T::DTYPE {
            return Err(Error::Type(format!("tensor '{name}' is {}, expected {}", self.dtype(), T::DTYPE)));
        }
        Ok(match self {
            RawTensor::F32(t) => t.cast(),
            RawTensor::F64(t) => t.cast(),
        })
    }
}

pub fn write_container(config: &str, tensors: &[(String, RawTensor)], step: u64) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.dtype().code());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        t.write_data(&mut out);
    }
    out.extend_from_slice(&step.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!("checkpoint truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn text(&mut self, n: usize, what: &str) -> Result<String> {
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
    }
}

/// Parses a container into (config text, named tensors, step counter).
pub fn read_container(bytes: &[u8]) -> Result<(String, Vec<(String, RawTensor)>, u64)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})")));
    }
    let n = r.u32("config length")? as usize;
    let config = r.text(n, "config block")?;
    let count = r.u64("tensor count")?;
    let mut seen = HashSet::new();
    let mut tensors = Vec::new();
    for _ in 0..count {
        let n = r.u32("tensor name length")? as usize;
        let name = r.text(n, "tensor name")?;
        if !seen.insert(name.clone()) {
            return Err(Error::Format(format!("duplicate tensor '{name}' in checkpoint")));
        }
        let dtype = DType::from_code(r.u8("dtype")?)?;
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("dims")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("tensor '{name}' dims overflow")))?;
        let bytes_needed = numel
            .checked_mul(dtype.size())
            .ok_or_else(|| Error::Format(format!("tensor '{name}' too large")))?;
        let raw = r.take(bytes_needed, &format!("data of '{name}'"))?;
        let t = match dtype {
            DType::F32 => RawTensor::F32(Tensor::new(shape, f32::from_le_bytes_slice(raw))?),
            DType::F64 => RawTensor::F64(Tensor::new(shape, f64::from_le_bytes_slice(raw))?),
        };
        tensors.push((name, t));
    }
    let step = r.u64("step counter")?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos)));
    }
    Ok((config, tensors, step))
}

/// Model, training state and loss history.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Float> {
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    pub params: ParamTree<T>,
    pub ema: Option<Ema<T>>,
    pub adam: Option<Adam<T>>,
    /// Completed epochs.
    pub epoch: u64,
    /// Optimizer steps taken.
    pub step: u64,
    pub losses: Vec<f64>,
}

impl<T: Float> Checkpoint<T> {
    pub fn weights_only(model: ModelConfig, params: ParamTree<T>) -> Self {
        Self { model, train: None, params, ema: None, adam: None, epoch: 0, step: 0, losses: Vec::new() }
    }

    /// Weights used for inference: the EMA shadow when present.
    pub fn inference_params(&self, prefer_ema: bool) -> &ParamTree<T> {
        match &self.ema {
            Some(e) if prefer_ema => e.shadow(),
            _ => &self.params,
        }
    }

    pub fn config_text(&self) -> String {
        let mut s = self.model.to_kv();
        if let Some(t) = &self.train {
            s.push_str(&t.to_kv("train."));
        }
        s.push_str(&format!("state.epoch={}\n", self.epoch));
        if let Some(e) = &self.ema {
            s.push_str(&format!("state.ema_decay={}\n", e.decay));
        }
        s
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors: Vec<(String, RawTensor)> =
            self.params.iter().map(|(n, t)| (n.to_string(), RawTensor::from_tensor(t))).collect();
        if let Some(e) = &self.ema {
            tensors.extend(e.shadow().iter().map(|(n, t)| (format!("ema/{n}"), RawTensor::from_tensor(t))));
        }
        if let Some(a) = &self.adam {
            let (m, v) = a.moments();
            tensors.extend(m.iter().map(|(n, t)| (format!("opt/m/{n}"), RawTensor::from_tensor(t))));
            tensors.extend(v.iter().map(|(n, t)| (format!("opt/v/{n}"), RawTensor::from_tensor(t))));
        }
        if !self.losses.is_empty() {
            let log = Tensor::new(vec![self.losses.len()], self.losses.clone()).unwrap();
            tensors.push(("log/loss".into(), RawTensor::F64(log)));
        }
        write_container(&self.config_text(), &tensors, self.step)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (text, tensors, step) = read_container(bytes)?;
        let mut model_kv = String::new();
        let mut train: Option<TrainConfig> = None;
        let mut epoch = 0;
        let mut ema_decay = None;
        for (k, v) in crate::kv::parse_lines(&text)? {
            if let Some(key) = k.strip_prefix("train.") {
                train.get_or_insert_with(TrainConfig::default).set(key, &v)?;
            } else if let Some(key) = k.strip_prefix("state.") {
                let num = |v: &str| v.parse::<f64>().map_err(|_| Error::Format(format!("bad state value '{k}={v}'")));
                match key {
                    "epoch" => epoch = num(&v)? as u64,
                    "ema_decay" => ema_decay = Some(num(&v)?),
                    _ => return Err(Error::Format(format!("unknown checkpoint state key '{k}'"))),
                }
            } else if MODEL_KEYS.contains(&k.as_str()) {
                model_kv.push_str(&format!("{k}={v}\n"));
            } else {
                return Err(Error::Format(format!("unknown checkpoint config key '{k}'")));
            }
        }
        let model = ModelConfig::from_kv(&model_kv)?;
        let (mut params, mut shadow, mut m, mut v) =
            (ParamTree::new(), ParamTree::new(), ParamTree::new(), ParamTree::new());
        let mut losses = Vec::new();
        for (name, t) in tensors {
            if name == "log/loss" {
                losses = t.into_tensor::<f64>(&name)?.into_data();
            } else if let Some(n) = name.strip_prefix("ema/") {
                shadow.insert(n, t.into_tensor(&name)?)?;
            } else if let Some(n) = name.strip_prefix("opt/m/") {
                m.insert(n, t.into_tensor(&name)?)?;
            } else if let Some(n) = name.strip_prefix("opt/v/") {
                v.insert(n, t.into_tensor(&name)?)?;
            } else {
                params.insert(name.clone(), t.into_tensor(&name)?)?;
            }
        }
        let ema = if shadow.is_empty() { None } else { Some(Ema::from_shadow(shadow, ema_decay.unwrap_or(0.999))) };
        let adam = if m.is_empty() { None } else { Some(Adam::from_state(step, m, v)?) };
        Ok(Self { model, train, params, ema, adam, epoch, step, losses })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::from_bytes(&bytes)
    }

    /// Confirms the weights carry exactly the tensors the config implies.
    pub fn check_layout(&self) -> Result<()> {
        let specs = param_specs(&self.model);
        let trees = std::iter::once(&self.params).chain(self.ema.as_ref().map(|e| e.shadow()));
        for tree in trees {
            if tree.len() != specs.len() {
                return Err(Error::Format(format!("checkpoint holds {} tensors, config implies {}", tree.len(), specs.len())));
            }
            for (spec, (name, t)) in specs.iter().zip(tree.iter()) {
                if spec.name != name || spec.shape != t.shape() {
                    return Err(Error::Format(format!(
                        "checkpoint tensor '{name}' {:?} does not match expected '{}' {:?}",
                        t.shape(),
                        spec.name,
                        spec.shape
                    )));
                }
            }
        }
        Ok(())
    }
}
