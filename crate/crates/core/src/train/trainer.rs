use super::adam::Adam;
use super::checkpoint::Checkpoint;
use super::config::{lr_at, TrainConfig};
use super::ema::Ema;
use super::l1_loss;
use crate::autograd::Tape;
use crate::data::{sample_patch, AugmentSpec, PairDataset};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricOptions};
use crate::model::{init_weights, mbt_forward, ModelConfig, ParamTree};
use crate::tensor::{Float, Rng, Tensor};

const ORDER_STREAM: u64 = 1;
const SAMPLE_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub mean_loss: f64,
    pub val_psnr: Option<f64>,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,lr,steps,mean_loss,val_psnr";

    pub fn csv_row(&self) -> String {
        let val = self.val_psnr.map(|v| v.to_string()).unwrap_or_default();
        format!("{},{},{},{},{}", self.epoch, self.lr, self.steps, self.mean_loss, val)
    }
}

/// Seeded training loop; every step's batch is a pure function of
/// (seed, epoch, step), so resuming from a checkpoint replays exactly.
pub struct Trainer<'d, T: Float> {
    pub model: ModelConfig,
    pub train: TrainConfig,
    data: &'d PairDataset,
    val: Option<&'d PairDataset>,
    params: ParamTree<T>,
    adam: Adam<T>,
    ema: Ema<T>,
    epoch: usize,
    losses: Vec<f64>,
}

impl<'d, T: Float> Trainer<'d, T> {
    pub fn new(model: ModelConfig, train: TrainConfig, data: &'d PairDataset, val: Option<&'d PairDataset>) -> Result<Self> {
        let params = init_weights(&model, train.seed)?;
        let adam = Adam::new(&params);
        let ema = Ema::new(&params, train.ema_decay);
        let t = Self { model, train, data, val, params, adam, ema, epoch: 0, losses: Vec::new() };
        t.check()?;
        Ok(t)
    }

    pub fn resume(ckpt: Checkpoint<T>, train: TrainConfig, data: &'d PairDataset, val: Option<&'d PairDataset>) -> Result<Self> {
        ckpt.check_layout()?;
        let adam = ckpt.adam.ok_or_else(|| Error::Format("checkpoint has no optimizer state".into()))?;
        let mut ema = ckpt.ema.ok_or_else(|| Error::Format("checkpoint has no EMA state".into()))?;
        ema.decay = train.ema_decay;
        let t = Self {
            model: ckpt.model,
            train,
            data,
            val,
            params: ckpt.params,
            adam,
            ema,
            epoch: ckpt.epoch as usize,
            losses: ckpt.losses,
        };
        t.check()?;
        Ok(t)
    }

    fn check(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.data.is_empty() {
            return Err(Error::Config("training dataset is empty".into()));
        }
        if self.data.scale() != self.model.scale {
            return Err(Error::Config(format!(
                "dataset scale x{} differs from model scale x{}",
                self.data.scale(),
                self.model.scale
            )));
        }
        if !self.train.with_replacement && self.data.len() < self.train.batch_size {
            return Err(Error::Config(format!(
                "dataset has {} images, fewer than batch size {} (sampling without replacement)",
                self.data.len(),
                self.train.batch_size
            )));
        }
        let p = self.train.patch_size;
        if let Some(pair) = self.data.pairs().iter().find(|q| q.lr.width() < p || q.lr.height() < p) {
            return Err(Error::Config(format!(
                "patch size {p} exceeds LR image '{}' ({}x{})",
                pair.id,
                pair.lr.width(),
                pair.lr.height()
            )));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> usize {
        if self.train.steps_per_epoch > 0 {
            self.train.steps_per_epoch
        } else {
            self.data.len().div_ceil(self.train.batch_size)
        }
    }

    /// Next epoch to run (equals completed epochs).
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn done(&self) -> bool {
        self.epoch >= self.train.epochs
    }

    pub fn params(&self) -> &ParamTree<T> {
        &self.params
    }

    pub fn ema(&self) -> &Ema<T> {
        &self.ema
    }

    pub fn step_count(&self) -> u64 {
        self.adam.t()
    }

    /// Loss of every optimizer step so far, including resumed history.
    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn eval_params(&self) -> &ParamTree<T> {
        if self.train.eval_ema {
            self.ema.shadow()
        } else {
            &self.params
        }
    }

    /// LR and HR batches for one step.
    pub fn batch(&self, epoch: usize, step: usize) -> Result<(Tensor<T>, Tensor<T>)> {
        let (b, n, r, p) = (self.train.batch_size, self.data.len(), self.model.scale, self.train.patch_size);
        let order = Rng::derive(self.train.seed, &[ORDER_STREAM, epoch as u64]).permutation(n);
        let mut pick = Rng::derive(self.train.seed, &[ORDER_STREAM, epoch as u64, step as u64]);
        let (mut lr, mut hr) = (Vec::with_capacity(b * 3 * p * p), Vec::with_capacity(b * 3 * r * r * p * p));
        for i in 0..b {
            let idx = if self.train.with_replacement { pick.below(n) } else { order[(step * b + i) % n] };
            let mut rng = Rng::derive(self.train.seed, &[SAMPLE_STREAM, epoch as u64, step as u64, i as u64]);
            let (l, h, _) = sample_patch(&self.data.pairs()[idx], r, p, &mut rng)?;
            let spec = AugmentSpec::random(&mut rng);
            lr.extend_from_slice(spec.apply(&l).to_tensor::<T>().data());
            hr.extend_from_slice(spec.apply(&h).to_tensor::<T>().data());
        }
        Ok((Tensor::new(vec![b, 3, p, p], lr)?, Tensor::new(vec![b, 3, r * p, r * p], hr)?))
    }

    /// One forward/backward/update; returns the batch loss.
    pub fn step(&mut self, epoch: usize, step: usize) -> Result<f64> {
        let lr_rate = lr_at(epoch, &self.train)?;
        let (x, y) = self.batch(epoch, step)?;
        let loss = {
            let tape = Tape::new();
            let bound = self.params.bind(&tape);
            let forward = mbt_forward(&tape.constant(x), &bound.root(), &self.model)
                .and_then(|(sr, _)| l1_loss(&sr, &tape.constant(y)));
            let loss = forward.map_err(|e| diverged(e, epoch, step))?;
            let value = loss.value().item()?.as_f64();
            if !value.is_finite() {
                return Err(diverged(Error::NonFinite(format!("loss is {value}")), epoch, step));
            }
            tape.backward(loss).map_err(|e| diverged(e, epoch, step))?;
            self.params.accumulate_grads(&bound)?;
            value
        };
        self.adam.step(&mut self.params, lr_rate)?;
        self.params.zero_grads();
        if self.params.iter().any(|(_, t)| !t.is_finite()) {
            return Err(diverged(Error::NonFinite("parameters left the finite range".into()), epoch, step));
        }
        self.ema.update(&self.params)?;
        self.losses.push(loss);
        Ok(loss)
    }

    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.epoch;
        let lr = lr_at(epoch, &self.train)?;
        let steps = self.steps_per_epoch();
        let mut sum = 0.0;
        for s in 0..steps {
            sum += self.step(epoch, s)?;
        }
        self.epoch += 1;
        let val_psnr = match self.val {
            Some(v) if self.train.val_every > 0 && self.epoch % self.train.val_every == 0 => {
                Some(evaluate(self.eval_params(), &self.model, v, &MetricOptions::default())?.mean_psnr)
            }
            _ => None,
        };
        Ok(EpochRecord { epoch, lr, steps, mean_loss: sum / steps as f64, val_psnr })
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            model: self.model.clone(),
            train: Some(self.train.clone()),
            params: self.params.clone(),
            ema: Some(self.ema.clone()),
            adam: Some(self.adam.clone()),
            epoch: self.epoch as u64,
            step: self.adam.t(),
            losses: self.losses.clone(),
        }
    }
}

fn diverged(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::NonFinite(m) => Error::NonFinite(format!(
            "training diverged at epoch {epoch}, step {step}: {m} (no gradient clipping is applied; try a lower lr)"
        )),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset;

    fn setup() -> (ModelConfig, TrainConfig, PairDataset) {
        let model = ModelConfig { n_spal: 1, ..ModelConfig::tiny(2) };
        let train = TrainConfig {
            batch_size: 2,
            epochs: 4,
            lr_halving_epoch: 3,
            patch_size: 8,
            seed: 5,
            lr: 1e-3,
            ..Default::default()
        };
        (model, train, synth_dataset(3, 32, 2, 1).unwrap())
    }

    #[test]
    fn identical_runs_are_bit_identical_and_resume_replays() {
        let (m, t, d) = setup();
        let mut a = Trainer::<f32>::new(m.clone(), t.clone(), &d, None).unwrap();
        let mut b = Trainer::<f32>::new(m.clone(), t.clone(), &d, None).unwrap();
        for _ in 0..2 {
            a.run_epoch().unwrap();
            b.run_epoch().unwrap();
        }
        assert_eq!(a.losses(), b.losses());
        assert!(a.params().bit_eq(b.params()));
        let ckpt = Checkpoint::<f32>::from_bytes(&a.checkpoint().to_bytes()).unwrap();
        let mut resumed = Trainer::resume(ckpt, t, &d, None).unwrap();
        while !a.done() {
            a.run_epoch().unwrap();
            resumed.run_epoch().unwrap();
        }
        assert_eq!(a.losses(), resumed.losses());
        assert_eq!(a.losses().len(), 8);
        assert!(a.params().bit_eq(resumed.params()));
    }

    #[test]
    fn rejects_small_dataset_without_replacement() {
        let (m, t, d) = setup();
        let big = TrainConfig { batch_size: 4, ..t.clone() };
        assert!(Trainer::<f32>::new(m.clone(), big.clone(), &d, None).is_err());
        let repl = TrainConfig { with_replacement: true, ..big };
        assert!(Trainer::<f32>::new(m, repl, &d, None).is_ok());
    }

    #[test]
    fn patch_pairs_align() {
        let (m, t, d) = setup();
        let tr = Trainer::<f64>::new(m, t, &d, None).unwrap();
        let (x, y) = tr.batch(0, 0).unwrap();
        assert_eq!(x.shape(), &[2, 3, 8, 8]);
        assert_eq!(y.shape(), &[2, 3, 16, 16]);
        assert!(tr.batch(0, 0).unwrap().0.bit_eq(&x));
    }
}
