//! Optimizer, EMA, schedule, loss, checkpoints and the training loop.

mod adam;
mod checkpoint;
mod config;
mod ema;
mod trainer;

pub use adam::{Adam, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use checkpoint::{read_container, write_container, Checkpoint, RawTensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{lr_at, TrainConfig, TRAIN_KEYS};
pub use ema::Ema;
pub use trainer::{EpochRecord, Trainer};

use crate::autograd::Var;
use crate::error::Result;
use crate::tensor::Float;

/// Mean absolute difference.
pub fn l1_loss<'t, T: Float>(pred: &Var<'t, T>, target: &Var<'t, T>) -> Result<Var<'t, T>> {
    pred.sub(target)?.abs()?.mean()
}
