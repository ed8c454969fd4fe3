//! Image IO, LR synthesis, patch sampling, augmentation and synthetic data.

mod augment;
mod dataset;
mod degrade;
mod image;
mod synth;

pub use augment::{augment, hflip, rotate90, AugmentSpec};
pub use dataset::{class_of, sample_patch, Pair, PairDataset};
pub use degrade::make_lr;
pub use image::{decode_ppm, quantize, Image};
pub use synth::{synth_dataset, synth_hr, CLASSES};
