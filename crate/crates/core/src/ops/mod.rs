//! Differentiable primitives. Each operation computes its forward value
//! eagerly and registers a backward rule on the tape.

mod attention;
mod conv;
mod elementwise;
mod linear;
mod norm;
mod pool;
mod resample;
mod shape;

pub use attention::{attention_forward, softmax_rows};
pub use conv::{conv2d_forward, Padding};
pub use pool::PoolMode;
pub use norm::LAYER_NORM_EPS;
pub use resample::{bicubic_resize, bilinear_resize, cubic_weight, resample, ResampleMode, BICUBIC_A};
pub use shape::{crop, pad_reflect, pixel_shuffle_tensor, pixel_unshuffle_tensor};

use crate::error::{ensure_dim, Result};

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

pub(crate) fn same_shape(a: &[usize], b: &[usize], op: &str) -> Result<()> {
    ensure_dim!(a == b, "{op}: shape mismatch {a:?} vs {b:?}");
    Ok(())
}
