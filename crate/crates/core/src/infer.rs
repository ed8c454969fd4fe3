//! Inference on images of arbitrary size.

use crate::data::Image;
use crate::error::Result;
use crate::model::{infer, ModelConfig, ParamTree};
use crate::ops::{crop, pad_reflect};
use crate::tensor::{Float, Tensor};

/// Side multiple inputs are reflection-padded to before the forward pass.
pub fn pad_multiple(cfg: &ModelConfig) -> usize {
    cfg.spatial_multiple().max(8)
}

/// Reflection-pads to the model's multiple, runs the network and crops the
/// result back to exactly r times the input size.
pub fn infer_tensor<T: Float>(params: &ParamTree<T>, cfg: &ModelConfig, lr: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, _, h, w) = lr.dims4()?;
    let m = pad_multiple(cfg);
    let (ph, pw) = (h.div_ceil(m) * m - h, w.div_ceil(m) * m - w);
    let r = cfg.scale;
    if ph == 0 && pw == 0 {
        return infer(params, cfg, lr);
    }
    let sr = infer(params, cfg, &pad_reflect(lr, ph, pw)?)?;
    crop(&sr, 0, 0, r * h, r * w)
}

pub fn infer_image<T: Float>(params: &ParamTree<T>, cfg: &ModelConfig, lr: &Image) -> Result<Image> {
    Image::from_tensor(&infer_tensor(params, cfg, &lr.to_tensor::<T>())?, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_weights;

    #[test]
    fn odd_sizes_come_back_at_scale() {
        let cfg = ModelConfig::tiny(2);
        let p = init_weights::<f32>(&cfg, 0).unwrap();
        let img = Image::from_fn(23, 17, |x, y| [(x * 11) as u8, (y * 13) as u8, 90]).unwrap();
        let out = infer_image(&p, &cfg, &img).unwrap();
        assert_eq!((out.width(), out.height()), (46, 34));
        assert_eq!(out, infer_image(&p, &cfg, &img).unwrap());
    }
}
