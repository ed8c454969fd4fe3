use super::image::{quantize, Image};
use crate::error::{Error, Result};
use crate::ops::bicubic_resize;

/// Bicubic ×1/r downsample; HR is first cropped to a multiple of r.
pub fn make_lr(hr: &Image, r: usize) -> Result<Image> {
    if r < 2 {
        return Err(Error::Config(format!("downscale factor must be at least 2, got {r}")));
    }
    let (w, h) = (hr.width() / r * r, hr.height() / r * r);
    if w == 0 || h == 0 {
        return Err(Error::Dim(format!("{}x{} image smaller than factor {r}", hr.width(), hr.height())));
    }
    let hr = if (w, h) == (hr.width(), hr.height()) { hr.clone() } else { hr.crop(0, 0, w, h)? };
    let lr = bicubic_resize(&hr.to_tensor::<f64>(), h / r, w / r)?;
    let plane = (h / r) * (w / r);
    Image::from_fn(w / r, h / r, |x, y| {
        let p = y * (w / r) + x;
        [0, 1, 2].map(|c| quantize(lr.data()[c * plane + p]))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stays_constant() {
        let img = Image::filled(64, 64, [10, 200, 77]).unwrap();
        let lr = make_lr(&img, 4).unwrap();
        assert_eq!((lr.width(), lr.height()), (16, 16));
        assert_eq!(lr, Image::filled(16, 16, [10, 200, 77]).unwrap());
        assert!(make_lr(&img, 1).is_err());
    }

    #[test]
    fn checkerboard_hand_evaluated() {
        // 8x8 period-2 checkerboard -> 4x4. Interior taps sit at distances 1.5, 0.5,
        // 0.5, 1.5 with weights -1/16, 9/16, 9/16, -1/16; at the first and last
        // output the out-of-range tap folds onto the edge sample.
        let hr = Image::from_fn(8, 8, |x, y| if (x + y) % 2 == 1 { [255; 3] } else { [0; 3] }).unwrap();
        let lr = make_lr(&hr, 2).unwrap();
        let taps: [Vec<(usize, f64)>; 4] = [
            vec![(0, 0.5), (1, 0.5625), (2, -0.0625)],
            vec![(1, -0.0625), (2, 0.5625), (3, 0.5625), (4, -0.0625)],
            vec![(3, -0.0625), (4, 0.5625), (5, 0.5625), (6, -0.0625)],
            vec![(5, -0.0625), (6, 0.5625), (7, 0.5)],
        ];
        for oy in 0..4 {
            for ox in 0..4 {
                let mut v = 0.0;
                for &(iy, wy) in &taps[oy] {
                    for &(ix, wx) in &taps[ox] {
                        v += wy * wx * if (ix + iy) % 2 == 1 { 1.0 } else { 0.0 };
                    }
                }
                let want = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                assert_eq!(lr.pixel(ox, oy), [want; 3], "({ox},{oy})");
                if (1..3).contains(&ox) && (1..3).contains(&oy) {
                    assert_eq!(want, 128);
                }
            }
        }
    }
}
