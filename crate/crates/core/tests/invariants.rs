use mbt_core::data::{augment, decode_ppm, make_lr, sample_patch, synth_dataset, AugmentSpec, Image};
use mbt_core::model::{init_weights, ModelConfig, ParamTree};
use mbt_core::ops::{bilinear_resize, crop, pad_reflect, pixel_shuffle_tensor, pixel_unshuffle_tensor};
use mbt_core::train::{lr_at, Checkpoint, Ema, TrainConfig};
use mbt_core::{Rng, Tensor};
use proptest::prelude::*;

fn image(w: usize, h: usize, seed: u64) -> Image {
    let mut rng = Rng::new(seed);
    Image::new(w, h, (0..w * h * 3).map(|_| rng.below(256) as u8).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn augmentations_are_invertible_and_distinct(w in 1usize..9, h in 1usize..9, seed in any::<u64>()) {
        let img = image(w, h, seed);
        let mut seen = Vec::new();
        for spec in AugmentSpec::all() {
            let out = spec.apply(&img);
            prop_assert_eq!(&spec.invert(&out), &img);
            seen.push(out);
        }
        if w == h && w >= 2 {
            for i in 0..seen.len() {
                for j in 0..i {
                    prop_assert_ne!(&seen[i], &seen[j]);
                }
            }
        }
    }

    #[test]
    fn paired_augmentation_keeps_the_scale(w in 1usize..6, h in 1usize..6, seed in any::<u64>()) {
        let lr = image(w, h, seed);
        let hr = image(2 * w, 2 * h, seed ^ 1);
        let spec = AugmentSpec::random(&mut Rng::new(seed));
        let (l, r) = augment(&lr, &hr, spec);
        prop_assert_eq!((2 * l.width(), 2 * l.height()), (r.width(), r.height()));
    }

    #[test]
    fn ppm_round_trip(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
        let img = image(w, h, seed);
        prop_assert_eq!(decode_ppm(&img.encode_ppm()).unwrap(), img);
    }

    #[test]
    fn ema_stays_between_shadow_and_live(decay in 0.0f64..0.9999, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let mut live = ParamTree::<f32>::new();
        live.insert("w", Tensor::rand_normal(vec![17], 1.0, &mut rng)).unwrap();
        let mut ema = Ema::new(&live, decay);
        for _ in 0..5 {
            let before = ema.shadow().get("w").unwrap().data().to_vec();
            live = live.map_values(|_, t| Tensor::rand_normal(t.shape().to_vec(), 3.0, &mut rng));
            ema.update(&live).unwrap();
            let l = live.get("w").unwrap().data();
            for ((&s, &b), &x) in ema.shadow().get("w").unwrap().data().iter().zip(&before).zip(l) {
                prop_assert!(s >= b.min(x) && s <= b.max(x));
            }
        }
    }

    #[test]
    fn pixel_shuffle_round_trip(c in 1usize..4, r in 1usize..4, seed in any::<u64>()) {
        let x = Tensor::<f64>::rand_uniform(vec![2, c * r * r, 3, 2], -1.0, 1.0, &mut Rng::new(seed));
        let y = pixel_shuffle_tensor(&x, r).unwrap();
        prop_assert_eq!(y.shape(), &[2, c, 3 * r, 2 * r]);
        prop_assert!(pixel_unshuffle_tensor(&y, r).unwrap().bit_eq(&x));
    }

    #[test]
    fn reflect_pad_then_crop_is_identity(h in 2usize..9, w in 2usize..9, b in 0usize..8, r in 0usize..8, seed in any::<u64>()) {
        let x = Tensor::<f32>::rand_uniform(vec![1, 2, h, w], 0.0, 1.0, &mut Rng::new(seed));
        let p = pad_reflect(&x, b, r).unwrap();
        prop_assert_eq!(p.shape(), &[1, 2, h + b, w + r]);
        prop_assert!(crop(&p, 0, 0, h, w).unwrap().bit_eq(&x));
    }

    #[test]
    fn bilinear_preserves_constants(h in 1usize..6, w in 1usize..6, oh in 1usize..13, ow in 1usize..13, v in -2.0f64..2.0) {
        let x = Tensor::<f64>::full(vec![1, 1, h, w], v);
        let y = bilinear_resize(&x, oh, ow).unwrap();
        prop_assert!(y.data().iter().all(|&u| (u - v).abs() < 1e-12));
    }

    #[test]
    fn patches_stay_aligned(seed in any::<u64>(), patch in prop::sample::select(vec![8usize, 16])) {
        let d = synth_dataset(2, 64, 2, seed % 7).unwrap();
        let mut rng = Rng::new(seed);
        let (lr, hr, (x, y)) = sample_patch(&d.pairs()[0], 2, patch, &mut rng).unwrap();
        prop_assert_eq!(&hr, &d.pairs()[0].hr.crop(2 * x, 2 * y, 2 * patch, 2 * patch).unwrap());
        prop_assert_eq!(&lr, &d.pairs()[0].lr.crop(x, y, patch, patch).unwrap());
    }

    #[test]
    fn rng_streams_are_reproducible(seed in any::<u64>(), a in any::<u64>(), b in any::<u64>()) {
        let mut r1 = Rng::derive(seed, &[a, b]);
        let mut r2 = Rng::derive(seed, &[a, b]);
        for _ in 0..8 {
            prop_assert_eq!(r1.uniform().to_bits(), r2.uniform().to_bits());
        }
        let p = Rng::new(seed).permutation(13);
        let mut sorted = p.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..13).collect::<Vec<_>>());
    }
}

#[test]
fn learning_rate_halves_once() {
    let t = TrainConfig { epochs: 10, lr_halving_epoch: 6, lr: 2e-4, ..Default::default() };
    assert_eq!(lr_at(0, &t).unwrap(), 2e-4);
    assert_eq!(lr_at(5, &t).unwrap(), 2e-4);
    assert_eq!(lr_at(6, &t).unwrap(), 1e-4);
    assert_eq!(lr_at(9, &t).unwrap(), 1e-4);
    assert!(lr_at(10, &t).is_err());
}

#[test]
fn make_lr_requires_divisible_crop() {
    let hr = image(33, 34, 0);
    let lr = make_lr(&hr, 2).unwrap();
    assert_eq!((lr.width(), lr.height()), (16, 17));
}

#[test]
fn weights_only_checkpoint_round_trips_bytes() {
    let cfg = ModelConfig::tiny(3);
    let c = Checkpoint::weights_only(cfg, init_weights::<f64>(&ModelConfig::tiny(3), 4).unwrap());
    let bytes = c.to_bytes();
    let back = Checkpoint::<f64>::from_bytes(&bytes).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.to_bytes(), bytes);
    assert!(Checkpoint::<f32>::from_bytes(&bytes).is_err());
}
