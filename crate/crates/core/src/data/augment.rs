use super::image::Image;
use crate::tensor::Rng;

/// Counter-clockwise quarter turns followed by an optional horizontal flip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AugmentSpec {
    pub quarter_turns: u8,
    pub hflip: bool,
}

impl AugmentSpec {
    pub fn random(rng: &mut Rng) -> Self {
        let quarter_turns = rng.below(4) as u8;
        let hflip = rng.below(2) == 1;
        Self { quarter_turns, hflip }
    }

    pub fn all() -> impl Iterator<Item = AugmentSpec> {
        (0..8).map(|i| AugmentSpec { quarter_turns: i % 4, hflip: i >= 4 })
    }

    pub fn apply(&self, img: &Image) -> Image {
        let mut out = img.clone();
        for _ in 0..self.quarter_turns % 4 {
            out = rotate90(&out);
        }
        if self.hflip {
            out = hflip(&out);
        }
        out
    }

    pub fn invert(&self, img: &Image) -> Image {
        let mut out = if self.hflip { hflip(img) } else { img.clone() };
        for _ in 0..(4 - self.quarter_turns % 4) % 4 {
            out = rotate90(&out);
        }
        out
    }
}

pub fn rotate90(img: &Image) -> Image {
    let (w, h) = (img.width(), img.height());
    Image::from_fn(h, w, |x, y| img.pixel(w - 1 - y, x)).unwrap()
}

pub fn hflip(img: &Image) -> Image {
    let w = img.width();
    Image::from_fn(w, img.height(), |x, y| img.pixel(w - 1 - x, y)).unwrap()
}

/// The same spec applied to both members of a pair.
pub fn augment(lr: &Image, hr: &Image, spec: AugmentSpec) -> (Image, Image) {
    (spec.apply(lr), spec.apply(hr))
}
