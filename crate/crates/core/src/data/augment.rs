use rand::Rng as _;

use crate::data::image::Image;
use crate::data::ImagePair;
use crate::Rng;

/// One of the eight symmetries of the square: an optional horizontal flip
/// followed by `quarter_turns` clockwise 90° rotations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dihedral {
    pub flip: bool,
    pub quarter_turns: u8,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral {
        flip: false,
        quarter_turns: 0,
    };

    pub const ALL: [Dihedral; 8] = {
        let mut all = [Dihedral::IDENTITY; 8];
        let mut i = 0;
        while i < 8 {
            all[i] = Dihedral {
                flip: i >= 4,
                quarter_turns: (i % 4) as u8,
            };
            i += 1;
        }
        all
    };

    pub fn random(rng: &mut Rng) -> Dihedral {
        Dihedral::ALL[rng.random_range(0..8)]
    }

    pub fn inverse(self) -> Dihedral {
        if self.flip {
            // flip-then-rotate is a reflection, hence an involution
            self
        } else {
            Dihedral {
                flip: false,
                quarter_turns: (4 - self.quarter_turns) % 4,
            }
        }
    }

    pub fn apply(self, img: &Image) -> Image {
        let mut out = if self.flip {
            let w = img.width();
            Image::from_fn(img.height(), w, img.channels(), |y, x, c| {
                img.get(y, w - 1 - x, c)
            })
        } else {
            img.clone()
        };
        for _ in 0..self.quarter_turns {
            out = rotate_cw(&out);
        }
        out
    }
}

/// Clockwise quarter turn: `src[i][j]` lands at `dst[j][H − 1 − i]`.
fn rotate_cw(img: &Image) -> Image {
    let (h, w) = img.dims();
    Image::from_fn(w, h, img.channels(), |y, x, c| img.get(h - 1 - x, y, c))
}

/// Applies one transform identically to both images of a pair.
pub fn augment_with(pair: &ImagePair, t: Dihedral) -> ImagePair {
    ImagePair {
        lr: t.apply(&pair.lr),
        hr: t.apply(&pair.hr),
        scale: pair.scale,
        id: pair.id.clone(),
    }
}

/// Applies a uniformly drawn dihedral transform to both images.
pub fn augment(pair: &ImagePair, rng: &mut Rng) -> ImagePair {
    augment_with(pair, Dihedral::random(rng))
}
