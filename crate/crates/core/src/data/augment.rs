use super::{LabeledImage, Rng, CHANNELS, SIDE};
use crate::tensor::Tensor;

/// Zero padding on each side before the random crop.
pub const PAD: usize = 4;

/// Pad-4 / random 32×32 crop / horizontal flip with probability ½.
///
/// Draw order: row offset, column offset, flip.
pub fn augment(img: &LabeledImage, rng: &mut Rng) -> LabeledImage {
    let span = 2 * PAD as u64 + 1;
    let dy = rng.below(span) as usize;
    let dx = rng.below(span) as usize;
    let flip = rng.coin();
    augment_with(img, dy, dx, flip)
}

/// Deterministic crop at offset `(dy, dx)` into the padded 40×40 image, then optional flip.
pub fn augment_with(img: &LabeledImage, dy: usize, dx: usize, flip: bool) -> LabeledImage {
    assert!(dy <= 2 * PAD && dx <= 2 * PAD, "crop offset out of range");
    let src = img.pixels.data();
    let pixels = Tensor::from_fn(&[CHANNELS, SIDE, SIDE], |i| {
        let (c, r, col) = (i / (SIDE * SIDE), (i / SIDE) % SIDE, i % SIDE);
        let col = if flip { SIDE - 1 - col } else { col };
        // Position inside the padded image, shifted back to source coordinates.
        let (py, px) = (r + dy, col + dx);
        if py < PAD || px < PAD || py >= PAD + SIDE || px >= PAD + SIDE {
            0.0
        } else {
            src[c * SIDE * SIDE + (py - PAD) * SIDE + (px - PAD)]
        }
    })
    .expect("fixed shape");
    LabeledImage { pixels, label: img.label, coarse: img.coarse }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(seed: u64) -> LabeledImage {
        let mut r = Rng::new(seed);
        LabeledImage::new(r.uniform_tensor(&[3, 32, 32], 0.01, 1.0), 7).unwrap()
    }

    #[test]
    fn centered_crop_is_identity() {
        let img = sample(1);
        assert_eq!(augment_with(&img, 4, 4, false), img);
    }

    #[test]
    fn corner_crop_exposes_padding() {
        let img = sample(2);
        let out = augment_with(&img, 0, 0, false);
        let d = out.pixels.data();
        for c in 0..3 {
            for r in 0..32 {
                for col in 0..32 {
                    let v = d[c * 1024 + r * 32 + col];
                    if r < 4 || col < 4 {
                        assert_eq!(v, 0.0);
                    } else {
                        assert_eq!(v, img.pixels.data()[c * 1024 + (r - 4) * 32 + col - 4]);
                    }
                }
            }
        }
    }

    #[test]
    fn flip_mirrors_columns() {
        let img = sample(3);
        let out = augment_with(&img, 4, 4, true);
        for r in 0..32 {
            for col in 0..32 {
                assert_eq!(out.pixels.data()[r * 32 + col], img.pixels.data()[r * 32 + 31 - col]);
            }
        }
    }

    #[test]
    fn seeded_augmentation_repeats() {
        let img = sample(4);
        let run = || (0..16).map(|i| augment(&img, &mut Rng::derive(9, 1, i))).collect::<Vec<_>>();
        assert_eq!(run(), run());
    }

    #[test]
    fn label_shape_and_pixels_preserved() {
        let img = sample(5);
        let mut rng = Rng::new(11);
        let mut seen_flip = false;
        for _ in 0..64 {
            let out = augment(&img, &mut rng);
            assert_eq!(out.label, 7);
            assert_eq!(out.pixels.shape(), &[3, 32, 32]);
            let mut src: Vec<u64> = img.pixels.data().iter().map(|v| v.to_bits()).collect();
            src.sort_unstable();
            for v in out.pixels.data().iter().filter(|v| **v != 0.0) {
                assert!(src.binary_search(&v.to_bits()).is_ok());
            }
            seen_flip |= out.pixels.data()[0] != augment_with(&img, 0, 0, false).pixels.data()[0];
        }
        assert!(seen_flip);
    }
}
