//! Oriented-grating images: class `k` of `K` is a sinusoid at angle `kπ/K`.

use super::{LabeledImage, Rng, CHANNELS, SIDE};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Grating period in pixels.
pub const GRATING_PERIOD: f64 = 8.0;

/// Noise-free grating in `[0, 1]`, identical across the three channels.
pub fn grating(class: usize, classes: usize, phase: f64) -> Tensor<f64> {
    let theta = class as f64 * std::f64::consts::PI / classes as f64;
    let (s, c) = theta.sin_cos();
    let k = std::f64::consts::TAU / GRATING_PERIOD;
    Tensor::from_fn(&[CHANNELS, SIDE, SIDE], |i| {
        let (y, x) = (((i / SIDE) % SIDE) as f64, (i % SIDE) as f64);
        0.5 + 0.5 * (k * (x * c + y * s) + phase).sin()
    })
    .expect("fixed shape")
}

/// `n` images with labels `i mod classes`, random phase, uniform noise in `±noise`, clamped to `[0, 1]`.
pub fn synth_dataset(n: usize, classes: usize, noise: f64, rng: &mut Rng) -> Result<Vec<LabeledImage>> {
    if !(2..=10).contains(&classes) {
        return Err(Error::Config(format!("synthetic classes must be in [2, 10], got {classes}")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Config(format!("noise amplitude must be a finite non-negative number, got {noise}")));
    }
    Ok((0..n)
        .map(|i| {
            let label = i % classes;
            let phase = rng.uniform_range(0.0, std::f64::consts::TAU);
            let base = grating(label, classes, phase);
            let pixels = Tensor::from_fn(base.shape(), |j| {
                let jitter = if noise > 0.0 { rng.uniform_range(-noise, noise) } else { 0.0 };
                (base.data()[j] + jitter).clamp(0.0, 1.0)
            })
            .expect("fixed shape");
            LabeledImage { pixels, label, coarse: None }
        })
        .collect())
}

/// Independent train and validation sets drawn from streams derived from `seed`.
pub fn synth_splits(
    n_train: usize,
    n_val: usize,
    classes: usize,
    noise: f64,
    seed: u64,
) -> Result<(Vec<LabeledImage>, Vec<LabeledImage>)> {
    let train = synth_dataset(n_train, classes, noise, &mut Rng::derive(seed, SYNTH_STREAM, 0))?;
    let val = synth_dataset(n_val, classes, noise, &mut Rng::derive(seed, SYNTH_STREAM, 1))?;
    Ok((train, val))
}

const SYNTH_STREAM: u64 = 0x5917;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_labels() {
        let imgs = synth_dataset(100, 4, 0.2, &mut Rng::new(1)).unwrap();
        assert_eq!(imgs.len(), 100);
        for k in 0..4 {
            assert_eq!(imgs.iter().filter(|im| im.label == k).count(), 25);
        }
        assert!(imgs.iter().all(|im| im.pixels.data().iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn noiseless_same_phase_identical() {
        assert_eq!(grating(2, 4, 0.7), grating(2, 4, 0.7));
        let a = synth_dataset(8, 4, 0.0, &mut Rng::new(3)).unwrap();
        let b = synth_dataset(8, 4, 0.0, &mut Rng::new(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn orientation_shows_in_detail_bands() {
        // Class 0 varies along x only, class K/2 along y only.
        let horiz = grating(0, 4, 0.3);
        let vert = grating(2, 4, 0.3);
        let row = |t: &Tensor<f64>, r: usize| t.data()[r * 32..(r + 1) * 32].to_vec();
        assert_eq!(row(&horiz, 0), row(&horiz, 17));
        assert!(vert.data()[..32].iter().all(|&v| (v - vert.data()[0]).abs() < 1e-12));
    }

    #[test]
    fn rejects_bad_class_count() {
        assert!(synth_dataset(10, 1, 0.1, &mut Rng::new(0)).is_err());
        assert!(synth_dataset(10, 11, 0.1, &mut Rng::new(0)).is_err());
    }
}
