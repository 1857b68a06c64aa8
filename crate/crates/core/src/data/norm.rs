use super::{LabeledImage, CHANNELS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lower bound on the divisor so constant channels map to zero instead of NaN.
pub const STD_GUARD: f64 = 1e-8;

/// Per-channel mean and standard deviation of a training split.
///
/// Values are rounded through `f32` when computed so that the checkpoint
/// (which stores `f32`) reproduces them exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: [f64; CHANNELS],
    pub std: [f64; CHANNELS],
}

impl NormStats {
    pub fn identity() -> Self {
        NormStats { mean: [0.0; CHANNELS], std: [1.0; CHANNELS] }
    }

    pub fn compute(images: &[LabeledImage]) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Data("cannot compute normalization stats of an empty split".into()));
        }
        let plane = images[0].pixels.len() / CHANNELS;
        let count = (images.len() * plane) as f64;
        let mut mean = [0.0; CHANNELS];
        let mut std = [0.0; CHANNELS];
        for c in 0..CHANNELS {
            let channel = || images.iter().flat_map(|im| &im.pixels.data()[c * plane..(c + 1) * plane]);
            let m = channel().sum::<f64>() / count;
            let var = channel().map(|v| (v - m) * (v - m)).sum::<f64>() / count;
            mean[c] = m as f32 as f64;
            std[c] = var.sqrt() as f32 as f64;
        }
        Ok(NormStats { mean, std })
    }

    pub fn apply(&self, img: &LabeledImage) -> LabeledImage {
        let plane = img.pixels.len() / CHANNELS;
        let pixels = Tensor::from_fn(img.pixels.shape(), |i| {
            let c = i / plane;
            (img.pixels.data()[i] - self.mean[c]) / self.std[c].max(STD_GUARD)
        })
        .expect("same shape");
        LabeledImage { pixels, label: img.label, coarse: img.coarse }
    }
}

pub fn normalize(images: &[LabeledImage], stats: &NormStats) -> Vec<LabeledImage> {
    images.iter().map(|im| stats.apply(im)).collect()
}
