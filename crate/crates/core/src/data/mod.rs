//! Datasets, augmentation and normalization.

mod augment;
mod cifar;
mod norm;
mod rng;
mod synth;

pub use augment::{augment, augment_with, PAD};
pub use cifar::{
    load_cifar, load_cifar10, load_cifar100, read_cifar10, read_cifar100, write_cifar10, write_cifar100, CifarKind,
    Split,
};
pub use norm::{normalize, NormStats, STD_GUARD};
pub use rng::Rng;
pub use synth::{grating, synth_dataset, synth_splits, GRATING_PERIOD};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHANNELS: usize = 3;
pub const SIDE: usize = 32;
pub const PIXELS: usize = CHANNELS * SIDE * SIDE;

/// One 3×32×32 image with its class label.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub pixels: Tensor<f64>,
    pub label: usize,
    /// CIFAR-100 coarse label; carried through but unused.
    pub coarse: Option<u8>,
}

impl LabeledImage {
    pub fn new(pixels: Tensor<f64>, label: usize) -> Result<Self> {
        if pixels.shape() != [CHANNELS, SIDE, SIDE] {
            return Err(Error::Data(format!("image must be 3x32x32, got {:?}", pixels.shape())));
        }
        Ok(LabeledImage { pixels, label, coarse: None })
    }
}

/// Stacks images into an N×3×32×32 tensor plus labels.
pub fn stack<'a, T: Scalar>(images: impl IntoIterator<Item = &'a LabeledImage>) -> Result<(Tensor<T>, Vec<usize>)> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for img in images {
        data.extend(img.pixels.data().iter().map(|&v| T::of(v)));
        labels.push(img.label);
    }
    if labels.is_empty() {
        return Err(Error::Data("cannot stack an empty batch".into()));
    }
    let x = Tensor::new(&[labels.len(), CHANNELS, SIDE, SIDE], data)?;
    Ok((x, labels))
}
