//! CIFAR binary format: one record per image, 1024-byte R, G, B planes, row-major.

use std::fs;
use std::path::{Path, PathBuf};

use super::{LabeledImage, PIXELS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CifarKind {
    /// `label, pixels` (3073 bytes).
    Ten,
    /// `coarse, fine, pixels` (3074 bytes).
    Hundred,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl CifarKind {
    pub fn record_len(self) -> usize {
        PIXELS + self.header_len()
    }

    pub fn classes(self) -> usize {
        match self {
            CifarKind::Ten => 10,
            CifarKind::Hundred => 100,
        }
    }

    fn header_len(self) -> usize {
        match self {
            CifarKind::Ten => 1,
            CifarKind::Hundred => 2,
        }
    }

    /// Standard file names of the binary distribution.
    pub fn files(self, split: Split) -> Vec<&'static str> {
        match (self, split) {
            (CifarKind::Ten, Split::Train) => {
                vec!["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"]
            }
            (CifarKind::Ten, Split::Test) => vec!["test_batch.bin"],
            (CifarKind::Hundred, Split::Train) => vec!["train.bin"],
            (CifarKind::Hundred, Split::Test) => vec!["test.bin"],
        }
    }
}

fn parse(bytes: &[u8], kind: CifarKind) -> Result<Vec<LabeledImage>> {
    let rec = kind.record_len();
    if bytes.len() % rec != 0 {
        return Err(Error::Format(format!(
            "CIFAR file length {} is not a multiple of the {rec}-byte record (expected {} or {} bytes)",
            bytes.len(),
            bytes.len() / rec * rec,
            (bytes.len() / rec + 1) * rec
        )));
    }
    bytes
        .chunks_exact(rec)
        .enumerate()
        .map(|(i, r)| {
            let head = kind.header_len();
            let label = r[head - 1] as usize;
            if label >= kind.classes() {
                return Err(Error::Data(format!("record {i}: label {label} outside [0, {})", kind.classes())));
            }
            let pixels = r[head..].iter().map(|&b| b as f64 / 255.0).collect();
            Ok(LabeledImage {
                pixels: Tensor::new(&[3, 32, 32], pixels)?,
                label,
                coarse: (kind == CifarKind::Hundred).then_some(r[0]),
            })
        })
        .collect()
}

fn encode(images: &[LabeledImage], kind: CifarKind) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(images.len() * kind.record_len());
    for img in images {
        if img.label >= kind.classes() {
            return Err(Error::Data(format!("label {} outside [0, {})", img.label, kind.classes())));
        }
        if kind == CifarKind::Hundred {
            out.push(img.coarse.unwrap_or(0));
        }
        out.push(img.label as u8);
        out.extend(img.pixels.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    Ok(out)
}

pub fn read_cifar10(bytes: &[u8]) -> Result<Vec<LabeledImage>> {
    parse(bytes, CifarKind::Ten)
}

pub fn read_cifar100(bytes: &[u8]) -> Result<Vec<LabeledImage>> {
    parse(bytes, CifarKind::Hundred)
}

pub fn load_cifar10(path: impl AsRef<Path>) -> Result<Vec<LabeledImage>> {
    read_cifar10(&fs::read(path)?)
}

pub fn load_cifar100(path: impl AsRef<Path>) -> Result<Vec<LabeledImage>> {
    read_cifar100(&fs::read(path)?)
}

pub fn write_cifar10(path: impl AsRef<Path>, images: &[LabeledImage]) -> Result<()> {
    Ok(fs::write(path, encode(images, CifarKind::Ten)?)?)
}

pub fn write_cifar100(path: impl AsRef<Path>, images: &[LabeledImage]) -> Result<()> {
    Ok(fs::write(path, encode(images, CifarKind::Hundred)?)?)
}

/// Loads a split from a directory holding the standard binary files.
pub fn load_cifar(dir: impl AsRef<Path>, kind: CifarKind, split: Split) -> Result<Vec<LabeledImage>> {
    let mut all = Vec::new();
    for name in kind.files(split) {
        let path: PathBuf = dir.as_ref().join(name);
        if !path.is_file() {
            return Err(Error::Data(format!("missing CIFAR file {}", path.display())));
        }
        all.extend(parse(&fs::read(&path)?, kind)?);
    }
    Ok(all)
}
