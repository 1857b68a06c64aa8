//! Flat `key = value` run configuration.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use wacnn::attention::WaVariant;
use wacnn::nn::{NetworkSpec, Placement};
use wacnn::optim::TrainConfig;
use wacnn::wavelet::Wavelet;
use wacnn::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dataset {
    Cifar10,
    Cifar100,
    Synth,
}

impl FromStr for Dataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cifar10" => Ok(Dataset::Cifar10),
            "cifar100" => Ok(Dataset::Cifar100),
            "synth" => Ok(Dataset::Synth),
            _ => Err(Error::Config(format!("unknown dataset {s:?}; valid: cifar10, cifar100, synth"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub train: usize,
    pub val: usize,
    pub classes: usize,
    pub noise: f64,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub dataset: Dataset,
    pub data_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub net: NetworkSpec,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub augment: bool,
    pub precision: Precision,
}

pub const KEYS: &[&str] = &[
    "dataset",
    "data_path",
    "out_dir",
    "placement",
    "wavelet",
    "variant",
    "widths",
    "blocks_per_stage",
    "lr0",
    "lr_steps",
    "momentum",
    "weight_decay",
    "batch_size",
    "epochs",
    "seed",
    "decay_bn",
    "bn_momentum",
    "augment",
    "precision",
    "synth_train",
    "synth_val",
    "synth_classes",
    "synth_noise",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

/// `epoch:rate` pairs, comma separated; empty for a constant rate.
fn parse_steps(value: &str) -> Result<Vec<(usize, f64)>> {
    if value.is_empty() || value == "none" {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|pair| {
            let (e, r) = pair
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("lr_steps: expected epoch:rate, got {pair:?}")))?;
            Ok((parse("lr_steps", e.trim())?, parse("lr_steps", r.trim())?))
        })
        .collect()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig {
            dataset: Dataset::Synth,
            data_path: None,
            out_dir: PathBuf::from("run"),
            net: NetworkSpec::default(),
            train: TrainConfig::default(),
            synth: SynthConfig { train: 2000, val: 400, classes: 4, noise: 0.2 },
            augment: false,
            precision: Precision::F32,
        };
        let mut augment = None;
        let mut seen = HashSet::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", no + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!("line {}: unknown key {key:?}", no + 1)));
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key:?}", no + 1)));
            }
            match key {
                "dataset" => cfg.dataset = value.parse()?,
                "data_path" => cfg.data_path = Some(PathBuf::from(value)),
                "out_dir" => cfg.out_dir = PathBuf::from(value),
                "placement" => cfg.net.placement = value.parse::<Placement>()?,
                "wavelet" => cfg.net.wavelet = value.parse::<Wavelet>()?,
                "variant" => cfg.net.variant = value.parse::<WaVariant>()?,
                "widths" => cfg.net.stage_widths = parse_list(key, value)?,
                "blocks_per_stage" => cfg.net.blocks_per_stage = parse(key, value)?,
                "lr0" => cfg.train.lr0 = parse(key, value)?,
                "lr_steps" => cfg.train.lr_steps = parse_steps(value)?,
                "momentum" => cfg.train.momentum = parse(key, value)?,
                "weight_decay" => cfg.train.weight_decay = parse(key, value)?,
                "batch_size" => cfg.train.batch_size = parse(key, value)?,
                "epochs" => cfg.train.epochs = parse(key, value)?,
                "seed" => cfg.train.seed = parse(key, value)?,
                "decay_bn" => cfg.train.decay_bn = parse_bool(key, value)?,
                "bn_momentum" => cfg.train.bn_momentum = parse(key, value)?,
                "augment" => augment = Some(parse_bool(key, value)?),
                "precision" => {
                    cfg.precision = match value {
                        "f32" => Precision::F32,
                        "f64" => Precision::F64,
                        _ => return Err(Error::Config(format!("precision: expected f32 or f64, got {value:?}"))),
                    }
                }
                "synth_train" => cfg.synth.train = parse(key, value)?,
                "synth_val" => cfg.synth.val = parse(key, value)?,
                "synth_classes" => cfg.synth.classes = parse(key, value)?,
                "synth_noise" => cfg.synth.noise = parse(key, value)?,
                _ => unreachable!("key list and match disagree on {key}"),
            }
        }
        // Flipping a grating mirrors its angle into another class, so synth data is not augmented unless asked.
        cfg.augment = augment.unwrap_or(cfg.dataset != Dataset::Synth);
        cfg.net.num_classes = match cfg.dataset {
            Dataset::Cifar10 => 10,
            Dataset::Cifar100 => 100,
            Dataset::Synth => cfg.synth.classes,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that can be checked before any data is read.
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.train.validate()?;
        match self.dataset {
            Dataset::Synth => {
                if !(2..=10).contains(&self.synth.classes) {
                    return Err(Error::Config(format!("synth_classes must be in [2, 10], got {}", self.synth.classes)));
                }
                if self.synth.train == 0 || self.synth.val == 0 {
                    return Err(Error::Config("synth_train and synth_val must be positive".into()));
                }
                if !(self.synth.noise.is_finite() && self.synth.noise >= 0.0) {
                    return Err(Error::Config("synth_noise must be finite and non-negative".into()));
                }
            }
            Dataset::Cifar10 | Dataset::Cifar100 => match &self.data_path {
                None => return Err(Error::Config("data_path is required for CIFAR datasets".into())),
                Some(p) if !p.is_dir() => {
                    return Err(Error::Data(format!("data_path {} is not a directory", p.display())));
                }
                Some(_) => {}
            },
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_comments() {
        let cfg = RunConfig::parse("# desk run\nplacement = layer3 # inline\n\nepochs=3\nlr_steps = 2:0.01, 5:0.001\n").unwrap();
        assert_eq!(cfg.net.placement, Placement::Layer(3));
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.lr_steps, vec![(2, 0.01), (5, 0.001)]);
        assert_eq!(cfg.dataset, Dataset::Synth);
        assert_eq!(cfg.net.num_classes, 4);
        assert!(!cfg.augment);
    }

    #[test]
    fn every_key_is_accepted() {
        let text = "dataset = synth\ndata_path = .\nout_dir = o\nplacement = all\nwavelet = db2\nvariant = one_by_one\n\
            widths = 8,16\nblocks_per_stage = 1\nlr0 = 0.05\nlr_steps = none\nmomentum = 0.8\nweight_decay = 0\n\
            batch_size = 4\nepochs = 1\nseed = 9\ndecay_bn = false\nbn_momentum = 0\naugment = yes\nprecision = f64\n\
            synth_train = 8\nsynth_val = 4\nsynth_classes = 2\nsynth_noise = 0";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(text.lines().count(), KEYS.len());
        assert_eq!(cfg.net.stage_widths, vec![8, 16]);
        assert_eq!(cfg.precision, Precision::F64);
        assert!(cfg.augment && !cfg.train.decay_bn);
    }

    #[test]
    fn rejections() {
        for bad in [
            "learning_rate = 0.1",
            "epochs",
            "epochs = 2\nepochs = 3",
            "placement = layer1",
            "variant = wide",
            "dataset = mnist",
            "precision = f16",
            "lr_steps = 80",
            "epochs = 0",
            "synth_classes = 11",
            "dataset = cifar10",
            "augment = maybe",
        ] {
            assert!(matches!(RunConfig::parse(bad), Err(Error::Config(_))), "{bad}");
        }
        assert!(matches!(RunConfig::parse("wavelet = sym4"), Err(Error::Registry { .. })));
        assert!(matches!(RunConfig::parse("dataset = cifar10\ndata_path = /no/such/dir"), Err(Error::Data(_))));
    }
}
