use std::fs;
use std::path::Path;

use wacnn::data::{load_cifar, synth_splits, CifarKind, LabeledImage, NormStats, Split};
use wacnn::nn::{build_network, checkpoint};
use wacnn::selfcheck::{self, Options};
use wacnn::train::{evaluate, metrics_csv, restore_network, Trainer};
use wacnn::wavelet::{dwt2, filter_bank};
use wacnn::{Error, Result, Scalar, Tensor};

use crate::config::{Dataset, Precision, RunConfig};
use crate::pgm::Gray;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.wck";

/// Detail bands whose spread is below this (relative to their magnitude) count as constant.
const FLAT_BAND: f64 = 1e-9;

pub fn decompose(input: &Path, wavelet: &str, out: &Path) -> Result<()> {
    let fb = filter_bank(wavelet)?;
    let img = Gray::read(input)?;
    if img.width % 2 != 0 || img.height % 2 != 0 {
        return Err(Error::Shape(format!(
            "{} is {}×{}; both extents must be even",
            input.display(),
            img.width,
            img.height
        )));
    }
    let values: Vec<f64> = img.pixels.iter().map(|&p| f64::from(p)).collect();
    let x = Tensor::new(&[1, 1, img.height, img.width], values)?;
    let bands = dwt2(&x, &fb)?;
    fs::create_dir_all(out)?;
    let (w2, h2) = (img.width / 2, img.height / 2);
    for (name, band) in [("ll", &bands.ll), ("lh", &bands.lh), ("hl", &bands.hl), ("hh", &bands.hh)] {
        let d = band.data();
        let mapped: Vec<f64> = if name == "ll" {
            d.iter().map(|v| v / 2.0).collect()
        } else {
            let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi - lo <= FLAT_BAND * band.max_abs().max(1.0) {
                vec![128.0; d.len()]
            } else {
                d.iter().map(|v| (v - lo) / (hi - lo) * 255.0).collect()
            }
        };
        Gray::from_values(w2, h2, &mapped).write(&out.join(format!("{name}.pgm")))?;
        println!("{name}: {w2}x{h2} energy {:.6e}", band.sum_squares());
    }
    Ok(())
}

fn load_splits(cfg: &RunConfig) -> Result<(Vec<LabeledImage>, Vec<LabeledImage>)> {
    let kind = match cfg.dataset {
        Dataset::Synth => {
            let s = &cfg.synth;
            return synth_splits(s.train, s.val, s.classes, s.noise, cfg.train.seed);
        }
        Dataset::Cifar10 => CifarKind::Ten,
        Dataset::Cifar100 => CifarKind::Hundred,
    };
    let dir = cfg.data_path.as_ref().ok_or_else(|| Error::Config("data_path is required".into()))?;
    Ok((load_cifar(dir, kind, Split::Train)?, load_cifar(dir, kind, Split::Test)?))
}

pub fn train(config: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Error::Config(format!("cannot create out_dir {}: {e}", cfg.out_dir.display())))?;
    let (train, val) = load_splits(&cfg)?;
    match cfg.precision {
        Precision::F32 => train_as::<f32>(&cfg, &train, &val),
        Precision::F64 => train_as::<f64>(&cfg, &train, &val),
    }
}

fn train_as<T: Scalar>(cfg: &RunConfig, train: &[LabeledImage], val: &[LabeledImage]) -> Result<()> {
    let norm = NormStats::compute(train)?;
    let net = build_network::<T>(&cfg.net, cfg.train.seed)?;
    println!(
        "training {} params on {} images ({} held out), {} epochs",
        net.params.trainable_count(),
        train.len(),
        val.len(),
        cfg.train.epochs
    );
    let mut trainer = Trainer::new(net, cfg.train.clone(), norm, cfg.augment)?;
    let metrics_path = cfg.out_dir.join(METRICS_FILE);
    let mut rows = Vec::new();
    let mut write_err = None;
    let fitted = trainer.fit(train, val, |m| {
        println!(
            "epoch {:>3}  train loss {:.4} acc {:.2}%  val loss {:.4} acc {:.2}%",
            m.epoch,
            m.train.loss,
            100.0 * m.train.accuracy,
            m.val.loss,
            100.0 * m.val.accuracy
        );
        rows.push(*m);
        if let Err(e) = fs::write(&metrics_path, metrics_csv(&rows)) {
            write_err.get_or_insert(e);
        }
    });
    if let Err(e) = fitted {
        return Err(match e {
            Error::Numeric(msg) => Error::Numeric(format!("{msg}; training stopped (try a smaller lr0)")),
            other => other,
        });
    }
    if let Some(e) = write_err {
        return Err(e.into());
    }
    let ck = cfg.out_dir.join(CHECKPOINT_FILE);
    checkpoint::save(&ck, &trainer.state())?;
    println!("wrote {} and {}", metrics_path.display(), ck.display());
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalSplit {
    Train,
    /// Synthetic validation split, or the CIFAR test split.
    Val,
}

pub fn eval(ck: &Path, config: &Path, split: EvalSplit) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let entries = checkpoint::load(ck)?;
    let (train, val) = load_splits(&cfg)?;
    let images = match split {
        EvalSplit::Train => &train,
        EvalSplit::Val => &val,
    };
    let r = match cfg.precision {
        Precision::F32 => eval_as::<f32>(&cfg, &entries, images)?,
        Precision::F64 => eval_as::<f64>(&cfg, &entries, images)?,
    };
    println!("loss {:.6}", r.loss);
    println!("top-1 accuracy: {:.2}% ({}/{})", 100.0 * r.accuracy, r.correct, r.total);
    Ok(())
}

fn eval_as<T: Scalar>(
    cfg: &RunConfig,
    entries: &[(String, Tensor<f32>)],
    images: &[LabeledImage],
) -> Result<wacnn::train::Evaluation> {
    let mut net = build_network::<T>(&cfg.net, cfg.train.seed)?;
    let (_, norm) = restore_network(&mut net, entries)?;
    evaluate(&net, images, &norm)
}

pub fn selfcheck(perturb_haar: bool) -> Result<()> {
    let outcomes = selfcheck::run(&Options { perturb_haar });
    for o in &outcomes {
        println!("{}", o.line());
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{}/{} properties passed", outcomes.len() - failed, outcomes.len());
    if failed > 0 {
        return Err(Error::Numeric(format!("{failed} selfcheck properties failed")));
    }
    Ok(())
}
