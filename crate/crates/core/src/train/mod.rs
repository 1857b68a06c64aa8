//! Training loop, evaluation and metrics.

use std::fmt::Write as _;

use crate::autodiff::Graph;
use crate::data::{augment, stack, LabeledImage, NormStats, Rng};
use crate::error::{Error, Result};
use crate::nn::{cross_entropy, softmax_rows, Mode, Network};
use crate::optim::{lr_at, Sgd, TrainConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Batch size used for evaluation passes. Results do not depend on it.
pub const EVAL_BATCH: usize = 250;

pub const CSV_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    /// Mean cross-entropy.
    pub loss: f64,
    /// Fraction of correct top-1 predictions.
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train: Evaluation,
    pub val: Evaluation,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6}",
            self.epoch, self.train.loss, self.train.accuracy, self.val.loss, self.val.accuracy
        )
    }
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        writeln!(s, "{}", r.csv_row()).expect("writing to a String");
    }
    s
}

fn batch_tensor<T: Scalar>(images: &[LabeledImage], norm: &NormStats) -> Result<(Tensor<T>, Vec<usize>)> {
    let normalized: Vec<LabeledImage> = images.iter().map(|im| norm.apply(im)).collect();
    stack(&normalized)
}

/// Eval-mode loss and accuracy, without augmentation.
pub fn evaluate<T: Scalar>(net: &Network<T>, images: &[LabeledImage], norm: &NormStats) -> Result<Evaluation> {
    if images.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty split".into()));
    }
    let k = net.spec.num_classes;
    let (mut loss, mut correct) = (0.0, 0usize);
    for chunk in images.chunks(EVAL_BATCH) {
        let (x, labels) = batch_tensor::<T>(chunk, norm)?;
        let logits = net.predict(&x)?;
        let (probs, log_z) = softmax_rows(&logits)?;
        for (i, &y) in labels.iter().enumerate() {
            if y >= k {
                return Err(Error::Data(format!("label {y} outside [0, {k})")));
            }
            let row = &probs.data()[i * k..(i + 1) * k];
            loss += (log_z[i] - logits.data()[i * k + y]).f64();
            // First maximum wins ties.
            let best = (0..k).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            correct += usize::from(best == y);
        }
    }
    let total = images.len();
    Ok(Evaluation { loss: loss / total as f64, accuracy: correct as f64 / total as f64, correct, total })
}

/// Owns the network, optimizer state and data normalization of one run.
#[derive(Clone, Debug)]
pub struct Trainer<T: Scalar> {
    pub net: Network<T>,
    pub opt: Sgd<T>,
    pub cfg: TrainConfig,
    pub norm: NormStats,
    pub augment: bool,
    /// Completed epochs.
    pub epoch: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(net: Network<T>, cfg: TrainConfig, norm: NormStats, augment: bool) -> Result<Self> {
        cfg.validate()?;
        let opt = Sgd::new(&net.params)?;
        Ok(Trainer { net, opt, cfg, norm, augment, epoch: 0 })
    }

    /// One pass over `train` in a shuffled order seeded by `seed + epoch`. Returns the mean batch loss.
    pub fn train_epoch(&mut self, train: &[LabeledImage]) -> Result<f64> {
        if train.is_empty() {
            return Err(Error::Data("empty training split".into()));
        }
        let epoch = self.epoch;
        let lr = lr_at(epoch, &self.cfg);
        let mut order: Vec<usize> = (0..train.len()).collect();
        Rng::new(self.cfg.seed.wrapping_add(epoch as u64)).shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let images: Vec<LabeledImage> = chunk
                .iter()
                .map(|&i| {
                    if self.augment {
                        augment(&train[i], &mut Rng::derive(self.cfg.seed, epoch as u64, i as u64))
                    } else {
                        train[i].clone()
                    }
                })
                .collect();
            let (x, labels) = batch_tensor::<T>(&images, &self.norm)?;
            let mut g = Graph::new();
            let bound = self.net.params.bind(&mut g);
            let xi = g.input(x);
            let out = self.net.forward(&mut g, &bound, xi, Mode::Train)?;
            let loss_id = cross_entropy(&mut g, out.logits, &labels)?;
            let loss = g.value(loss_id).item()?.f64();
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("loss is {loss} at epoch {} batch {bi}", epoch + 1)));
            }
            let grads = g.backward(loss_id)?;
            drop(g);
            self.opt.step(&mut self.net.params, &bound, &grads, lr, &self.cfg)?;
            self.net.apply_bn_updates(&out.bn_updates, self.cfg.bn_momentum);
            total += loss;
            batches += 1;
        }
        for (_, p) in self.net.params.iter() {
            if !p.value.is_finite() {
                return Err(Error::Numeric(format!("parameter {} became non-finite at epoch {}", p.name, epoch + 1)));
            }
        }
        self.epoch += 1;
        Ok(total / batches as f64)
    }

    /// Trains for the remaining configured epochs, evaluating both splits after each.
    pub fn fit(
        &mut self,
        train: &[LabeledImage],
        val: &[LabeledImage],
        mut on_epoch: impl FnMut(&EpochMetrics),
    ) -> Result<Vec<EpochMetrics>> {
        let mut rows = Vec::new();
        while self.epoch < self.cfg.epochs {
            self.train_epoch(train)?;
            let m = EpochMetrics {
                epoch: self.epoch,
                train: evaluate(&self.net, train, &self.norm)?,
                val: evaluate(&self.net, val, &self.norm)?,
            };
            on_epoch(&m);
            rows.push(m);
        }
        Ok(rows)
    }

    /// Parameters, buffers, momentum, epoch and normalization stats.
    pub fn state(&self) -> Vec<(String, Tensor<f32>)> {
        let mut entries = self.net.state();
        entries.extend(self.opt.state(&self.net.params));
        entries.extend(meta_entries(self.epoch, &self.norm));
        entries
    }

    /// Restores everything written by [`Trainer::state`].
    pub fn load_state(&mut self, entries: &[(String, Tensor<f32>)]) -> Result<()> {
        let (epoch, norm) = restore_network(&mut self.net, entries)?;
        self.opt.load_state(&self.net.params, entries.iter().map(|(n, t)| (n.as_str(), t)))?;
        self.epoch = epoch;
        self.norm = norm;
        Ok(())
    }
}

const META_EPOCH: &str = "meta.epoch";
const META_MEAN: &str = "meta.norm_mean";
const META_STD: &str = "meta.norm_std";

fn meta_entries(epoch: usize, norm: &NormStats) -> Vec<(String, Tensor<f32>)> {
    let vec3 = |v: &[f64; 3]| Tensor::new(&[3], v.iter().map(|&x| x as f32).collect()).expect("length 3");
    vec![
        (META_EPOCH.into(), Tensor::new(&[1], vec![epoch as f32]).expect("length 1")),
        (META_MEAN.into(), vec3(&norm.mean)),
        (META_STD.into(), vec3(&norm.std)),
    ]
}

/// Loads network parameters and returns the stored `(epoch, normalization)`.
pub fn restore_network<T: Scalar>(net: &mut Network<T>, entries: &[(String, Tensor<f32>)]) -> Result<(usize, NormStats)> {
    net.load_state(entries.iter().map(|(n, t)| (n.as_str(), t)))?;
    let find = |name: &str, len: usize| {
        entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .filter(|t| t.len() == len)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))
    };
    let epoch = find(META_EPOCH, 1)?.data()[0] as usize;
    let vec3 = |t: &Tensor<f32>| [0, 1, 2].map(|i| t.data()[i] as f64);
    let norm = NormStats { mean: vec3(find(META_MEAN, 3)?), std: vec3(find(META_STD, 3)?) };
    Ok((epoch, norm))
}

#[cfg(test)]
mod tests;
