use crate::autodiff::{BackwardCtx, Function, Graph, NodeId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel statistics of one training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased (divides by `m − 1`); equals the biased value when `m = 1`.
    pub var: Vec<T>,
}

/// Running mean/variance of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T: Scalar> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(RunningStats { mean: Tensor::zeros(&[channels])?, var: Tensor::full(&[channels], T::one())? })
    }

    /// `r ← (1 − momentum)·r + momentum·batch`.
    pub fn update(&mut self, batch: &BatchStats<T>, momentum: f64) {
        update_running(self.mean.data_mut(), &batch.mean, momentum);
        update_running(self.var.data_mut(), &batch.var, momentum);
    }
}

pub fn update_running<T: Scalar>(running: &mut [T], batch: &[T], momentum: f64) {
    let m = T::of(momentum);
    for (r, &b) in running.iter_mut().zip(batch) {
        *r = (T::one() - m) * *r + m * b;
    }
}

struct BatchNormFn<T: Scalar> {
    /// Normalized input `x̂`.
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

impl<T: Scalar> Function<T> for BatchNormFn<T> {
    fn name(&self) -> &'static str {
        "batchnorm"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let (n, c, h, w) = self.xhat.dims4()?;
        let plane = h * w;
        let m = T::of((n * plane) as f64);
        let gamma = ctx.inputs[1].data();
        let (dy, xh) = (ctx.grad.data(), self.xhat.data());
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for b in 0..n {
            for ch in 0..c {
                let o = (b * c + ch) * plane;
                for i in o..o + plane {
                    dbeta[ch] += dy[i];
                    dgamma[ch] += dy[i] * xh[i];
                }
            }
        }
        let dx = ctx.needs[0].then(|| {
            let mut dx = Tensor::from_parts(ctx.grad.shape().to_vec(), vec![T::zero(); dy.len()]);
            let out = dx.data_mut();
            for b in 0..n {
                for ch in 0..c {
                    let o = (b * c + ch) * plane;
                    let k = gamma[ch] * self.inv_std[ch];
                    for i in o..o + plane {
                        out[i] = match self.mode {
                            // dx = γ/σ · (dy − mean(dy) − x̂·mean(dy·x̂))
                            Mode::Train => k * (dy[i] - dbeta[ch] / m - xh[i] * dgamma[ch] / m),
                            Mode::Eval => k * dy[i],
                        };
                    }
                }
            }
            dx
        });
        Ok(vec![
            dx,
            ctx.needs[1].then(|| Tensor::from_parts(vec![c], dgamma)),
            ctx.needs[2].then(|| Tensor::from_parts(vec![c], dbeta)),
        ])
    }
}

/// Batch norm over NCHW. `Train` normalizes by batch statistics (returned for the
/// running update); `Eval` uses `running`.
pub fn batchnorm<T: Scalar>(
    g: &mut Graph<T>,
    x: NodeId,
    gamma: NodeId,
    beta: NodeId,
    running: &RunningStats<T>,
    mode: Mode,
) -> Result<(NodeId, Option<BatchStats<T>>)> {
    let (n, c, h, w) = g.value(x).dims4()?;
    for (what, id) in [("gamma", gamma), ("beta", beta)] {
        if g.shape(id) != [c] {
            return Err(Error::Dimension(format!("batch-norm {what} must be [{c}], got {:?}", g.shape(id))));
        }
    }
    if running.mean.shape() != [c] || running.var.shape() != [c] {
        return Err(Error::Dimension(format!("batch-norm running stats must be [{c}]")));
    }
    let plane = h * w;
    let m = n * plane;
    let xd = g.value(x).data();
    let eps = T::of(BN_EPS);
    let (mean, var, stats) = match mode {
        Mode::Train => {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for b in 0..n {
                for ch in 0..c {
                    let o = (b * c + ch) * plane;
                    mean[ch] += xd[o..o + plane].iter().copied().sum::<T>();
                }
            }
            mean.iter_mut().for_each(|v| *v /= T::of(m as f64));
            for b in 0..n {
                for ch in 0..c {
                    let o = (b * c + ch) * plane;
                    var[ch] += xd[o..o + plane].iter().map(|&v| (v - mean[ch]) * (v - mean[ch])).sum::<T>();
                }
            }
            let unbiased: Vec<T> = var.iter().map(|&s| s / T::of(m.saturating_sub(1).max(1) as f64)).collect();
            var.iter_mut().for_each(|v| *v /= T::of(m as f64));
            let stats = BatchStats { mean: mean.clone(), var: unbiased };
            (mean, var, Some(stats))
        }
        Mode::Eval => (running.mean.data().to_vec(), running.var.data().to_vec(), None),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let (gd, bd) = (g.value(gamma).data(), g.value(beta).data());
    let mut xhat = vec![T::zero(); xd.len()];
    let mut y = vec![T::zero(); xd.len()];
    for b in 0..n {
        for ch in 0..c {
            let o = (b * c + ch) * plane;
            for i in o..o + plane {
                xhat[i] = (xd[i] - mean[ch]) * inv_std[ch];
                y[i] = gd[ch] * xhat[i] + bd[ch];
            }
        }
    }
    let shape = g.shape(x).to_vec();
    let f = BatchNormFn { xhat: Tensor::from_parts(shape.clone(), xhat), inv_std, mode };
    Ok((g.apply(Tensor::from_parts(shape, y), &[x, gamma, beta], f), stats))
}

/// Tensor form; in `Train` mode the running stats are updated with momentum 0.1.
pub fn batchnorm_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: &mut RunningStats<T>,
    mode: Mode,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let (xi, gi, bi) = (g.input(x.clone()), g.input(gamma.clone()), g.input(beta.clone()));
    let (y, stats) = batchnorm(&mut g, xi, gi, bi, running, mode)?;
    if let Some(s) = stats {
        running.update(&s, BN_MOMENTUM);
    }
    Ok(g.value(y).clone())
}

struct CrossEntropyFn<T: Scalar> {
    probs: Tensor<T>,
    labels: Vec<usize>,
}

impl<T: Scalar> Function<T> for CrossEntropyFn<T> {
    fn name(&self) -> &'static str {
        "cross_entropy"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let k = self.probs.shape()[1];
        let scale = ctx.grad.data()[0] / T::of(self.labels.len() as f64);
        let mut d = self.probs.clone();
        for (row, &l) in d.data_mut().chunks_mut(k).zip(&self.labels) {
            row[l] -= T::one();
            row.iter_mut().for_each(|v| *v *= scale);
        }
        Ok(vec![Some(d)])
    }
}

/// Row-wise log-softmax probabilities of N×K logits.
pub fn softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>)> {
    if logits.rank() != 2 {
        return Err(Error::Dimension(format!("logits must be N×K, got {:?}", logits.shape())));
    }
    logits.ensure_finite("logits")?;
    let k = logits.shape()[1];
    let mut probs = logits.clone();
    let mut log_z = Vec::with_capacity(logits.shape()[0]);
    for row in probs.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let z: T = row.iter().map(|&v| (v - max).exp()).sum();
        log_z.push(max + z.ln());
        row.iter_mut().for_each(|v| *v = (*v - max).exp() / z);
    }
    Ok((probs, log_z))
}

pub(crate) fn check_labels(labels: &[usize], n: usize, k: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::Dimension(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Data(format!("label {bad} outside [0, {k})")));
    }
    Ok(())
}

/// Mean over the batch of `−log softmax(logits)[label]`.
pub fn cross_entropy<T: Scalar>(g: &mut Graph<T>, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
    let (probs, log_z) = softmax_rows(g.value(logits))?;
    let (n, k) = (probs.shape()[0], probs.shape()[1]);
    check_labels(labels, n, k)?;
    let l = g.value(logits).data();
    let total: T = labels.iter().enumerate().map(|(i, &y)| log_z[i] - l[i * k + y]).sum();
    let loss = Tensor::scalar(total / T::of(n as f64));
    Ok(g.apply(loss, &[logits], CrossEntropyFn { probs, labels: labels.to_vec() }))
}

/// Global average pool: N×C×H×W → N×C.
pub fn global_avg_pool<T: Scalar>(g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
    let (n, c, h, w) = g.value(x).dims4()?;
    let s = g.sum_to(x, &[n, c, 1, 1])?;
    let s = g.scale(s, T::one() / T::of((h * w) as f64));
    g.reshape(s, &[n, c])
}

/// `x · w + b` with `w` stored `[in, out]`.
pub fn linear<T: Scalar>(g: &mut Graph<T>, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
    let y = g.matmul(x, w)?;
    match b {
        Some(b) => g.add(y, b),
        None => Ok(y),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{gradcheck_many, Graph};
    use crate::data::Rng;

    fn random(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
        Rng::new(seed).uniform_tensor(shape, lo, hi)
    }

    fn channel_moments(y: &Tensor<f64>, ch: usize) -> (f64, f64) {
        let (n, c, h, w) = y.dims4().unwrap();
        let p = h * w;
        let vals: Vec<f64> = (0..n).flat_map(|b| y.data()[(b * c + ch) * p..(b * c + ch + 1) * p].to_vec()).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        (m, vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64)
    }

    /// Rescales each channel to exact zero mean and unit (biased) variance.
    fn standardize(x: &Tensor<f64>) -> Tensor<f64> {
        let (n, c, h, w) = x.dims4().unwrap();
        let mut out = x.clone();
        for ch in 0..c {
            let (m, v) = channel_moments(x, ch);
            for b in 0..n {
                let o = (b * c + ch) * h * w;
                out.data_mut()[o..o + h * w].iter_mut().for_each(|e| *e = (*e - m) / v.sqrt());
            }
        }
        out
    }

    fn ones(c: usize) -> Tensor<f64> {
        Tensor::full(&[c], 1.0).unwrap()
    }

    #[test]
    fn standardized_input_is_a_fixed_point() {
        let x = standardize(&random(&[4, 3, 5, 5], 1, -2.0, 2.0));
        let mut rs = RunningStats::new(3).unwrap();
        let y = batchnorm_forward(&x, &ones(3), &Tensor::zeros(&[3]).unwrap(), &mut rs, Mode::Train).unwrap();
        // x̂ = x/√(1+ε): the ε term alone moves unit-scale values by up to ~5e-6·|x|.
        let bound = x.max_abs() * (1.0 - 1.0 / (1.0 + BN_EPS).sqrt()) + 1e-12;
        assert!(y.max_abs_diff(&x).unwrap() <= bound);
        assert!(bound < 2e-5);
    }

    #[test]
    fn train_mode_output_moments() {
        let x = random(&[5, 2, 6, 6], 2, -20.0, 30.0);
        let mut rs = RunningStats::new(2).unwrap();
        let y = batchnorm_forward(&x, &ones(2), &Tensor::zeros(&[2]).unwrap(), &mut rs, Mode::Train).unwrap();
        for ch in 0..2 {
            let (m, v) = channel_moments(&y, ch);
            let (_, vx) = channel_moments(&x, ch);
            assert!(m.abs() < 1e-10);
            assert!((v - vx / (vx + BN_EPS)).abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-6, "input variance {vx} makes ε negligible");
        }
    }

    #[test]
    fn affine_parameters() {
        let x = standardize(&random(&[3, 2, 4, 4], 3, -1.0, 1.0));
        let mut rs = RunningStats::new(2).unwrap();
        let y = batchnorm_forward(
            &x,
            &Tensor::full(&[2], 2.0).unwrap(),
            &Tensor::full(&[2], 3.0).unwrap(),
            &mut rs,
            Mode::Train,
        )
        .unwrap();
        let k = 1.0 / (1.0 + BN_EPS).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - (2.0 * b * k + 3.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn running_stats_and_eval_mode() {
        let x = random(&[4, 1, 3, 3], 4, 1.0, 3.0);
        let mut rs = RunningStats::new(1).unwrap();
        batchnorm_forward(&x, &ones(1), &Tensor::zeros(&[1]).unwrap(), &mut rs, Mode::Train).unwrap();
        let (m, v) = channel_moments(&x, 0);
        let unbiased = v * 36.0 / 35.0;
        assert!((rs.mean.data()[0] - 0.1 * m).abs() < 1e-12);
        assert!((rs.var.data()[0] - (0.9 + 0.1 * unbiased)).abs() < 1e-12);
        let before = rs.clone();
        let y = batchnorm_forward(&x, &ones(1), &Tensor::zeros(&[1]).unwrap(), &mut rs, Mode::Eval).unwrap();
        assert_eq!(rs, before);
        let s = 1.0 / (before.var.data()[0] + BN_EPS).sqrt();
        assert!((y.data()[0] - (x.data()[0] - before.mean.data()[0]) * s).abs() < 1e-12);
    }

    #[test]
    fn single_sample_constant_batch_is_guarded() {
        let x = Tensor::full(&[1, 2, 1, 1], 4.0).unwrap();
        let mut rs = RunningStats::new(2).unwrap();
        let y = batchnorm_forward(&x, &ones(2), &Tensor::zeros(&[2]).unwrap(), &mut rs, Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batchnorm_gradients() {
        for mode in [Mode::Train, Mode::Eval] {
            for seed in 0..3 {
                let inputs = [
                    random(&[2, 3, 3, 3], seed, -2.0, 2.0),
                    random(&[3], seed + 5, 0.5, 1.5),
                    random(&[3], seed + 6, -1.0, 1.0),
                ];
                let running =
                    RunningStats { mean: random(&[3], seed + 7, -0.5, 0.5), var: random(&[3], seed + 8, 0.5, 2.0) };
                let probe = random(&[2, 3, 3, 3], seed + 9, -1.0, 1.0);
                let r = gradcheck_many(
                    |g, ids| {
                        let (y, _) = batchnorm(g, ids[0], ids[1], ids[2], &running, mode)?;
                        let p = g.input(probe.clone());
                        let y = g.mul(y, p)?;
                        g.sum(y)
                    },
                    &inputs,
                    1e-5,
                )
                .unwrap();
                assert!(r.max_rel_error < 1e-5, "{mode:?}: {r:?}");
            }
        }
    }

    fn ce(logits: &Tensor<f64>, labels: &[usize]) -> Result<f64> {
        let mut g = Graph::new();
        let l = g.input(logits.clone());
        let loss = cross_entropy(&mut g, l, labels)?;
        Ok(g.value(loss).item().unwrap())
    }

    #[test]
    fn cross_entropy_examples() {
        for k in [2usize, 4, 10] {
            let loss = ce(&Tensor::full(&[3, k], 0.7).unwrap(), &[0, 1, k - 1]).unwrap();
            assert!((loss - (k as f64).ln()).abs() < 1e-12);
        }
        let big = Tensor::new(&[1, 3], vec![-500.0, 800.0, 0.0]).unwrap();
        assert!(ce(&big, &[1]).unwrap() < 1e-300);
        let two = Tensor::new(&[1, 2], vec![0.0, 2f64.ln()]).unwrap();
        assert!((ce(&two, &[1]).unwrap() + (2.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!(matches!(ce(&two, &[2]), Err(Error::Data(_))));
    }

    #[test]
    fn cross_entropy_gradient() {
        for seed in 0..3 {
            let logits = random(&[4, 5], seed, -3.0, 3.0);
            let r = crate::autodiff::gradcheck(|g, x| cross_entropy(g, x, &[0, 4, 2, 2]), &logits, 1e-5).unwrap();
            assert!(r.max_rel_error < 1e-6, "{r:?}");
        }
    }

    #[test]
    fn pooling_and_linear() {
        let x = random(&[2, 3, 4, 4], 1, -1.0, 1.0);
        let mut g = Graph::new();
        let xi = g.input(x.clone());
        let p = global_avg_pool(&mut g, xi).unwrap();
        assert_eq!(g.shape(p), &[2, 3]);
        assert!((g.value(p).data()[4] - x.data()[16 * 4..16 * 5].iter().sum::<f64>() / 16.0).abs() < 1e-15);
        let w = g.input(random(&[3, 5], 2, -1.0, 1.0));
        let b = g.input(random(&[5], 3, -1.0, 1.0));
        let y = linear(&mut g, p, w, Some(b)).unwrap();
        assert_eq!(g.shape(y), &[2, 5]);
    }
}
