//! SGD with momentum and coupled weight decay, and the step learning-rate schedule.

use crate::autodiff::Gradients;
use crate::error::{Error, Result};
use crate::nn::{Bound, ParamKind, ParamStore, BN_MOMENTUM};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// `(epoch, rate)`: from `epoch` on (inclusive) the rate is `rate`.
    pub lr_steps: Vec<(usize, f64)>,
    pub seed: u64,
    /// Apply weight decay to batch-norm scale and shift too.
    pub decay_bn: bool,
    /// Running-statistics momentum of batch norm.
    pub bn_momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.1,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch_size: 64,
            epochs: 10,
            lr_steps: vec![(80, 0.01), (120, 0.001)],
            seed: 0,
            decay_bn: true,
            bn_momentum: BN_MOMENTUM,
        }
    }
}

impl TrainConfig {
    /// Full-length schedule: batch 256 for 160 epochs.
    pub fn paper() -> Self {
        TrainConfig { batch_size: 256, epochs: 160, ..TrainConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let rate_ok = |r: f64| r.is_finite() && r >= 0.0;
        if !rate_ok(self.lr0) || self.lr_steps.iter().any(|&(_, r)| !rate_ok(r)) {
            return bad("learning rates must be finite and non-negative".into());
        }
        if self.lr_steps.windows(2).any(|w| w[0].0 >= w[1].0) {
            return bad(format!("lr_steps epochs must be strictly increasing, got {:?}", self.lr_steps));
        }
        if !(0.0..1.0).contains(&self.momentum) || !rate_ok(self.weight_decay) {
            return bad("momentum must be in [0, 1) and weight_decay non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad(format!("bn_momentum must be in [0, 1], got {}", self.bn_momentum));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive".into());
        }
        Ok(())
    }
}

/// Piecewise-constant rate; a step applies from its epoch onward.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr_steps.iter().rev().find(|&&(e, _)| epoch >= e).map_or(cfg.lr0, |&(_, r)| r)
}

/// `g' = g + wd·p; v ← momentum·v + g'; p ← p − lr·v`.
pub fn sgd_step<T: Scalar>(
    p: &mut Tensor<T>,
    g: &Tensor<T>,
    v: &mut Tensor<T>,
    lr: f64,
    momentum: f64,
    wd: f64,
) -> Result<()> {
    if p.shape() != g.shape() || p.shape() != v.shape() {
        return Err(Error::Dimension(format!(
            "sgd_step shapes differ: param {:?}, grad {:?}, velocity {:?}",
            p.shape(),
            g.shape(),
            v.shape()
        )));
    }
    let (lr, m, wd) = (T::of(lr), T::of(momentum), T::of(wd));
    for ((pi, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
        let gd = gi + wd * *pi;
        *vi = m * *vi + gd;
        *pi -= lr * *vi;
    }
    Ok(())
}

/// Momentum buffers for every trainable parameter of a store.
#[derive(Clone, Debug)]
pub struct Sgd<T: Scalar> {
    velocity: Vec<Option<Tensor<T>>>,
}

pub const MOMENTUM_PREFIX: &str = "momentum.";

impl<T: Scalar> Sgd<T> {
    pub fn new(params: &ParamStore<T>) -> Result<Self> {
        let velocity = params
            .iter()
            .map(|(_, p)| p.kind.trainable().then(|| Tensor::zeros(p.value.shape())).transpose())
            .collect::<Result<_>>()?;
        Ok(Sgd { velocity })
    }

    /// Updates every trainable parameter bound in `bound`. Missing gradients count as zero.
    pub fn step(
        &mut self,
        params: &mut ParamStore<T>,
        bound: &Bound,
        grads: &Gradients<T>,
        lr: f64,
        cfg: &TrainConfig,
    ) -> Result<()> {
        for (id, node) in bound.trainable() {
            let kind = params.get(id).kind;
            let wd = if kind == ParamKind::Norm && !cfg.decay_bn { 0.0 } else { cfg.weight_decay };
            let v = self.velocity[id.index()].as_mut().expect("trainable parameter has a velocity");
            let p = params.value_mut(id);
            let g = grads.get_or_zeros(node, p.shape());
            sgd_step(p, &g, v, lr, cfg.momentum, wd)?;
        }
        Ok(())
    }

    /// Buffers named `momentum.<param>`, rounded to `f32`.
    pub fn state(&self, params: &ParamStore<T>) -> Vec<(String, Tensor<f32>)> {
        params
            .iter()
            .zip(&self.velocity)
            .filter_map(|((_, p), v)| v.as_ref().map(|v| (format!("{MOMENTUM_PREFIX}{}", p.name), v.cast())))
            .collect()
    }

    pub fn load_state<'a>(
        &mut self,
        params: &ParamStore<T>,
        entries: impl IntoIterator<Item = (&'a str, &'a Tensor<f32>)>,
    ) -> Result<()> {
        for (name, t) in entries {
            let Some(pname) = name.strip_prefix(MOMENTUM_PREFIX) else { continue };
            let id = params.id(pname).ok_or_else(|| Error::Format(format!("momentum for unknown parameter {pname:?}")))?;
            let slot = self.velocity[id.index()]
                .as_mut()
                .ok_or_else(|| Error::Format(format!("momentum for non-trainable {pname:?}")))?;
            if slot.shape() != t.shape() {
                return Err(Error::Format(format!("momentum {pname:?} has shape {:?}", t.shape())));
            }
            *slot = t.cast();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Rng;
    use proptest::prelude::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::new(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn no_force_scales_velocity() {
        let (mut p, mut v) = (t(&[1.0, -2.0]), t(&[0.5, 1.0]));
        sgd_step(&mut p, &t(&[0.0, 0.0]), &mut v, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(p, t(&[1.0 - 0.1 * 0.45, -2.0 - 0.1 * 0.9]));
        assert_eq!(v, t(&[0.45, 0.9]));
        let (mut p, mut v) = (t(&[3.0]), t(&[0.0]));
        sgd_step(&mut p, &t(&[0.0]), &mut v, 0.1, 0.9, 0.0).unwrap();
        assert_eq!((p.data()[0], v.data()[0]), (3.0, 0.0));
    }

    #[test]
    fn two_step_recursion() {
        let (mut p, mut v, g) = (t(&[1.0]), t(&[0.0]), t(&[1.0]));
        sgd_step(&mut p, &g, &mut v, 0.1, 0.9, 0.0).unwrap();
        assert!((v.data()[0] - 1.0).abs() < 1e-15 && (p.data()[0] - 0.9).abs() < 1e-15);
        sgd_step(&mut p, &g, &mut v, 0.1, 0.9, 0.0).unwrap();
        assert!((v.data()[0] - 1.9).abs() < 1e-15 && (p.data()[0] - 0.71).abs() < 1e-15);
    }

    #[test]
    fn decay_only() {
        let (mut p, mut v) = (t(&[10.0]), t(&[0.0]));
        sgd_step(&mut p, &t(&[0.0]), &mut v, 0.1, 0.9, 0.0005).unwrap();
        assert!((v.data()[0] - 0.005).abs() < 1e-15);
        assert!((p.data()[0] - 9.9995).abs() < 1e-13);
    }

    #[test]
    fn shape_mismatch() {
        let (mut p, mut v) = (t(&[1.0, 2.0]), t(&[0.0, 0.0]));
        assert!(matches!(sgd_step(&mut p, &t(&[1.0]), &mut v, 0.1, 0.9, 0.0), Err(Error::Dimension(_))));
    }

    #[test]
    fn schedule() {
        let cfg = TrainConfig::paper();
        assert_eq!(lr_at(0, &cfg), 0.1);
        assert_eq!(lr_at(79, &cfg), 0.1);
        assert_eq!(lr_at(80, &cfg), 0.01);
        assert_eq!(lr_at(119, &cfg), 0.01);
        assert_eq!(lr_at(120, &cfg), 0.001);
        assert_eq!(lr_at(159, &cfg), 0.001);
        assert_eq!((cfg.batch_size, cfg.epochs, cfg.momentum, cfg.weight_decay), (256, 160, 0.9, 0.0005));
        cfg.validate().unwrap();
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig { lr_steps: vec![(80, 0.01), (80, 0.001)], ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        assert!(TrainConfig { lr0: -0.1, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        TrainConfig { lr0: 0.0, ..TrainConfig::default() }.validate().unwrap();
    }

    fn vec_strategy() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, 1..16)
    }

    proptest! {
        #[test]
        fn zero_rate_is_a_fixed_point(p in vec_strategy(), seed in any::<u64>(), m in 0.0f64..0.99, wd in 0.0f64..0.1) {
            let mut rng = Rng::new(seed);
            let n = p.len();
            let mut pt = t(&p);
            let g: Tensor<f64> = rng.uniform_tensor(&[n], -5.0, 5.0);
            let mut v: Tensor<f64> = rng.uniform_tensor(&[n], -5.0, 5.0);
            sgd_step(&mut pt, &g, &mut v, 0.0, m, wd).unwrap();
            prop_assert_eq!(pt, t(&p));
        }

        #[test]
        fn plain_gradient_descent(p in vec_strategy(), seed in any::<u64>(), lr in 0.0f64..1.0) {
            let n = p.len();
            let g: Tensor<f64> = Rng::new(seed).uniform_tensor(&[n], -5.0, 5.0);
            let mut pt = t(&p);
            sgd_step(&mut pt, &g, &mut Tensor::zeros(&[n]).unwrap(), lr, 0.0, 0.0).unwrap();
            for i in 0..n {
                prop_assert_eq!(pt.data()[i], p[i] - lr * g.data()[i]);
            }
        }

        #[test]
        fn deterministic(p in vec_strategy(), seed in any::<u64>()) {
            let n = p.len();
            let mut rng = Rng::new(seed);
            let g: Tensor<f64> = rng.uniform_tensor(&[n], -5.0, 5.0);
            let v0: Tensor<f64> = rng.uniform_tensor(&[n], -5.0, 5.0);
            let run = || {
                let (mut pt, mut v) = (t(&p), v0.clone());
                sgd_step(&mut pt, &g, &mut v, 0.05, 0.9, 5e-4).unwrap();
                (pt.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>(), v.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>())
            };
            prop_assert_eq!(run(), run());
        }
    }
}
