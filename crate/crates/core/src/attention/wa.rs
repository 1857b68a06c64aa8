use std::fmt;
use std::str::FromStr;

use super::eval;
use crate::autodiff::{Graph, NodeId};
use crate::data::Rng;
use crate::error::{Error, Result};
use crate::nn::he_normal;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::wavelet::{dwt_bands, Band, Wavelet};

/// Head applied after the attention-weighted low-frequency map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WaVariant {
    Plain,
    /// 3×3 stride-1 conv, padding 1.
    Stride,
    /// 1×1 conv.
    OneByOne,
}

impl WaVariant {
    pub const ALL: [WaVariant; 3] = [WaVariant::Plain, WaVariant::Stride, WaVariant::OneByOne];

    pub fn name(self) -> &'static str {
        match self {
            WaVariant::Plain => "plain",
            WaVariant::Stride => "stride",
            WaVariant::OneByOne => "one_by_one",
        }
    }

    /// Kernel size and padding of the head conv, if any.
    pub fn head_geometry(self) -> Option<(usize, usize)> {
        match self {
            WaVariant::Plain => None,
            WaVariant::Stride => Some((3, 1)),
            WaVariant::OneByOne => Some((1, 0)),
        }
    }
}

impl FromStr for WaVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WaVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown WA variant {s:?}; valid: plain, stride, one_by_one")))
    }
}

impl fmt::Display for WaVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WaConfig {
    pub wavelet: Wavelet,
    pub variant: WaVariant,
    /// Output channels of the head; ignored by `Plain`.
    pub out_channels: usize,
}

impl WaConfig {
    pub fn plain(wavelet: Wavelet) -> Self {
        WaConfig { wavelet, variant: WaVariant::Plain, out_channels: 0 }
    }

    pub fn head_shape(&self, in_channels: usize) -> Option<[usize; 4]> {
        self.variant.head_geometry().map(|(k, _)| [self.out_channels, in_channels, k, k])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct WaNodes {
    pub out: NodeId,
    /// Raw low-frequency subband of the input (the shortcut source in the network).
    pub ll: NodeId,
    /// Spatial attention map `softmax(lh + hl)`.
    pub attention: NodeId,
}

/// Graph form. `head` must be present exactly when the variant has a conv.
pub fn wa_graph<T: Scalar>(g: &mut Graph<T>, x: NodeId, cfg: &WaConfig, head: Option<NodeId>) -> Result<WaNodes> {
    let fb = cfg.wavelet.filter_bank();
    let [ll, lh, hl] = dwt_bands(g, x, &fb, [Band::Ll, Band::Lh, Band::Hl])?;
    let detail = g.add(lh, hl)?;
    let attention = g.softmax(detail, &[2, 3])?;
    let m = g.mul(ll, attention)?;
    let z0 = g.add(ll, m)?;
    let out = match (cfg.variant.head_geometry(), head) {
        (None, None) => z0,
        (Some((k, pad)), Some(w)) => {
            let want = cfg.head_shape(g.shape(x)[1]).expect("head variant");
            if g.shape(w) != want {
                return Err(Error::Dimension(format!(
                    "WA {} head weight must be {want:?}, got {:?}",
                    cfg.variant,
                    g.shape(w)
                )));
            }
            debug_assert_eq!(want[2], k);
            g.conv2d(z0, w, None, 1, pad)?
        }
        (None, Some(_)) => return Err(Error::Config("plain WA block takes no head weight".into())),
        (Some(_), None) => return Err(Error::Config(format!("WA {} variant needs a head weight", cfg.variant))),
    };
    Ok(WaNodes { out, ll, attention })
}

/// Tensor form of [`wa_graph`].
pub fn wa_forward<T: Scalar>(x: &Tensor<T>, cfg: &WaConfig, head: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let weights: Vec<&Tensor<T>> = head.into_iter().collect();
    eval(x, &weights, |g, x, w| Ok(wa_graph(g, x, cfg, w.first().copied())?.out))
}

/// A WA block owning its head weight.
#[derive(Clone, Debug)]
pub struct WaBlock<T: Scalar> {
    pub cfg: WaConfig,
    pub head: Option<Tensor<T>>,
}

impl<T: Scalar> WaBlock<T> {
    pub fn new(cfg: WaConfig, in_channels: usize, rng: &mut Rng) -> Result<Self> {
        let head = match cfg.head_shape(in_channels) {
            Some(shape) if cfg.out_channels == 0 => {
                return Err(Error::Config(format!("WA {} variant needs out_channels > 0, shape {shape:?}", cfg.variant)))
            }
            Some(shape) => Some(he_normal(rng, &shape)),
            None => None,
        };
        Ok(WaBlock { cfg, head })
    }

    pub fn param_count(&self) -> usize {
        self.head.as_ref().map_or(0, |w| w.len())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        wa_forward(x, &self.cfg, self.head.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck_many;
    use crate::tensor::{add, mul, softmax};
    use crate::wavelet::dwt2;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        Rng::new(seed).uniform_tensor(shape, -1.0, 1.0)
    }

    #[test]
    fn constant_input_closed_form() {
        for (side, c) in [(4usize, 1.0), (8, -2.5), (16, 0.75)] {
            let x = Tensor::full(&[2, 3, side, side], c).unwrap();
            let out = wa_forward(&x, &WaConfig::plain(Wavelet::Haar), None).unwrap();
            let n = (side / 2) as f64;
            let want = 2.0 * c * (1.0 + 1.0 / (n * n));
            assert_eq!(out.shape(), &[2, 3, side / 2, side / 2]);
            assert!(out.data().iter().all(|v| (v - want).abs() < 1e-12));
        }
    }

    #[test]
    fn matches_hand_composition() {
        let x = random(&[1, 1, 4, 4], 1);
        let s = dwt2(&x, &Wavelet::Haar.filter_bank()).unwrap();
        let a = softmax(&add(&s.lh, &s.hl).unwrap(), &[2, 3]).unwrap();
        let want = add(&s.ll, &mul(&s.ll, &a).unwrap()).unwrap();
        let got = wa_forward(&x, &WaConfig::plain(Wavelet::Haar), None).unwrap();
        assert!(got.max_abs_diff(&want).unwrap() < 1e-15);
    }

    #[test]
    fn attention_slices_sum_to_one() {
        let mut g = Graph::new();
        let x = g.input(random(&[2, 3, 8, 8], 2));
        let nodes = wa_graph(&mut g, x, &WaConfig::plain(Wavelet::Db2), None).unwrap();
        for slice in g.value(nodes.attention).data().chunks(16) {
            assert!((slice.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn variant_shapes_and_parameter_counts() {
        let mut rng = Rng::new(3);
        let x = random(&[1, 3, 32, 32], 4);
        let plain = WaBlock::<f64>::new(WaConfig::plain(Wavelet::Haar), 3, &mut rng).unwrap();
        assert_eq!(plain.param_count(), 0);
        assert_eq!(plain.forward(&x).unwrap().shape(), &[1, 3, 16, 16]);
        let cfg = WaConfig { wavelet: Wavelet::Haar, variant: WaVariant::Stride, out_channels: 16 };
        let stride = WaBlock::<f64>::new(cfg, 3, &mut rng).unwrap();
        assert_eq!(stride.param_count(), 16 * 3 * 9);
        assert_eq!(stride.forward(&x).unwrap().shape(), &[1, 16, 16, 16]);
        let cfg = WaConfig { variant: WaVariant::OneByOne, ..cfg };
        let one = WaBlock::<f64>::new(cfg, 3, &mut rng).unwrap();
        assert_eq!(one.param_count(), 16 * 3);
        assert_eq!(one.forward(&x).unwrap().shape(), &[1, 16, 16, 16]);
    }

    #[test]
    fn odd_input_and_head_mismatches() {
        let cfg = WaConfig::plain(Wavelet::Haar);
        assert!(matches!(wa_forward(&random(&[1, 1, 5, 4], 5), &cfg, None), Err(Error::Shape(_))));
        let w = random(&[4, 2, 3, 3], 6);
        assert!(wa_forward(&random(&[1, 2, 4, 4], 5), &cfg, Some(&w)).is_err());
        let cfg = WaConfig { variant: WaVariant::OneByOne, out_channels: 4, ..cfg };
        assert!(matches!(wa_forward(&random(&[1, 2, 4, 4], 5), &cfg, Some(&w)), Err(Error::Dimension(_))));
        assert!("wide".parse::<WaVariant>().is_err());
        assert_eq!("one_by_one".parse::<WaVariant>().unwrap(), WaVariant::OneByOne);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for variant in WaVariant::ALL {
            for seed in 0..3 {
                let cfg = WaConfig { wavelet: Wavelet::Haar, variant, out_channels: 3 };
                let mut inputs = vec![random(&[1, 2, 8, 8], 10 + seed)];
                if let Some(shape) = cfg.head_shape(2) {
                    inputs.push(random(&shape, 20 + seed));
                }
                let probe = random(&[1, if variant == WaVariant::Plain { 2 } else { 3 }, 4, 4], 30 + seed);
                let r = gradcheck_many(
                    |g, ids| {
                        let n = wa_graph(g, ids[0], &cfg, ids.get(1).copied())?;
                        let p = g.input(probe.clone());
                        let y = g.mul(n.out, p)?;
                        g.sum(y)
                    },
                    &inputs,
                    1e-5,
                )
                .unwrap();
                assert!(r.max_rel_error < 1e-5, "{variant}: {r:?}");
            }
        }
    }
}
