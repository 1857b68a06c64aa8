use std::fmt;
use std::str::FromStr;

use super::{check_pointwise, eval};
use crate::autodiff::{Graph, NodeId};
use crate::data::Rng;
use crate::error::{Error, Result};
use crate::nn::he_normal;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Pairwise function `f(x_i, x_j)` with its normalizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairwiseForm {
    /// `exp(x_iᵀ x_j)` on the raw input, normalized by the row sum.
    Gaussian,
    /// `exp(θ_iᵀ φ_j)`, normalized by the row sum.
    EmbeddedGaussian,
    /// `θ_iᵀ φ_j / N_p`.
    DotProduct,
    /// `relu(w_fᵀ [θ_i, φ_j]) / N_p`.
    Concat,
}

impl PairwiseForm {
    pub const ALL: [PairwiseForm; 4] =
        [PairwiseForm::Gaussian, PairwiseForm::EmbeddedGaussian, PairwiseForm::DotProduct, PairwiseForm::Concat];

    pub fn name(self) -> &'static str {
        match self {
            PairwiseForm::Gaussian => "gaussian",
            PairwiseForm::EmbeddedGaussian => "embedded_gaussian",
            PairwiseForm::DotProduct => "dot_product",
            PairwiseForm::Concat => "concat",
        }
    }
}

impl FromStr for PairwiseForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PairwiseForm::ALL.into_iter().find(|f| f.name() == s).ok_or_else(|| {
            Error::Config(format!("unknown pairwise form {s:?}; valid: gaussian, embedded_gaussian, dot_product, concat"))
        })
    }
}

impl fmt::Display for PairwiseForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NlConfig {
    pub form: PairwiseForm,
    pub bottleneck: usize,
}

impl NlConfig {
    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.bottleneck == 0 || self.bottleneck > channels {
            return Err(Error::Config(format!(
                "bottleneck channels must be in [1, {channels}], got {}",
                self.bottleneck
            )));
        }
        Ok(())
    }
}

/// Projection weights as graph nodes. `wq`/`wk` (θ/φ) are unused by the Gaussian form.
#[derive(Clone, Copy, Debug)]
pub struct NlNodes {
    pub wq: NodeId,
    pub wk: NodeId,
    pub wv: NodeId,
    pub wz: NodeId,
    /// `[1, 2·bottleneck, 1, 1]`: θ half then φ half. Concat form only.
    pub wf: Option<NodeId>,
}

/// Graph form of `z_i = x_i + W_z Σ_j f(x_i, x_j)/C(x) · W_v x_j`.
pub fn nl_graph<T: Scalar>(g: &mut Graph<T>, x: NodeId, cfg: &NlConfig, p: &NlNodes) -> Result<NodeId> {
    let (n, c, h, w) = g.value(x).dims4()?;
    cfg.validate(c)?;
    let (cb, np) = (cfg.bottleneck, h * w);
    check_pointwise(g.shape(p.wv), c, cb, "NL value weight")?;
    check_pointwise(g.shape(p.wz), cb, c, "NL output weight")?;
    if cfg.form != PairwiseForm::Gaussian {
        check_pointwise(g.shape(p.wq), c, cb, "NL query weight")?;
        check_pointwise(g.shape(p.wk), c, cb, "NL key weight")?;
    }
    let inv_np = T::one() / T::of(np as f64);

    // Returns N×cb×Np.
    let project = |g: &mut Graph<T>, wt: NodeId| -> Result<NodeId> {
        let y = g.conv2d(x, wt, None, 1, 0)?;
        g.reshape(y, &[n, cb, np])
    };

    // Pairwise weights, N×Np×Np with rows indexed by the query position.
    let weights = match cfg.form {
        PairwiseForm::Gaussian => {
            let flat = g.reshape(x, &[n, c, np])?;
            let flat_t = g.transpose_last2(flat)?;
            let s = g.bmm(flat_t, flat)?;
            g.softmax(s, &[2])?
        }
        PairwiseForm::EmbeddedGaussian | PairwiseForm::DotProduct => {
            let theta = project(g, p.wq)?;
            let phi = project(g, p.wk)?;
            let theta_t = g.transpose_last2(theta)?;
            let s = g.bmm(theta_t, phi)?;
            if cfg.form == PairwiseForm::EmbeddedGaussian {
                g.softmax(s, &[2])?
            } else {
                g.scale(s, inv_np)
            }
        }
        PairwiseForm::Concat => {
            let wf = p.wf.ok_or_else(|| Error::Config("concat pairwise form needs the w_f weight".into()))?;
            if g.shape(wf) != [1, 2 * cb, 1, 1] {
                return Err(Error::Dimension(format!("w_f must be [1, {}, 1, 1], got {:?}", 2 * cb, g.shape(wf))));
            }
            let w_theta = g.narrow(wf, 1, 0, cb)?;
            let w_phi = g.narrow(wf, 1, cb, cb)?;
            let theta = g.conv2d(x, p.wq, None, 1, 0)?;
            let phi = g.conv2d(x, p.wk, None, 1, 0)?;
            let a = g.conv2d(theta, w_theta, None, 1, 0)?;
            let a = g.reshape(a, &[n, np, 1])?;
            let b = g.conv2d(phi, w_phi, None, 1, 0)?;
            let b = g.reshape(b, &[n, 1, np])?;
            let s = g.add(a, b)?;
            let s = g.relu(s);
            g.scale(s, inv_np)
        }
    };

    let v = project(g, p.wv)?;
    let v_t = g.transpose_last2(v)?;
    let y = g.bmm(weights, v_t)?;
    let y = g.transpose_last2(y)?;
    let y = g.reshape(y, &[n, cb, h, w])?;
    let y = g.conv2d(y, p.wz, None, 1, 0)?;
    g.add(x, y)
}

/// Tensor-valued projection weights.
#[derive(Clone, Debug)]
pub struct NlParams<T: Scalar> {
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wz: Tensor<T>,
    pub wf: Option<Tensor<T>>,
}

pub fn nl_forward<T: Scalar>(x: &Tensor<T>, cfg: &NlConfig, p: &NlParams<T>) -> Result<Tensor<T>> {
    let mut weights = vec![&p.wq, &p.wk, &p.wv, &p.wz];
    weights.extend(p.wf.as_ref());
    eval(x, &weights, |g, x, w| {
        let nodes = NlNodes { wq: w[0], wk: w[1], wv: w[2], wz: w[3], wf: w.get(4).copied() };
        nl_graph(g, x, cfg, &nodes)
    })
}

#[derive(Clone, Debug)]
pub struct NlBlock<T: Scalar> {
    pub cfg: NlConfig,
    pub params: NlParams<T>,
}

impl<T: Scalar> NlBlock<T> {
    pub fn new(cfg: NlConfig, channels: usize, rng: &mut Rng) -> Result<Self> {
        cfg.validate(channels)?;
        let cb = cfg.bottleneck;
        let params = NlParams {
            wq: he_normal(rng, &[cb, channels, 1, 1]),
            wk: he_normal(rng, &[cb, channels, 1, 1]),
            wv: he_normal(rng, &[cb, channels, 1, 1]),
            wz: he_normal(rng, &[channels, cb, 1, 1]),
            wf: (cfg.form == PairwiseForm::Concat).then(|| he_normal(rng, &[1, 2 * cb, 1, 1])),
        };
        Ok(NlBlock { cfg, params })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        nl_forward(x, &self.cfg, &self.params)
    }
}
