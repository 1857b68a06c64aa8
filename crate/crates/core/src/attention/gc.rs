use super::{check_pointwise, eval};
use crate::autodiff::{Graph, NodeId};
use crate::data::Rng;
use crate::error::{Error, Result};
use crate::nn::he_normal;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Graph form: `z = x + wv · Σ_j softmax_j(wk · x)_j x_j`.
///
/// `wk` is `[1, C, 1, 1]`, `wv` is `[C, C, 1, 1]`.
pub fn gc_graph<T: Scalar>(g: &mut Graph<T>, x: NodeId, wk: NodeId, wv: NodeId) -> Result<NodeId> {
    let (n, c, h, w) = g.value(x).dims4()?;
    check_pointwise(g.shape(wk), c, 1, "GC key weight")?;
    check_pointwise(g.shape(wv), c, c, "GC value weight")?;
    let np = h * w;
    let logits = g.conv2d(x, wk, None, 1, 0)?;
    let logits = g.reshape(logits, &[n, 1, np])?;
    let alpha = g.softmax(logits, &[2])?;
    let alpha = g.transpose_last2(alpha)?;
    let flat = g.reshape(x, &[n, c, np])?;
    let context = g.bmm(flat, alpha)?;
    let context = g.reshape(context, &[n, c, 1, 1])?;
    let t = g.conv2d(context, wv, None, 1, 0)?;
    g.add(x, t)
}

pub fn gc_forward<T: Scalar>(x: &Tensor<T>, wk: &Tensor<T>, wv: &Tensor<T>) -> Result<Tensor<T>> {
    eval(x, &[wk, wv], |g, x, w| gc_graph(g, x, w[0], w[1]))
}

#[derive(Clone, Debug)]
pub struct GcBlock<T: Scalar> {
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
}

impl<T: Scalar> GcBlock<T> {
    pub fn new(channels: usize, rng: &mut Rng) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Config("GC block needs at least one channel".into()));
        }
        Ok(GcBlock { wk: he_normal(rng, &[1, channels, 1, 1]), wv: he_normal(rng, &[channels, channels, 1, 1]) })
    }

    pub fn param_count(&self) -> usize {
        self.wk.len() + self.wv.len()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        gc_forward(x, &self.wk, &self.wv)
    }
}
