use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{strides, Tensor};

/// A validated set of axes over which softmax normalizes.
///
/// Each slice spanned by these axes (all other indices held fixed) sums to 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SoftmaxAxes {
    /// Flat offsets of every element of one slice, relative to the slice base.
    inner: Vec<usize>,
    /// Flat offsets of every slice base.
    outer: Vec<usize>,
}

fn offsets(shape: &[usize], st: &[usize], axes: &[usize]) -> Vec<usize> {
    let mut out = vec![0usize];
    for &ax in axes {
        let mut next = Vec::with_capacity(out.len() * shape[ax]);
        for &base in &out {
            for i in 0..shape[ax] {
                next.push(base + i * st[ax]);
            }
        }
        out = next;
    }
    out
}

impl SoftmaxAxes {
    pub fn new(shape: &[usize], axes: &[usize]) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::dim("softmax axis group is empty"));
        }
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != axes.len() || sorted.iter().any(|&a| a >= shape.len()) {
            return Err(Error::dim(format!("invalid softmax axes {axes:?} for shape {shape:?}")));
        }
        let st = strides(shape);
        let free: Vec<usize> = (0..shape.len()).filter(|a| !sorted.contains(a)).collect();
        Ok(SoftmaxAxes { inner: offsets(shape, &st, &sorted), outer: offsets(shape, &st, &free) })
    }
}

/// Numerically stabilized softmax over the axis group `axes`.
pub fn softmax<T: Scalar>(x: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    let group = SoftmaxAxes::new(x.shape(), axes)?;
    if x.data().iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("softmax input contains NaN".into()));
    }
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for &base in &group.outer {
        let mut mx = T::neg_infinity();
        for &o in &group.inner {
            mx = mx.max(src[base + o]);
        }
        let mut total = T::zero();
        for &o in &group.inner {
            let e = (src[base + o] - mx).exp();
            out[base + o] = e;
            total += e;
        }
        let inv = T::one() / total;
        for &o in &group.inner {
            out[base + o] *= inv;
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Vector-Jacobian product of softmax: `y ⊙ (g − Σ_slice g⊙y)`.
pub fn softmax_backward<T: Scalar>(y: &Tensor<T>, g: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    if y.shape() != g.shape() {
        return Err(Error::dim(format!("softmax grad {:?} vs output {:?}", g.shape(), y.shape())));
    }
    let group = SoftmaxAxes::new(y.shape(), axes)?;
    let (yd, gd) = (y.data(), g.data());
    let mut out = vec![T::zero(); yd.len()];
    for &base in &group.outer {
        let mut dot = T::zero();
        for &o in &group.inner {
            dot += gd[base + o] * yd[base + o];
        }
        for &o in &group.inner {
            out[base + o] = yd[base + o] * (gd[base + o] - dot);
        }
    }
    Ok(Tensor::from_parts(y.shape().to_vec(), out))
}
