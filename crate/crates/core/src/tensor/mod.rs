//! Dense row-major tensors (rank ≤ 4) and the numeric kernels built on them.
//!
//! All kernels are pure functions of their inputs. Reductions accumulate in a
//! fixed left-to-right order so repeated runs are bit-identical.

mod conv;
pub mod gemm;
mod softmax;

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use conv::{conv2d, conv2d_backward, conv_output_extent, Conv2dGrads};
pub use softmax::{softmax, softmax_backward, SoftmaxAxes};

pub const MAX_RANK: usize = 4;

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} [", self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", …")?;
        }
        write!(f, "]")
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.len() > MAX_RANK {
        return Err(Error::shape(format!("rank {} exceeds {MAX_RANK}: {shape:?}", shape.len())));
    }
    if shape.iter().any(|&e| e == 0) {
        return Err(Error::shape(format!("extents must be positive: {shape:?}")));
    }
    Ok(shape.iter().product())
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n = check_shape(shape)?;
        if data.len() != n {
            return Err(Error::dim(format!(
                "data length {} does not match shape {shape:?} ({n} elements)",
                data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    /// Panics on an invalid shape. For internal construction where the shape is known good.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor { shape, data }
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Tensor { shape: shape.to_vec(), data: vec![value; n] })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: Vec::new(), data: vec![value] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Tensor { shape: shape.to_vec(), data: (0..n).map(&mut f).collect() })
    }

    /// Builds a rank-2 tensor from nested rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::dim("ragged rows"));
        }
        let data = rows.iter().flat_map(|row| row.iter().map(|&v| T::of(v))).collect();
        Self::new(&[r, c], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::dim(format!("item() on tensor of shape {:?}", self.shape)));
        }
        Ok(self.data[0])
    }

    /// Shape as `(n, c, h, w)`; errors unless rank is exactly 4.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::dim(format!("expected N×C×H×W tensor, got {:?}", self.shape))),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        self.clone().into_reshape(shape)
    }

    pub fn into_reshape(self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(Error::dim(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        Ok(Tensor { shape: shape.to_vec(), data: self.data })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::of(v.f64())).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(format!("{what}: non-finite value in tensor {:?}", self.shape)))
        }
    }

    /// Left-to-right sum of all elements.
    pub fn sum(&self) -> T {
        let mut s = T::zero();
        for &v in &self.data {
            s += v;
        }
        s
    }

    pub fn sum_squares(&self) -> T {
        let mut s = T::zero();
        for &v in &self.data {
            s += v * v;
        }
        s
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        if self.shape != other.shape {
            return Err(Error::dim(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Self> {
        let [r, c] = self.shape[..] else {
            return Err(Error::dim(format!("transpose needs a matrix, got {:?}", self.shape)));
        };
        let mut out = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                out.push(self.data[i * c + j]);
            }
        }
        Ok(Tensor { shape: vec![c, r], data: out })
    }

    /// Swaps the last two axes of a rank-3 tensor.
    /// Elements `start..start + len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        if axis >= self.rank() || len == 0 || start + len > self.shape[axis] {
            return Err(Error::dim(format!(
                "cannot take {start}..{} along axis {axis} of shape {:?}",
                start + len,
                self.shape
            )));
        }
        let inner: usize = self.shape[axis + 1..].iter().product();
        let extent = self.shape[axis];
        let mut data = Vec::with_capacity(self.len() / extent * len);
        for block in self.data.chunks(extent * inner) {
            data.extend_from_slice(&block[start * inner..(start + len) * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Ok(Tensor::from_parts(shape, data))
    }

    pub fn transpose_last2(&self) -> Result<Self> {
        let [b, r, c] = self.shape[..] else {
            return Err(Error::dim(format!("transpose_last2 needs rank 3, got {:?}", self.shape)));
        };
        let mut out = Vec::with_capacity(self.data.len());
        for s in 0..b {
            let m = &self.data[s * r * c..(s + 1) * r * c];
            for j in 0..c {
                for i in 0..r {
                    out.push(m[i * c + j]);
                }
            }
        }
        Ok(Tensor { shape: vec![b, c, r], data: out })
    }
}

/// Matrix product of two rank-2 tensors.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let ([m, k1], [k2, n]) = (&a.shape[..], &b.shape[..]) else {
        return Err(Error::dim(format!(
            "matmul needs two matrices, got {:?} and {:?}",
            a.shape, b.shape
        )));
    };
    if k1 != k2 {
        return Err(Error::dim(format!("matmul inner extents differ: {:?} × {:?}", a.shape, b.shape)));
    }
    let mut out = vec![T::zero(); m * n];
    gemm::gemm(*m, *k1, *n, &a.data, &b.data, &mut out, false);
    Ok(Tensor::from_parts(vec![*m, *n], out))
}

/// Batched matrix product: `[B,M,K] × [B,K,N] → [B,M,N]`.
pub fn bmm<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let ([ba, m, k1], [bb, k2, n]) = (&a.shape[..], &b.shape[..]) else {
        return Err(Error::dim(format!("bmm needs rank-3 operands, got {:?} and {:?}", a.shape, b.shape)));
    };
    if ba != bb || k1 != k2 {
        return Err(Error::dim(format!("bmm extents differ: {:?} × {:?}", a.shape, b.shape)));
    }
    let (m, k, n) = (*m, *k1, *n);
    let mut out = vec![T::zero(); ba * m * n];
    for s in 0..*ba {
        gemm::gemm(
            m,
            k,
            n,
            &a.data[s * m * k..(s + 1) * m * k],
            &b.data[s * k * n..(s + 1) * k * n],
            &mut out[s * m * n..(s + 1) * m * n],
            false,
        );
    }
    Ok(Tensor::from_parts(vec![*ba, m, n], out))
}

/// Result shape of broadcasting `a` against `b`.
///
/// The shorter shape is left-padded with 1-extents; afterwards each axis must
/// either match or be 1 on one side. No other rank promotion is performed.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let pad = |s: &[usize]| {
        let mut v = vec![1; rank - s.len()];
        v.extend_from_slice(s);
        v
    };
    let (pa, pb) = (pad(a), pad(b));
    pa.iter()
        .zip(&pb)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(Error::dim(format!("shapes {a:?} and {b:?} are not broadcastable"))),
        })
        .collect()
}

/// Strides of `shape` viewed inside `out` (rank-aligned on the right), with 0 on broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> [usize; MAX_RANK] {
    let own = strides(shape);
    let mut s = [0; MAX_RANK];
    let off = MAX_RANK - out.len();
    let lead = out.len() - shape.len();
    for (i, &e) in shape.iter().enumerate() {
        if e != 1 {
            s[off + lead + i] = own[i];
        }
    }
    s
}

fn pad4(shape: &[usize]) -> [usize; MAX_RANK] {
    let mut e = [1; MAX_RANK];
    e[MAX_RANK - shape.len()..].copy_from_slice(shape);
    e
}

fn zip_broadcast<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    if a.shape == b.shape {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor::from_parts(a.shape.clone(), data));
    }
    let out_shape = broadcast_shape(&a.shape, &b.shape)?;
    let e = pad4(&out_shape);
    let sa = broadcast_strides(&a.shape, &out_shape);
    let sb = broadcast_strides(&b.shape, &out_shape);
    let mut data = Vec::with_capacity(numel(&out_shape));
    for i0 in 0..e[0] {
        for i1 in 0..e[1] {
            for i2 in 0..e[2] {
                let ba = i0 * sa[0] + i1 * sa[1] + i2 * sa[2];
                let bb = i0 * sb[0] + i1 * sb[1] + i2 * sb[2];
                for i3 in 0..e[3] {
                    data.push(f(a.data[ba + i3 * sa[3]], b.data[bb + i3 * sb[3]]));
                }
            }
        }
    }
    Ok(Tensor::from_parts(out_shape, data))
}

/// Sums `g` over the axes along which `shape` was broadcast to produce `g`'s shape.
pub fn reduce_to_shape<T: Scalar>(g: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    if g.shape == shape {
        return Ok(g.clone());
    }
    let out_shape = g.shape.clone();
    if broadcast_shape(shape, &out_shape)? != out_shape {
        return Err(Error::dim(format!("{shape:?} does not broadcast to {out_shape:?}")));
    }
    let e = pad4(&out_shape);
    let st = broadcast_strides(shape, &out_shape);
    let mut acc = vec![T::zero(); numel(shape)];
    let mut idx = 0;
    for i0 in 0..e[0] {
        for i1 in 0..e[1] {
            for i2 in 0..e[2] {
                let base = i0 * st[0] + i1 * st[1] + i2 * st[2];
                for i3 in 0..e[3] {
                    acc[base + i3 * st[3]] += g.data[idx];
                    idx += 1;
                }
            }
        }
    }
    Ok(Tensor::from_parts(shape.to_vec(), acc))
}

/// Expands `x` along its extent-1 axes (and leading axes) to `shape`.
pub fn broadcast_to<T: Scalar>(x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    if broadcast_shape(x.shape(), shape)? != shape {
        return Err(Error::dim(format!("{:?} does not broadcast to {shape:?}", x.shape())));
    }
    let zeros = Tensor::from_parts(shape.to_vec(), vec![T::zero(); numel(shape)]);
    zip_broadcast(&zeros, x, |_, v| v)
}

/// Elementwise operations with extent-1 broadcasting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
}

pub fn elementwise<T: Scalar>(op: Elementwise, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    match op {
        Elementwise::Add => zip_broadcast(a, b, |x, y| x + y),
        Elementwise::Sub => zip_broadcast(a, b, |x, y| x - y),
        Elementwise::Mul => zip_broadcast(a, b, |x, y| x * y),
    }
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    elementwise(Elementwise::Add, a, b)
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    elementwise(Elementwise::Sub, a, b)
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    elementwise(Elementwise::Mul, a, b)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn scale<T: Scalar>(x: &Tensor<T>, s: T) -> Tensor<T> {
    x.map(|v| v * s)
}
