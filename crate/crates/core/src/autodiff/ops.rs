//! Differentiable wrappers around the tensor kernels.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{self, broadcast_to, reduce_to_shape, Tensor};

use super::{BackwardCtx, Function, Graph, NodeId};

struct AddFn {
    shapes: [Vec<usize>; 2],
}

impl<T: Scalar> Function<T> for AddFn {
    fn name(&self) -> &'static str {
        "add"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        self.shapes
            .iter()
            .zip(&ctx.needs)
            .map(|(s, &need)| need.then(|| reduce_to_shape(ctx.grad, s)).transpose())
            .collect()
    }
}

struct SubFn {
    shapes: [Vec<usize>; 2],
}

impl<T: Scalar> Function<T> for SubFn {
    fn name(&self) -> &'static str {
        "sub"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let ga = ctx.needs[0].then(|| reduce_to_shape(ctx.grad, &self.shapes[0])).transpose()?;
        let gb = ctx.needs[1]
            .then(|| reduce_to_shape(&tensor::scale(ctx.grad, -T::one()), &self.shapes[1]))
            .transpose()?;
        Ok(vec![ga, gb])
    }
}

struct MulFn;

impl<T: Scalar> Function<T> for MulFn {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let (a, b) = (ctx.inputs[0], ctx.inputs[1]);
        let ga = ctx.needs[0]
            .then(|| reduce_to_shape(&tensor::mul(ctx.grad, b)?, a.shape()))
            .transpose()?;
        let gb = ctx.needs[1]
            .then(|| reduce_to_shape(&tensor::mul(ctx.grad, a)?, b.shape()))
            .transpose()?;
        Ok(vec![ga, gb])
    }
}

struct ScaleFn<T> {
    factor: T,
}

impl<T: Scalar> Function<T> for ScaleFn<T> {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(tensor::scale(ctx.grad, self.factor))])
    }
}

struct ReluFn;

impl<T: Scalar> Function<T> for ReluFn {
    fn name(&self) -> &'static str {
        "relu"
    }

    // Subgradient at exactly 0 is 0.
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let data = ctx
            .inputs[0]
            .data()
            .iter()
            .zip(ctx.grad.data())
            .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
            .collect();
        Ok(vec![Some(Tensor::from_parts(ctx.grad.shape().to_vec(), data))])
    }
}

struct ExpFn;

impl<T: Scalar> Function<T> for ExpFn {
    fn name(&self) -> &'static str {
        "exp"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(tensor::mul(ctx.grad, ctx.output)?)])
    }
}

struct MatmulFn;

impl<T: Scalar> Function<T> for MatmulFn {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let (a, b) = (ctx.inputs[0], ctx.inputs[1]);
        let ga = ctx.needs[0].then(|| tensor::matmul(ctx.grad, &b.transpose()?)).transpose()?;
        let gb = ctx.needs[1].then(|| tensor::matmul(&a.transpose()?, ctx.grad)).transpose()?;
        Ok(vec![ga, gb])
    }
}

struct BmmFn;

impl<T: Scalar> Function<T> for BmmFn {
    fn name(&self) -> &'static str {
        "bmm"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let (a, b) = (ctx.inputs[0], ctx.inputs[1]);
        let ga = ctx.needs[0].then(|| tensor::bmm(ctx.grad, &b.transpose_last2()?)).transpose()?;
        let gb = ctx.needs[1].then(|| tensor::bmm(&a.transpose_last2()?, ctx.grad)).transpose()?;
        Ok(vec![ga, gb])
    }
}

struct TransposeLast2Fn;

impl<T: Scalar> Function<T> for TransposeLast2Fn {
    fn name(&self) -> &'static str {
        "transpose_last2"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(ctx.grad.transpose_last2()?)])
    }
}

struct ReshapeFn;

impl<T: Scalar> Function<T> for ReshapeFn {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(ctx.grad.reshape(ctx.inputs[0].shape())?)])
    }
}

struct NarrowFn {
    axis: usize,
    start: usize,
}

impl<T: Scalar> Function<T> for NarrowFn {
    fn name(&self) -> &'static str {
        "narrow"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let shape = ctx.inputs[0].shape();
        let inner: usize = shape[self.axis + 1..].iter().product();
        let (extent, len) = (shape[self.axis], ctx.grad.shape()[self.axis]);
        let mut out = Tensor::zeros(shape)?;
        for (dst, src) in out.data_mut().chunks_mut(extent * inner).zip(ctx.grad.data().chunks(len * inner)) {
            dst[self.start * inner..(self.start + len) * inner].copy_from_slice(src);
        }
        Ok(vec![Some(out)])
    }
}

struct Conv2dFn {
    stride: usize,
    pad: usize,
}

impl<T: Scalar> Function<T> for Conv2dFn {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        let need_bias = ctx.needs.get(2).copied().unwrap_or(false);
        let g = tensor::conv2d_backward(
            ctx.inputs[0],
            ctx.inputs[1],
            self.stride,
            self.pad,
            ctx.grad,
            ctx.needs[0],
            ctx.needs[1],
            need_bias,
        )?;
        let mut out = vec![g.input, g.weight];
        if ctx.inputs.len() == 3 {
            out.push(g.bias);
        }
        Ok(out)
    }
}

struct SoftmaxFn {
    axes: Vec<usize>,
}

impl<T: Scalar> Function<T> for SoftmaxFn {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(tensor::softmax_backward(ctx.output, ctx.grad, &self.axes)?)])
    }
}

struct SumToFn;

impl<T: Scalar> Function<T> for SumToFn {
    fn name(&self) -> &'static str {
        "sum_to"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(broadcast_to(ctx.grad, ctx.inputs[0].shape())?)])
    }
}

impl<T: Scalar> Graph<T> {
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::add(self.value(a), self.value(b))?;
        let shapes = [self.shape(a).to_vec(), self.shape(b).to_vec()];
        Ok(self.apply(v, &[a, b], AddFn { shapes }))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::sub(self.value(a), self.value(b))?;
        let shapes = [self.shape(a).to_vec(), self.shape(b).to_vec()];
        Ok(self.apply(v, &[a, b], SubFn { shapes }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::mul(self.value(a), self.value(b))?;
        Ok(self.apply(v, &[a, b], MulFn))
    }

    pub fn scale(&mut self, a: NodeId, factor: T) -> NodeId {
        let v = tensor::scale(self.value(a), factor);
        self.apply(v, &[a], ScaleFn { factor })
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = tensor::relu(self.value(a));
        self.mark_kink(a);
        self.apply(v, &[a], ReluFn)
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(|x| x.exp());
        v.ensure_finite("exp")?;
        Ok(self.apply(v, &[a], ExpFn))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.apply(v, &[a, b], MatmulFn))
    }

    pub fn bmm(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::bmm(self.value(a), self.value(b))?;
        Ok(self.apply(v, &[a, b], BmmFn))
    }

    pub fn transpose_last2(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).transpose_last2()?;
        Ok(self.apply(v, &[a], TransposeLast2Fn))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(a).reshape(shape)?;
        Ok(self.apply(v, &[a], ReshapeFn))
    }

    pub fn narrow(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(x).narrow(axis, start, len)?;
        Ok(self.apply(v, &[x], NarrowFn { axis, start }))
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, bias: Option<NodeId>, stride: usize, pad: usize) -> Result<NodeId> {
        let v = tensor::conv2d(self.value(x), self.value(w), bias.map(|b| self.value(b)), stride, pad)?;
        let inputs: Vec<NodeId> = [Some(x), Some(w), bias].into_iter().flatten().collect();
        Ok(self.apply(v, &inputs, Conv2dFn { stride, pad }))
    }

    pub fn softmax(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId> {
        let v = tensor::softmax(self.value(x), axes)?;
        Ok(self.apply(v, &[x], SoftmaxFn { axes: axes.to_vec() }))
    }

    /// Sums `x` down to `shape`, which must broadcast back to `x`'s shape.
    pub fn sum_to(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = reduce_to_shape(self.value(x), shape)?;
        Ok(self.apply(v, &[x], SumToFn))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.sum_to(x, &[])
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::dim("mean of empty tensor"));
        }
        let s = self.sum(x)?;
        Ok(self.scale(s, T::one() / T::of(n as f64)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type G = Graph<f64>;

    #[test]
    fn square_derivative() {
        let mut g = G::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn relu_subgradient() {
        let mut g = G::new();
        let x = g.param(Tensor::new(&[2], vec![-1.0, 2.0]).unwrap());
        let r = g.relu(x);
        let s = g.sum(r).unwrap();
        assert_eq!(g.backward(s).unwrap().get(x).unwrap().data(), &[0.0, 1.0]);

        let mut g = G::new();
        let x = g.param(Tensor::scalar(0.0));
        let r = g.relu(x);
        assert_eq!(g.backward(r).unwrap().get(x).unwrap().data(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_is_contract_error() {
        let mut g = G::new();
        let x = g.param(Tensor::zeros(&[2]).unwrap());
        let y = g.scale(x, 2.0);
        assert!(matches!(g.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn fan_out_accumulates() {
        // f = sum(x·w) + sum(x) with x used twice.
        let mut g = G::new();
        let x = g.param(Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let w = g.input(Tensor::new(&[3], vec![4.0, 5.0, 6.0]).unwrap());
        let xw = g.mul(x, w).unwrap();
        let a = g.sum(xw).unwrap();
        let b = g.sum(x).unwrap();
        let f = g.add(a, b).unwrap();
        let grads = g.backward(f).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[5.0, 6.0, 7.0]);
        assert!(grads.get(w).is_none());
    }

    #[test]
    fn constant_subgraphs_record_no_backward() {
        let mut g = G::new();
        let a = g.input(Tensor::scalar(1.0));
        let b = g.exp(a).unwrap();
        assert!(!g.requires_grad(b));
        assert_eq!(g.op_name(b), "leaf");
    }
}
