//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] is an append-only tape: every operation evaluates eagerly,
//! stores its output, and records a [`Function`] that knows how to map the
//! output gradient back onto its inputs. Because nodes are only ever appended,
//! node order is a topological order and [`Graph::backward`] is a single
//! reverse sweep that visits each node at most once.
//!
//! Modules outside this one (wavelet, nn) add their own differentiable
//! operations by implementing [`Function`] and calling [`Graph::apply`].

mod gradcheck;
mod ops;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use gradcheck::{gradcheck, gradcheck_many, nudge_from_kinks, GradcheckReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a backward rule sees for one node.
pub struct BackwardCtx<'a, T: Scalar> {
    pub inputs: Vec<&'a Tensor<T>>,
    pub output: &'a Tensor<T>,
    pub grad: &'a Tensor<T>,
    /// `needs[i]` is false when input `i` has no path to a trainable leaf; its gradient may be skipped.
    pub needs: Vec<bool>,
}

/// Backward rule of one recorded operation.
pub trait Function<T: Scalar> {
    fn name(&self) -> &'static str;

    /// One entry per input. `None` means "no gradient" (the input does not need one).
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>>;
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    inputs: Vec<NodeId>,
    func: Option<Box<dyn Function<T>>>,
    requires_grad: bool,
    trainable: bool,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    /// Inputs of non-differentiable points (relu), for [`Graph::kink_margin`].
    kinks: Vec<NodeId>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), kinks: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant leaf (data, labels). Never receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Vec::new(), None, false, false)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Vec::new(), None, true, true)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn is_trainable(&self, id: NodeId) -> bool {
        self.nodes[id.0].trainable
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].func.as_ref().map_or("leaf", |f| f.name())
    }

    /// Smallest `|v|` over every value fed to a relu so far; `None` if there is none.
    ///
    /// Finite differences with step `h` are only valid when this exceeds the
    /// perturbation that `h` induces at the relu.
    pub fn kink_margin(&self) -> Option<T> {
        self.kinks.iter().flat_map(|k| self.nodes[k.0].value.data()).map(|v| v.abs()).reduce(T::min)
    }

    pub(crate) fn mark_kink(&mut self, input: NodeId) {
        self.kinks.push(input);
    }

    /// Records an operation whose forward value was already computed.
    pub fn apply(&mut self, value: Tensor<T>, inputs: &[NodeId], func: impl Function<T> + 'static) -> NodeId {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        let func: Option<Box<dyn Function<T>>> = if requires_grad { Some(Box::new(func)) } else { None };
        self.push(value, inputs.to_vec(), func, requires_grad, false)
    }

    fn push(
        &mut self,
        value: Tensor<T>,
        inputs: Vec<NodeId>,
        func: Option<Box<dyn Function<T>>>,
        requires_grad: bool,
        trainable: bool,
    ) -> NodeId {
        self.nodes.push(Node { value, inputs, func, requires_grad, trainable });
        NodeId(self.nodes.len() - 1)
    }

    /// Gradients of the scalar `loss` with respect to every trainable leaf.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, node {} has shape {:?}",
                loss.0,
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_parts(root.value.shape().to_vec(), vec![T::one()]));
        let mut out = Gradients { grads: vec![None; self.nodes.len()] };

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(grad) = grads[idx].take() else { continue };
            let Some(func) = node.func.as_ref() else {
                if node.trainable {
                    out.grads[idx] = Some(grad);
                }
                continue;
            };
            let needs: Vec<bool> = node.inputs.iter().map(|i| self.nodes[i.0].requires_grad).collect();
            let ctx = BackwardCtx {
                inputs: node.inputs.iter().map(|i| &self.nodes[i.0].value).collect(),
                output: &node.value,
                grad: &grad,
                needs,
            };
            let input_grads = func.backward(&ctx)?;
            if input_grads.len() != node.inputs.len() {
                return Err(Error::Contract(format!(
                    "{} returned {} gradients for {} inputs",
                    func.name(),
                    input_grads.len(),
                    node.inputs.len()
                )));
            }
            for (&inp, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[inp.0].requires_grad {
                    continue;
                }
                if g.shape() != self.nodes[inp.0].value.shape() {
                    return Err(Error::Contract(format!(
                        "{} produced gradient {:?} for input of shape {:?}",
                        func.name(),
                        g.shape(),
                        self.nodes[inp.0].value.shape()
                    )));
                }
                match &mut grads[inp.0] {
                    Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(out)
    }
}

/// Gradients of a loss with respect to the trainable leaves of a graph.
#[derive(Clone, Debug)]
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }

    /// Gradient of `id`, or zeros of `shape` when the loss does not depend on it.
    pub fn get_or_zeros(&self, id: NodeId, shape: &[usize]) -> Tensor<T> {
        self.get(id).cloned().unwrap_or_else(|| Tensor::from_parts(shape.to_vec(), vec![T::zero(); crate::tensor::numel(shape)]))
    }
}
