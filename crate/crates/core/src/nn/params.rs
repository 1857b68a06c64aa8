use std::collections::HashMap;

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Conv or linear weight.
    Weight,
    Bias,
    /// Batch-norm scale or shift.
    Norm,
    /// Non-trainable state such as running statistics.
    Buffer,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        self != ParamKind::Buffer
    }
}

#[derive(Clone, Debug)]
pub struct Param<T: Scalar> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<T>,
}

/// Named network state in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Scalar> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

/// Graph nodes of the trainable parameters for one forward pass.
#[derive(Clone, Debug)]
pub struct Bound {
    nodes: Vec<Option<NodeId>>,
}

impl Bound {
    /// Binding from explicit nodes, one per parameter (`None` for buffers).
    pub fn from_nodes(nodes: Vec<Option<NodeId>>) -> Self {
        Bound { nodes }
    }

    pub fn node(&self, id: ParamId) -> NodeId {
        self.nodes[id.0].expect("buffers are not bound to the graph")
    }

    /// `(param, node)` for every trainable parameter.
    pub fn trainable(&self) -> impl Iterator<Item = (ParamId, NodeId)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| n.map(|n| (ParamId(i), n)))
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), index: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Contract(format!("parameter {name:?} registered twice")));
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param { name, kind, value });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.kind.trainable()).map(|p| p.value.len()).sum()
    }

    /// Registers every trainable parameter as a graph leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        let nodes = self.params.iter().map(|p| p.kind.trainable().then(|| g.param(p.value.clone()))).collect();
        Bound { nodes }
    }

    /// Registers every trainable parameter as a constant (no gradients).
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> Bound {
        let nodes = self.params.iter().map(|p| p.kind.trainable().then(|| g.input(p.value.clone()))).collect();
        Bound { nodes }
    }
}
