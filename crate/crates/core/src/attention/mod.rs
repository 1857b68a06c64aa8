//! Wavelet-Attention and the global-context / non-local blocks it is compared against.
//!
//! Each block has a graph form (`*_graph`, weights are graph nodes, used by the
//! network and for gradients) and a plain tensor form (`*_forward`).

mod gc;
mod nl;
mod wa;

pub use gc::{gc_forward, gc_graph, GcBlock};
pub use nl::{nl_forward, nl_graph, NlBlock, NlConfig, NlNodes, NlParams, PairwiseForm};
pub use wa::{wa_forward, wa_graph, WaBlock, WaConfig, WaNodes, WaVariant};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Checks a 1×1 projection weight maps `cin` channels to `cout`.
pub(crate) fn check_pointwise(w: &[usize], cin: usize, cout: usize, what: &str) -> Result<()> {
    if w != [cout, cin, 1, 1] {
        return Err(Error::Dimension(format!("{what} must have shape [{cout}, {cin}, 1, 1], got {w:?}")));
    }
    Ok(())
}

/// Runs a graph-form block on constant inputs and returns the output value.
pub(crate) fn eval<T: Scalar>(
    x: &Tensor<T>,
    weights: &[&Tensor<T>],
    f: impl FnOnce(&mut Graph<T>, NodeId, &[NodeId]) -> Result<NodeId>,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let xi = g.input(x.clone());
    let ws: Vec<NodeId> = weights.iter().map(|w| g.input((*w).clone())).collect();
    let out = f(&mut g, xi, &ws)?;
    Ok(g.value(out).clone())
}
