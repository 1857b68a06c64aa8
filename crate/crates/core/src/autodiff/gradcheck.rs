//! Central-difference gradient checking.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Graph, NodeId};

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    /// Largest per-coordinate relative error `|a − n| / max(|a|, |n|, 1e−8)`.
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` where the maximum occurred.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

impl GradcheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

const DENOM_FLOOR: f64 = 1e-8;

/// Gradient check of a scalar function of one tensor.
pub fn gradcheck<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<f64>, NodeId) -> Result<NodeId>,
{
    gradcheck_many(|g, ids| f(g, ids[0]), std::slice::from_ref(x), h)
}

/// Gradient check of a scalar function of several tensors.
///
/// `f` receives one trainable node per entry of `inputs` and returns the loss node.
/// Every coordinate of every input is perturbed by `±h`.
pub fn gradcheck_many<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    if !(h > 0.0) {
        return Err(Error::Contract(format!("gradcheck step must be positive, got {h}")));
    }
    let eval = |values: &[Tensor<f64>]| -> Result<(Graph<f64>, Vec<NodeId>, NodeId)> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = values.iter().map(|v| g.param(v.clone())).collect();
        let loss = f(&mut g, &ids)?;
        Ok((g, ids, loss))
    };

    let (g, ids, loss) = eval(inputs)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, x)| grads.get_or_zeros(id, x.shape()))
        .collect();

    let mut report = GradcheckReport { max_rel_error: 0.0, worst: None, analytic: 0.0, numeric: 0.0, coordinates: 0 };
    let mut work = inputs.to_vec();
    for (which, a) in analytic.iter().enumerate() {
        for coord in 0..a.len() {
            let orig = work[which].data()[coord];
            work[which].data_mut()[coord] = orig + h;
            let plus = {
                let (g, _, l) = eval(&work)?;
                g.value(l).item()?
            };
            work[which].data_mut()[coord] = orig - h;
            let minus = {
                let (g, _, l) = eval(&work)?;
                g.value(l).item()?
            };
            work[which].data_mut()[coord] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let an = a.data()[coord];
            let rel = (an - numeric).abs() / an.abs().max(numeric.abs()).max(DENOM_FLOOR);
            report.coordinates += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((which, coord));
                report.analytic = an;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Moves entries with `|x| < margin` to `±margin` so finite differences do not straddle a ReLU kink.
pub fn nudge_from_kinks(x: &Tensor<f64>, margin: f64) -> Tensor<f64> {
    x.map(|v| if v.abs() < margin { if v < 0.0 { -margin } else { margin } } else { v })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let w = Tensor::new(&[4], vec![0.3, -1.2, 2.5, 0.7]).unwrap();
        let x = Tensor::new(&[4], vec![1.0, 2.0, -3.0, 0.5]).unwrap();
        let r = gradcheck(
            |g, x| {
                let w = g.input(w.clone());
                let p = g.mul(x, w)?;
                g.sum(p)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert_eq!(r.coordinates, 4);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let x = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let r = gradcheck(
            |g, x| {
                // x³ enters through a detached constant, so backward misses it
                let v = g.value(x).map(|t| t * t * t);
                let c = g.input(v);
                let s = g.sum(x)?;
                let t = g.sum(c)?;
                g.add(s, t)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error > 0.5);
    }

    #[test]
    fn nudge() {
        let x = Tensor::new(&[4], vec![0.0, -1e-4, 5e-4, 0.3]).unwrap();
        assert_eq!(nudge_from_kinks(&x, 1e-3).data(), &[1e-3, -1e-3, 1e-3, 0.3]);
    }
}
