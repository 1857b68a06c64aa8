use crate::data::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Normal init with std `√(2 / fan_in)`, `fan_in` = product of all but the first extent.
///
/// A rank-2 linear weight stored `[in, out]` should use [`he_normal_fan`] instead.
pub fn he_normal<T: Scalar>(rng: &mut Rng, shape: &[usize]) -> Tensor<T> {
    let fan_in: usize = shape[1..].iter().product();
    he_normal_fan(rng, shape, fan_in)
}

pub fn he_normal_fan<T: Scalar>(rng: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    rng.normal_tensor(shape, (2.0 / fan_in.max(1) as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn std_follows_fan_in() {
        let w: Tensor<f64> = he_normal(&mut Rng::new(1), &[64, 32, 3, 3]);
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let var = w.sum_squares() / n - mean * mean;
        assert!(mean.abs() < 0.01);
        assert!((var - 2.0 / 288.0).abs() < 0.05 * 2.0 / 288.0);
    }
}
