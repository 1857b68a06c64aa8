pub mod error;
pub mod nn;
pub mod optim;
pub mod scalar;
pub mod selfcheck;
pub mod attention;
pub mod autodiff;
pub mod data;
pub mod tensor;
pub mod train;
pub mod wavelet;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
