//! RoadFormer: a hybrid convolution/attention image classifier with a
//! foreground-background auxiliary loss, on a small f64 autodiff engine.

pub mod arch;
pub mod checkpoint;
pub mod data;
pub mod fbm;
pub mod metrics;
pub mod optim;
pub mod tensor;
pub mod train;

pub use tensor::{no_grad, Tensor, TensorError};
