//! Reverse-mode autodiff and the learned registration network.
//!
//! Feature maps are `[H, W, C]` tensors with an implicit batch of one.

pub mod adam;
pub mod checkpoint;
pub mod graph;
pub mod kernels;
pub mod loss;
pub mod probe;
pub mod real;
pub mod tensor;
pub mod train;
pub mod unet;

pub use adam::{adam_step, AdamState};
pub use graph::{Gradients, Graph, Var};
pub use loss::LossMode;
pub use real::Real;
pub use tensor::Tensor;
pub use train::{train, History, TrainConfig, TrainOutcome, Trainer};
pub use unet::{UNetConfig, UNetModel};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Model32 = UNetModel<f32>;
pub type Model64 = UNetModel<f64>;
