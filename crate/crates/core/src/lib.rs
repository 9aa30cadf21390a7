pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod generator;
pub mod hamnosys;
pub mod kan;
pub mod model;
pub mod nn;
pub mod numerics;
pub mod pose;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = numerics::Tensor<f64>;
pub type Tensor32 = numerics::Tensor<f32>;
pub type Model64 = model::SignModel<f64>;
pub type Model32 = model::SignModel<f32>;
pub type TrainSample64 = training::TrainSample<f64>;
pub type TrainSample32 = training::TrainSample<f32>;
