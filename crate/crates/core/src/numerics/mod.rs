//! Dense tensors, reverse-mode differentiation, Adam, and a
//! finite-difference gradient checker.

mod adam;
mod gradcheck;
pub mod rng;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use rng::{seeded_rng, Rng64};
pub use tensor::{silu, Tensor};
