//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use gradcheck::check_gradients;
pub use ops::Primitive;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
