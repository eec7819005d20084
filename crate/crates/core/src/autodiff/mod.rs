//! Tensor kernel with tape-based reverse-mode differentiation.

mod ops;
mod params;
mod tape;
mod tensor;

pub use ops::{conv2d, pad2d};
pub use params::{ParamSet, VarSet};
pub use tape::{Tape, Var, GATHER_ZERO, LOG_PROB_FLOOR};
pub use tensor::Tensor;
