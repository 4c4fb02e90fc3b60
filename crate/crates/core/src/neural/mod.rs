//! Dense tensors, reverse-mode differentiation, layers and optimizers.

pub mod gradcheck;
pub mod io;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use optim::{Algorithm, OptimConfig, OptimState, Optimizer};
pub use params::{Gradients, Init, ParamSet};
pub use tape::{Tape, Var};
pub use tensor::{argmax, Tensor};
