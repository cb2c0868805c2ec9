//! Dense tensors with reverse-mode differentiation over the small operator
//! set used by the planners, plus the RMSprop update rule.

mod graph;
mod optim;
mod params;
mod tensor;

pub use graph::{Graph, Var};
pub use optim::{Rmsprop, RmspropConfig};
pub use params::ParamStore;
pub use tensor::{Scalar, Tensor};
