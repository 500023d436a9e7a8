//! Dense tensors, a reverse-mode tape, MLP building blocks and Adam.

mod array;
pub mod nn;
mod optim;
mod tape;

pub use array::Tensor;
pub use nn::{Linear, Mlp, HIDDEN_WIDTH};
pub use optim::{Binding, ParamStore, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use tape::{Gradients, Tape, Var};
