//! Dense arrays, a reverse-mode tape, and the Adam optimiser.

mod adam;
mod array;
mod tape;

pub use adam::{AdamConfig, Binding, ParamId, ParamStore, Parameter};
pub use array::Array;
pub use tape::{Activation, BinaryOp, Gradients, Tape, Var};

#[allow(unused_imports)]
pub(crate) use tape::sigmoid;
