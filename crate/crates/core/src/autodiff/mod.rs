//! Dense tensors, a reverse-mode tape with the primitive set the network
//! needs, Adam, and parameter initialization. Everything is `f64`.

mod adam;
mod init;
mod tape;
mod tensor;

pub mod checkpoint;

pub use adam::{AdamConfig, AdamState};
pub use init::{glorot_bound, init_params, init_with, InitScheme};
pub use tape::{Gradients, ParamId, ParamStore, Tape, Var};
pub use tensor::Tensor;
