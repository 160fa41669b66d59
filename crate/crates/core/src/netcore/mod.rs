//! Dense tensors, parameter storage and a reverse-mode tape covering every
//! operation the models need, including the matrix exponential and the
//! Sobolev spectral energy.

pub mod dft;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{mlp_forward, softmax_gate, Activation, Mlp};
pub use params::{Param, ParamId, ParamStore, Partition};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
