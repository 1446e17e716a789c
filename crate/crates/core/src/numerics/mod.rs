//! Differentiable numerics kernel: tensors, a reverse-mode tape, dense and
//! residual-dense networks, Adam, and finite-difference gradient checks.

mod adam;
mod gradcheck;
mod net;
mod params;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use gradcheck::{finite_difference_check, grad_check, GradCheckReport};
pub use net::{Mlp, NetKind, NetSpec};
pub use params::{ParamId, Parameter, ParameterSet};
pub use tape::{Activation, Gradients, Tape, Var};
pub(crate) use tensor::gemm;
pub use tensor::Tensor;
