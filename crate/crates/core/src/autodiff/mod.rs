//! Dense `f64` tensors with a reverse-mode differentiation tape.

mod gradcheck;
pub mod opcheck;
mod param;
mod tape;
mod tensor;

pub use gradcheck::{
    grad_check, grad_check_on, relative_error, GradCheckReport, RELATIVE_ERROR_FLOOR,
};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Basis1d, Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;


#[cfg(test)]
mod tests;
