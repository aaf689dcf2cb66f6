//! Reverse-mode differentiable dense arrays.

mod array;
mod gradcheck;
mod params;
mod tape;

pub use array::Array;
pub use gradcheck::{grad_check, GradCheckReport, ParamError};
pub use params::{Gradients, ParamId, ParamStore, Parameter};
pub use tape::{Grads, Tape, Var};
