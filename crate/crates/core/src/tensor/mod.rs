//! Dense matrices and reverse-mode differentiation.

mod gradcheck;
mod matrix;
mod tape;

pub use gradcheck::{grad_check, grad_check_many};
pub use matrix::Matrix;
pub use tape::{elementwise, Elementwise, Gradients, Tape, Var, DEFAULT_LEAKY_SLOPE};
