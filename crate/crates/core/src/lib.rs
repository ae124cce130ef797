pub mod attention;
pub mod autograd;
pub mod data;
pub mod error;
pub mod export;
pub mod nn;
pub mod tensor;
pub mod train;
pub mod transfer;
pub mod verify;

pub use autograd::{grad, Tape, Var};
pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
