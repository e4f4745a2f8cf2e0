pub mod data;
pub mod error;
pub mod gradlabel;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tape, Tensor, Var};
