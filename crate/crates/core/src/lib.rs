pub mod attacks;
pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod nn;
pub mod tensor;

pub use error::{Error, Result};
