pub mod assembly;
pub mod error;
pub mod grid;
pub mod harness;
pub mod kernel;
pub mod optimizer;
pub mod quadrature;
pub mod solve;

pub use error::{Error, Result};
