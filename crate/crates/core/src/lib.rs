pub mod analytics;
pub mod cli;
pub mod error;
pub mod model;
pub mod objectives;
pub mod scaling;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
