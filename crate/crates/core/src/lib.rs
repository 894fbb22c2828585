pub mod encoders;
pub mod error;
pub mod harness;
pub mod noise;
pub mod pipeline;
pub mod sampling;
pub mod table;
pub mod transforms;
pub mod tree;

pub use error::{Error, Result};
