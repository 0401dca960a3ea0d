pub mod channel;
pub mod cli;
pub mod codec;
pub mod csi;
pub mod entropy;
pub mod error;
pub mod nn;
pub mod pipeline;

pub use error::{Error, Result};
