pub mod cli;
pub mod encoders;
pub mod error;
pub mod fieldsim;
pub mod fusion;
pub mod numerics;
pub mod pipeline;
pub mod util;

pub use error::{Result, RoarError};
