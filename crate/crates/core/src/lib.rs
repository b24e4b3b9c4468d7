pub mod analysis;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod feedback;
pub mod model;
pub mod series;
pub mod sim;

pub use error::{Error, Result};
