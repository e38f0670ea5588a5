pub mod cli;
pub mod em;
pub mod error;
pub mod ga;
pub mod kalman;
pub mod model;
pub mod monitoring;
pub mod preprocess;
pub mod select;
pub mod statespace;

pub use error::{Error, ErrorCategory, Result};
