pub mod cli;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod frames;
pub mod plots;
pub mod suite;
pub mod train;

pub use error::{HarnessError, Result};
