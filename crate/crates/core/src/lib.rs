//! Data types, rig geometry, acoustic-optical fusion, pressure preprocessing,
//! objectives, simulation and dataset I/O for tri-modal leader localization.

pub mod dataio;
pub mod error;
pub mod fusion;
pub mod objectives;
pub mod pressure;
pub mod rig;
pub mod seed;
pub mod simulator;
pub mod types;

pub use error::{CoreError, Result};
pub use types::*;
