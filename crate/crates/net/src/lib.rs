//! Neural network engine and the localization networks built on it.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod lstm;
pub mod model;
pub mod optim;
pub mod scalar;
pub mod tensor;

pub use scalar::Scalar;
pub use tensor::{Act, Param};
pub use error::{NetError, Result};
pub use model::{Batch, FusionNet, NetConfig};
pub use optim::Sgd;
