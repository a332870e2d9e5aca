pub mod error;
pub mod hessian;
pub mod measure;
pub mod objectives;
pub mod optimize;
pub mod perturb;
pub mod rng;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
