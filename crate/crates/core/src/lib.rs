pub mod error;
pub mod counting;
pub mod model;
pub mod noclick;
pub mod quad;
pub mod renewal;
pub mod resolvent;
pub mod spectral;
pub mod trajectory;

pub use error::{Error, Result};
pub use model::{Angle, CountingRegime, FixedPoints, ModelParams, Regime};
