//! Two-timescale channel estimation for near-field XL-RIS systems.
//!
//! The crate simulates RIS-aided uplink channels in the near field, builds
//! piecewise reflection schedules, and estimates the small-timescale channel
//! by multi-least-squares on top of a fixed large-timescale estimate.

pub mod channel;
pub mod config;
pub mod dump;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod linalg;
pub mod rng;
pub mod spectral;
pub mod timescale;
pub mod training;

pub use config::SystemConfig;
pub use error::{Error, Result};
pub use linalg::{CMat, CVec};
