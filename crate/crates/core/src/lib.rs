pub mod error;
pub mod gmm;
pub mod lifelong;
pub mod mapek;
pub mod metrics;
pub mod ml2asr;
pub mod ranking;
pub mod rng;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
