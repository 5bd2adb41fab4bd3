pub mod audio;
pub mod detect;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod rng;
pub mod spectral;
pub mod toygen;
pub mod watermark;

pub use audio::AudioBuffer;
pub use error::{Error, Result};
