pub mod config;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod evaluation;
pub mod guidance;
pub mod model;
pub mod sampler;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{VideoDims, VideoTensor};
