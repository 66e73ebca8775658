pub mod bridge;
pub mod calibration;
pub mod cli;
pub mod denoiser;
pub mod config;
pub mod error;
pub mod experiment;
pub mod fft;
pub mod forward;
pub mod metrics;
pub mod mrid;
pub mod phantom;
pub mod rng;
pub mod sampler;
pub mod types;

pub use error::{Error, Result};
pub use types::{cimage_axpy, inner_product, ComplexImage, MultiCoilKSpace, SamplingMask, SensitivityMaps};
