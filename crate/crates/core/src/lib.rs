//! Robustness benchmarking for differentiable no-reference image-quality
//! metrics: the metrics under attack, the attacks, and the measures that
//! summarize how far each attack moved each metric.

pub mod attacks;
pub mod error;
pub mod eval;
pub mod image;
pub mod metrics;
pub mod synth;

pub use error::{Error, Result};
pub use image::Image;

