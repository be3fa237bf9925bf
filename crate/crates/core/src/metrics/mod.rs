//! The metric abstraction under attack, the shipped desk-scale metrics and
//! the full-reference proxies used to measure degradation.

mod model;
pub mod proxy;
pub mod registry;
pub mod zoo;

pub use model::{InputPolicy, MetricModel, IMAGE_INPUT};
pub use proxy::{mse, proxy_scores, psnr, ssim, ProxyScores};
pub use registry::{build_metric, metric_names};
