use super::model::{InputPolicy, MetricModel};
use super::zoo;
use crate::error::{Error, Result};

type Builder = fn(InputPolicy) -> MetricModel;

const REGISTRY: &[(&str, Builder, InputPolicy)] = &[
    (zoo::TINY_CNN, zoo::tiny_cnn_nr, InputPolicy::FullFrame),
    (zoo::PATCH_WEIGHTED, zoo::patch_weighted, InputPolicy::Resize { size: 24 }),
    (zoo::NATURALNESS, zoo::naturalness_lite, InputPolicy::FullFrame),
    (zoo::MEAN_PIXEL, zoo::mean_pixel, InputPolicy::FullFrame),
    (zoo::SATURATED_CLAMP, zoo::saturated_clamp, InputPolicy::FullFrame),
];

pub fn metric_names() -> Vec<&'static str> {
    REGISTRY.iter().map(|r| r.0).collect()
}

/// Builds a registered metric, with its default input policy unless one is given.
pub fn build_metric(name: &str, policy: Option<InputPolicy>) -> Result<MetricModel> {
    let (_, build, default) = REGISTRY
        .iter()
        .find(|r| r.0 == name)
        .ok_or_else(|| Error::UnknownMetric(name.to_string()))?;
    Ok(build(policy.unwrap_or(*default)))
}
