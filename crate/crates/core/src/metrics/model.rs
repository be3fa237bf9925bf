use std::path::Path;

use gradcore::{EvalContext, Graph, NodeId, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Name of the graph input every metric reads its image from.
pub const IMAGE_INPUT: &str = "image";

/// How an image is fitted to the metric's network input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum InputPolicy {
    FullFrame,
    CenterCrop { size: usize },
    /// Bilinear resize with half-pixel centers.
    Resize { size: usize },
}

impl InputPolicy {
    /// Appends the policy op after `x`. Because the crop/resize is part of the
    /// graph, scores and gradients always see the same transform.
    pub fn apply(self, g: &mut Graph, x: NodeId) -> NodeId {
        match self {
            InputPolicy::FullFrame => x,
            InputPolicy::CenterCrop { size } => g.center_crop(x, size, size),
            InputPolicy::Resize { size } => g.resize(x, size, size),
        }
    }
}

/// A differentiable scalar-valued function of an image.
#[derive(Debug, Clone)]
pub struct MetricModel {
    name: String,
    graph: Graph,
    channels: usize,
    input_policy: InputPolicy,
    range: Option<(f64, f64)>,
}

impl MetricModel {
    /// `graph` must read [`IMAGE_INPUT`] and have a single scalar output.
    pub fn new(name: &str, graph: Graph, channels: usize, input_policy: InputPolicy) -> Self {
        Self {
            name: name.to_string(),
            graph,
            channels,
            input_policy,
            range: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn input_policy(&self) -> InputPolicy {
        self.input_policy
    }

    pub fn declared_range(&self) -> Option<(f64, f64)> {
        self.range
    }

    /// Width of the declared range, `max - min`.
    pub fn range_width(&self) -> Result<f64> {
        let (lo, hi) = self.range.ok_or_else(|| Error::Uncalibrated(self.name.clone()))?;
        Ok(hi - lo)
    }

    pub fn with_range(mut self, min: f64, max: f64) -> Result<Self> {
        self.set_range(min, max)?;
        Ok(self)
    }

    pub fn set_range(&mut self, min: f64, max: f64) -> Result<()> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(Error::Calibration {
                metric: self.name.clone(),
                reason: format!("invalid range ({min}, {max})"),
            });
        }
        self.range = Some((min, max));
        Ok(())
    }

    pub fn load_weights(&mut self, manifest: &Path) -> Result<()> {
        gradcore::weights::load_weights(&mut self.graph, manifest)?;
        Ok(())
    }

    pub fn save_weights(&self, manifest: &Path) -> Result<()> {
        gradcore::weights::save_weights(&self.graph, manifest)?;
        Ok(())
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        if image.channels() != self.channels {
            return Err(Error::Shape(format!(
                "metric `{}` expects {} channels, image has {}",
                self.name,
                self.channels,
                image.channels()
            )));
        }
        if let InputPolicy::CenterCrop { size } = self.input_policy {
            if image.height() < size || image.width() < size {
                return Err(Error::Shape(format!(
                    "metric `{}` crops {size}x{size}, image is {}x{}",
                    self.name,
                    image.height(),
                    image.width()
                )));
            }
        }
        Ok(())
    }

    fn fault(&self, e: gradcore::GradError) -> Error {
        match e {
            gradcore::GradError::NonFinite { .. } => Error::MetricFault {
                metric: self.name.clone(),
            },
            other => other.into(),
        }
    }

    pub fn score(&self, image: &Image) -> Result<f64> {
        self.check_image(image)?;
        let t = image.to_tensor();
        let mut ctx = EvalContext::new(&self.graph);
        let out = ctx.forward(&[(IMAGE_INPUT, &t)]).map_err(|e| self.fault(e))?;
        scalar(out, &self.name)
    }

    /// Score and its gradient with respect to the image.
    pub fn score_and_gradient(&self, image: &Image) -> Result<(f64, Image)> {
        self.check_image(image)?;
        let t = image.to_tensor();
        let mut ctx = EvalContext::new(&self.graph);
        let out = ctx.forward(&[(IMAGE_INPUT, &t)]).map_err(|e| self.fault(e))?;
        let s = scalar(out, &self.name)?;
        let g = ctx.backward(IMAGE_INPUT).map_err(|e| self.fault(e))?;
        Ok((s, Image::from_tensor(&g)?))
    }

    /// Hash of which piece of a piecewise-smooth metric is active at `image`
    /// (ReLU masks, pooling winners, clamp and floor regions). Finite
    /// differences are only meaningful between images with equal signatures.
    pub fn branch_signature(&self, image: &Image) -> Result<u64> {
        self.check_image(image)?;
        let t = image.to_tensor();
        let mut ctx = EvalContext::new(&self.graph);
        ctx.forward(&[(IMAGE_INPUT, &t)]).map_err(|e| self.fault(e))?;
        Ok(ctx.branch_signature()?)
    }

    pub fn score_gradient(&self, image: &Image) -> Result<Image> {
        Ok(self.score_and_gradient(image)?.1)
    }

    /// Records `(min, max)` of the scores over `images` as the declared range.
    pub fn calibrate_range(&mut self, images: &[Image]) -> Result<(f64, f64)> {
        if images.is_empty() {
            return Err(Error::Empty("calibration set"));
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for img in images {
            let s = self.score(img)?;
            lo = lo.min(s);
            hi = hi.max(s);
        }
        if hi <= lo {
            return Err(Error::Calibration {
                metric: self.name.clone(),
                reason: format!("zero score range ({lo}) over {} images", images.len()),
            });
        }
        self.range = Some((lo, hi));
        Ok((lo, hi))
    }
}

fn scalar(t: &Tensor, name: &str) -> Result<f64> {
    t.item()
        .ok_or_else(|| Error::Shape(format!("metric `{name}` output has shape {:?}", t.shape())))
}
