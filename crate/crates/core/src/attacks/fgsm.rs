use gradcore::{EvalContext, Graph};

use super::{loss_and_gradient, sign, AttackSpec, Attacked, Flag};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{zoo, MetricModel, IMAGE_INPUT};

/// `I' = clip(I - eps * sign(grad J))`.
pub fn fgsm(metric: &MetricModel, image: &Image, spec: &AttackSpec) -> Result<Attacked> {
    let (_, grad) = loss_and_gradient(metric, image)?;
    let eps = spec.epsilon;
    let mut out = image.clone();
    for (v, &g) in out.data_mut().iter_mut().zip(grad.data()) {
        *v = (*v - eps * sign(g)).clamp(0.0, 1.0);
    }
    let mut a = Attacked::new(out, 1, Some(eps));
    if grad.data().iter().all(|&g| g == 0.0) {
        a.flags.push(Flag::NoOp);
    }
    Ok(a)
}

/// Signed steps along the momentum gradient `g_t = grad J + nu * g_(t-1)`,
/// each clipped to the eps-ball around the original and then to `[0, 1]`.
fn momentum_loop(metric: &MetricModel, image: &Image, spec: &AttackSpec, eps: f64, nu: f64) -> Result<Attacked> {
    let mut x = image.clone();
    let mut g = vec![0.0; image.len()];
    let mut steps = 0;
    let mut noop = false;
    for t in 0..spec.iterations {
        let (_, grad) = loss_and_gradient(metric, &x)?;
        steps += 1;
        if t == 0 && grad.data().iter().all(|&v| v == 0.0) {
            noop = true;
            break;
        }
        for (gi, &d) in g.iter_mut().zip(grad.data()) {
            *gi = d + nu * *gi;
        }
        for ((v, &v0), &gi) in x.data_mut().iter_mut().zip(image.data()).zip(&g) {
            *v = (*v - spec.alpha * sign(gi)).clamp(v0 - eps, v0 + eps).clamp(0.0, 1.0);
        }
    }
    let mut a = Attacked::new(x, steps, Some(eps));
    if noop {
        a.flags.push(Flag::NoOp);
    }
    Ok(a)
}

pub fn ifgsm(metric: &MetricModel, image: &Image, spec: &AttackSpec) -> Result<Attacked> {
    momentum_loop(metric, image, spec, spec.epsilon, 0.0)
}

pub fn mifgsm(metric: &MetricModel, image: &Image, spec: &AttackSpec) -> Result<Attacked> {
    momentum_loop(metric, image, spec, spec.epsilon, spec.momentum)
}

/// Supplies a quality value whose reciprocal becomes the AMI-FGSM budget.
pub trait EpsilonProvider: Sync {
    fn name(&self) -> &str;
    fn quality(&self, image: &Image) -> Result<f64>;
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantProvider(pub f64);

impl EpsilonProvider for ConstantProvider {
    fn name(&self) -> &str {
        "constant"
    }

    fn quality(&self, _image: &Image) -> Result<f64> {
        Ok(self.0)
    }
}

/// Naturalness-feature distance, `20 + Σ ((f - ref) / spread)²`.
#[derive(Debug, Clone)]
pub struct NaturalnessProvider {
    graph: Graph,
}

impl NaturalnessProvider {
    pub fn new() -> Self {
        Self {
            graph: zoo::naturalness_provider_graph(),
        }
    }
}

impl Default for NaturalnessProvider {
    fn default() -> Self {
        Self::new()
    }
}

impl EpsilonProvider for NaturalnessProvider {
    fn name(&self) -> &str {
        zoo::NATURALNESS
    }

    fn quality(&self, image: &Image) -> Result<f64> {
        let t = image.to_tensor();
        let mut ctx = EvalContext::new(&self.graph);
        let out = ctx.forward(&[(IMAGE_INPUT, &t)])?;
        out.item()
            .ok_or_else(|| Error::Shape(format!("provider output {:?}", out.shape())))
    }
}

/// MI-FGSM with `eps = 1 / provider(I)`.
pub fn amifgsm(
    metric: &MetricModel,
    image: &Image,
    spec: &AttackSpec,
    provider: &dyn EpsilonProvider,
) -> Result<Attacked> {
    let q = provider.quality(image)?;
    if !(q.is_finite() && q > 0.0) {
        return Err(Error::Provider {
            provider: provider.name().to_string(),
            value: q,
        });
    }
    let eps = (1.0 / q).min(1.0);
    momentum_loop(metric, image, spec, eps, spec.momentum)
}

/// Builds the provider named by `extra.provider` (default naturalness-lite).
pub fn provider_for(spec: &AttackSpec) -> Result<Box<dyn EpsilonProvider>> {
    match spec.extra_str("provider", zoo::NATURALNESS)? {
        zoo::NATURALNESS => Ok(Box::new(NaturalnessProvider::new())),
        "constant" => Ok(Box::new(ConstantProvider(spec.extra_f64("provider_value", 20.0)?))),
        other => Err(Error::InvalidSpec(format!("unknown epsilon provider `{other}`"))),
    }
}
