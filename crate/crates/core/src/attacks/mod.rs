//! The attacks: a shared normalized loss, the FGSM family, three UAP
//! trainers plus the applier, the spatial-activity attack and MADC.

mod fgsm;
mod korhonen;
mod madc;
mod spec;
pub mod uap;

pub use fgsm::{amifgsm, fgsm, ifgsm, mifgsm, provider_for, ConstantProvider, EpsilonProvider, NaturalnessProvider};
pub use korhonen::{activity_map, korhonen};
pub use madc::{madc, project_out, MseUnits};
pub use spec::{defaults, AttackKind, AttackSpec, Flag};
pub use uap::{apply_uap, fit_pattern, train_uap, Perturbation};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::Image;
use crate::metrics::{proxy_scores, MetricModel, ProxyScores};

/// `J = 1 - score / range`; lowering J raises the score.
pub fn attack_loss(metric: &MetricModel, image: &Image) -> Result<f64> {
    let range = metric.range_width()?;
    Ok(1.0 - metric.score(image)? / range)
}

/// The loss and its gradient `-(1 / range) * d score / dI`.
pub fn loss_and_gradient(metric: &MetricModel, image: &Image) -> Result<(f64, Image)> {
    let range = metric.range_width()?;
    let (s, mut g) = metric.score_and_gradient(image)?;
    let k = -1.0 / range;
    g.data_mut().iter_mut().for_each(|v| *v *= k);
    Ok((1.0 - s / range, g))
}

pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// What a per-image attack hands back before scoring.
#[derive(Debug, Clone)]
pub struct Attacked {
    pub image: Image,
    pub steps_used: usize,
    pub flags: Vec<Flag>,
    /// Effective L∞ budget, when the attack has one.
    pub epsilon: Option<f64>,
}

impl Attacked {
    pub(crate) fn new(image: Image, steps_used: usize, epsilon: Option<f64>) -> Self {
        Self { image, steps_used, flags: Vec::new(), epsilon }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub image_id: String,
    pub score_before: f64,
    pub score_after: f64,
    pub proxy: ProxyScores,
    pub steps_used: usize,
    pub spec_digest: String,
    pub epsilon: Option<f64>,
    pub linf: f64,
    pub flags: Vec<Flag>,
    /// SHA-256 of the attacked image values.
    pub attacked_digest: String,
}

#[derive(Debug, Clone)]
pub struct AttackOutput {
    pub result: AttackResult,
    pub image: Image,
}

/// Scores an attacked image against its original and packages the record.
pub fn finish(
    metric: &MetricModel,
    image_id: &str,
    original: &Image,
    attacked: Attacked,
    spec: &AttackSpec,
) -> Result<AttackOutput> {
    let proxy = proxy_scores(original, &attacked.image)?;
    let result = AttackResult {
        image_id: image_id.to_string(),
        score_before: metric.score(original)?,
        score_after: metric.score(&attacked.image)?,
        proxy,
        steps_used: attacked.steps_used,
        spec_digest: spec.digest(),
        epsilon: attacked.epsilon,
        linf: original.linf_distance(&attacked.image)?,
        flags: attacked.flags,
        attacked_digest: attacked.image.digest(),
    };
    Ok(AttackOutput { result, image: attacked.image })
}

/// Runs one per-image attack. UAP kinds go through [`apply_uap`] instead.
pub fn run_attack(
    metric: &MetricModel,
    image_id: &str,
    image: &Image,
    spec: &AttackSpec,
    provider: &dyn EpsilonProvider,
) -> Result<AttackOutput> {
    spec.validate()?;
    let attacked = match spec.kind {
        AttackKind::Fgsm => fgsm(metric, image, spec)?,
        AttackKind::Ifgsm => ifgsm(metric, image, spec)?,
        AttackKind::Mifgsm => mifgsm(metric, image, spec)?,
        AttackKind::Amifgsm => amifgsm(metric, image, spec, provider)?,
        AttackKind::Korhonen => korhonen(metric, image, spec)?,
        AttackKind::Madc => madc(metric, image, spec)?,
        k => {
            return Err(crate::Error::InvalidSpec(format!(
                "`{}` is a universal perturbation; train it and apply it",
                k.as_str()
            )))
        }
    };
    finish(metric, image_id, image, attacked, spec)
}

/// Applies a trained perturbation to one image and records the result.
pub fn run_uap_attack(
    metric: &MetricModel,
    image_id: &str,
    image: &Image,
    perturbation: &Perturbation,
    spec: &AttackSpec,
) -> Result<AttackOutput> {
    let amplitude = spec.amplitude;
    let mut attacked = Attacked::new(apply_uap(perturbation, image, amplitude)?, 0, None);
    attacked.flags.extend(perturbation.flags.iter().copied());
    finish(metric, image_id, image, attacked, spec)
}
