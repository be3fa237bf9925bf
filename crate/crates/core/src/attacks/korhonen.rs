use gradcore::{EvalContext, Graph, SobelAxis, Tensor};

use super::{loss_and_gradient, AttackSpec, Attacked, Flag};
use crate::error::Result;
use crate::image::Image;

/// Sobel gradient magnitude of the luma plane, scaled so its maximum is 1.
/// A flat image yields an all-zero map.
/// Sobel magnitudes below this are accumulation residue on flat regions.
const ACTIVITY_FLOOR: f64 = 1e-9;

pub fn activity_map(image: &Image) -> Result<Vec<f64>> {
    let (h, w) = (image.height(), image.width());
    let mut g = Graph::new();
    let x = g.input("luma");
    let gx = g.sobel(x, SobelAxis::Horizontal);
    let gy = g.sobel(x, SobelAxis::Vertical);
    g.set_output(gx);
    let luma = Tensor::new(vec![1, h, w], image.luma())?;
    let mut ctx = EvalContext::new(&g);
    ctx.forward(&[("luma", &luma)])?;
    let (sx, sy) = (ctx.value(gx)?, ctx.value(gy)?);
    let mut s: Vec<f64> = sx
        .data()
        .iter()
        .zip(sy.data())
        .map(|(a, b)| (a * a + b * b).sqrt())
        .map(|v| if v < ACTIVITY_FLOOR { 0.0 } else { v })
        .collect();
    let max = s.iter().fold(0.0f64, |m, &v| m.max(v));
    if max > 0.0 {
        s.iter_mut().for_each(|v| *v /= max);
    }
    Ok(s)
}

/// Gradient descent on J with each step masked by the activity map of the
/// original image: `I <- clip(I - alpha * (g ⊙ S))`. With `extra.normalize`
/// (default on) the masked step is rescaled to unit L∞ so `alpha` is a pixel
/// step size rather than a multiplier on a tiny raw gradient.
pub fn korhonen(metric: &crate::metrics::MetricModel, image: &Image, spec: &AttackSpec) -> Result<Attacked> {
    let normalize = spec.extra_bool("normalize", true)?;
    let s = activity_map(image)?;
    let plane = image.height() * image.width();
    let mut x = image.clone();
    let mut steps = 0;
    let mut moved = false;
    let mut step = vec![0.0; image.len()];
    for _ in 0..spec.iterations {
        let (_, grad) = loss_and_gradient(metric, &x)?;
        steps += 1;
        for (i, (st, &g)) in step.iter_mut().zip(grad.data()).enumerate() {
            *st = g * s[i % plane];
        }
        let m = step.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if m == 0.0 {
            break;
        }
        let k = if normalize { spec.alpha / m } else { spec.alpha };
        for (v, &st) in x.data_mut().iter_mut().zip(&step) {
            *v = (*v - k * st).clamp(0.0, 1.0);
        }
        moved = true;
    }
    let mut a = Attacked::new(x, steps, None);
    if !moved {
        a.flags.push(Flag::NoOp);
    }
    Ok(a)
}
