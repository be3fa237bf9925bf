use serde::{Deserialize, Serialize};

use super::{AttackSpec, Attacked, Flag};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{mse, MetricModel};

/// Scale in which the MADC budget and precision are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MseUnits {
    /// Per-pixel MSE of `[0, 1]` values.
    Unit,
    /// Per-pixel MSE of `[0, 255]` values.
    EightBit,
}

impl MseUnits {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "unit" => Ok(MseUnits::Unit),
            "eight-bit" => Ok(MseUnits::EightBit),
            other => Err(Error::InvalidSpec(format!("unknown MSE units `{other}`"))),
        }
    }

    pub fn factor(self) -> f64 {
        match self {
            MseUnits::Unit => 1.0,
            MseUnits::EightBit => 255.0 * 255.0,
        }
    }
}

/// `g1 - (g2·g1 / g2·g2) g2`, or `g1` unchanged when `g2` vanishes.
pub fn project_out(g1: &[f64], g2: &[f64]) -> Vec<f64> {
    let g22: f64 = g2.iter().map(|v| v * v).sum();
    if g22 == 0.0 {
        return g1.to_vec();
    }
    let k = g1.iter().zip(g2).map(|(a, b)| a * b).sum::<f64>() / g22;
    g1.iter().zip(g2).map(|(a, b)| a - k * b).collect()
}

fn along(x0: &Image, d: &[f64], lambda: f64) -> Image {
    let mut out = x0.clone();
    for (v, &di) in out.data_mut().iter_mut().zip(d) {
        *v = (*v + lambda * di).clamp(0.0, 1.0);
    }
    out
}

/// Finds `lambda >= 0` with `MSE(clip(x0 + lambda d), x0) = target`.
/// The MSE is nondecreasing in lambda, so bisection is exact up to rounding;
/// returns the closest image found.
fn fix_mse(x0: &Image, d: &[f64], target: f64) -> Result<Image> {
    let f = |l: f64| -> Result<(Image, f64)> {
        let img = along(x0, d, l);
        let m = mse(x0, &img)?;
        Ok((img, m))
    };
    let mut hi = 1.0;
    let mut best = f(hi)?;
    let mut doublings = 0;
    while best.1 < target && doublings < 64 {
        hi *= 2.0;
        best = f(hi)?;
        doublings += 1;
    }
    if best.1 < target {
        return Ok(best.0);
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let cur = f(mid)?;
        if (cur.1 - target).abs() < (best.1 - target).abs() {
            best = (cur.0.clone(), cur.1);
        }
        if cur.1 < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if best.1 == target {
            break;
        }
    }
    Ok(best.0)
}

/// Score ascent that holds MSE to the original fixed.
///
/// Each iteration takes `g1 = grad score / range` and `g2 = grad MSE`, steps
/// along `pg = g1 - (g2·g1 / g2·g2) g2` normalized to unit L∞, then moves
/// back onto the MSE level set `extra.mse_budget` along the ray from the
/// original. The first iteration has `g2 = 0` and uses `g1` unchanged.
pub fn madc(metric: &MetricModel, image: &Image, spec: &AttackSpec) -> Result<Attacked> {
    let units = MseUnits::parse(spec.extra_str("units", "unit")?)?;
    let budget = spec.extra_f64("mse_budget", 1e-3)?;
    let precision = spec.extra_f64("precision", 0.04)?;
    if budget <= 0.0 || precision < 0.0 {
        return Err(Error::InvalidSpec(format!(
            "madc needs mse_budget > 0 and precision >= 0, got {budget} and {precision}"
        )));
    }
    let target = budget / units.factor();
    let range = metric.range_width()?;
    let n = image.len() as f64;

    let mut x = image.clone();
    let mut steps = 0;
    let mut flags = Vec::new();
    for _ in 0..spec.iterations {
        steps += 1;
        let (_, gs) = metric.score_and_gradient(&x)?;
        let g1: Vec<f64> = gs.data().iter().map(|v| v / range).collect();
        let g2: Vec<f64> = x
            .data()
            .iter()
            .zip(image.data())
            .map(|(a, b)| 2.0 * (a - b) / n)
            .collect();
        let pg = project_out(&g1, &g2);
        let m = pg.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let g1_max = g1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if m == 0.0 || m <= 1e-12 * g1_max {
            if !flags.contains(&Flag::ParallelSkip) {
                flags.push(Flag::ParallelSkip);
            }
            continue;
        }
        let d: Vec<f64> = x
            .data()
            .iter()
            .zip(image.data())
            .zip(&pg)
            .map(|((xi, x0), p)| xi + spec.alpha * p / m - x0)
            .collect();
        x = fix_mse(image, &d, target)?;
    }
    let achieved = mse(image, &x)? * units.factor();
    if (achieved - budget).abs() > precision {
        flags.push(Flag::NonConverged);
    }
    let mut a = Attacked::new(x, steps, None);
    a.flags = flags;
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_identities() {
        let g1 = [1.0, 2.0, -1.0];
        assert_eq!(project_out(&g1, &[2.0, 4.0, -2.0]), vec![0.0, 0.0, 0.0]);
        assert_eq!(project_out(&g1, &[2.0, -1.0, 0.0]), g1.to_vec());
        assert_eq!(project_out(&g1, &[0.0; 3]), g1.to_vec());
    }

    #[test]
    fn bisection_hits_the_level_set() {
        let x0 = Image::from_fn(6, 6, 3, |y, x, c| ((y + 2 * x + c) % 7) as f64 / 7.0);
        let d: Vec<f64> = (0..x0.len()).map(|i| ((i * 37) % 11) as f64 / 11.0 - 0.5).collect();
        let img = fix_mse(&x0, &d, 0.004).unwrap();
        assert!((mse(&x0, &img).unwrap() - 0.004).abs() < 1e-12);
    }
}
