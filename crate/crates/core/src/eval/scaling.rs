use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scaled scores are rounded to multiples of this step so that any positive
/// affine transform of the raw scores yields bit-identical scaled values.
pub const SCALE_GRID: f64 = 1.0 / 4_294_967_296.0;

/// Index-aligned raw scores before and after an attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub metric: String,
    pub dataset: String,
    pub attack: String,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
}

impl ScoreSeries {
    pub fn new(metric: &str, dataset: &str, attack: &str, before: Vec<f64>, after: Vec<f64>) -> Result<Self> {
        if before.len() != after.len() {
            return Err(Error::Shape(format!(
                "{} scores before, {} after",
                before.len(),
                after.len()
            )));
        }
        if before.iter().chain(&after).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("score series contains non-finite values".into()));
        }
        Ok(Self {
            metric: metric.to_string(),
            dataset: dataset.to_string(),
            attack: attack.to_string(),
            before,
            after,
        })
    }

    pub fn len(&self) -> usize {
        self.before.len()
    }

    pub fn is_empty(&self) -> bool {
        self.before.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub min: f64,
    pub max: f64,
}

impl ScalingParams {
    pub fn apply(&self, v: f64) -> f64 {
        let s = (v - self.min) / (self.max - self.min);
        (s / SCALE_GRID).round() * SCALE_GRID
    }
}

/// Maps both sides with `(x - min) / (max - min)`, where min and max come
/// from the before-attack scores only. After-scores may leave `[0, 1]`.
pub fn minmax_scale(series: &ScoreSeries) -> Result<(ScoreSeries, ScalingParams)> {
    if series.is_empty() {
        return Err(Error::Empty("score series"));
    }
    let min = series.before.iter().copied().fold(f64::INFINITY, f64::min);
    let max = series.before.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max <= min {
        return Err(Error::Undefined(format!(
            "before-attack scores of {}/{}/{} are constant",
            series.metric, series.attack, series.dataset
        )));
    }
    let p = ScalingParams { min, max };
    let mut out = series.clone();
    out.before.iter_mut().for_each(|v| *v = p.apply(*v));
    out.after.iter_mut().for_each(|v| *v = p.apply(*v));
    Ok((out, p))
}
