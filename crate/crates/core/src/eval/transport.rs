use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Monotone map between two one-dimensional distributions, stored as
/// matching quantile grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportMap {
    pub source: Vec<f64>,
    pub target: Vec<f64>,
}

/// Linearly interpolated empirical quantile of a sorted sample.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    if lo + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Quantile coupling: source quantile `q` maps to target quantile `q`. In one
/// dimension this is the exact optimal monotone transport map.
pub fn fit_transport(source: &[f64], target: &[f64], grid_size: usize) -> Result<TransportMap> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::Empty("transport sample"));
    }
    if grid_size < 2 {
        return Err(Error::Invalid(format!("transport grid size {grid_size} < 2")));
    }
    if source.iter().chain(target).any(|v| !v.is_finite()) {
        return Err(Error::Invalid("transport sample contains non-finite values".into()));
    }
    let (s, t) = (sorted(source), sorted(target));
    let levels = (0..grid_size).map(|k| k as f64 / (grid_size - 1) as f64);
    Ok(TransportMap {
        source: levels.clone().map(|q| quantile(&s, q)).collect(),
        target: levels.map(|q| quantile(&t, q)).collect(),
    })
}

impl TransportMap {
    /// Piecewise-linear between grid points, clamped outside the grid. A
    /// value sitting on a flat run of source quantiles maps to the mean of
    /// the matching target values.
    pub fn apply(&self, x: f64) -> f64 {
        let (s, t) = (&self.source, &self.target);
        let last = s.len() - 1;
        if x < s[0] {
            return t[0];
        }
        if x > s[last] {
            return t[last];
        }
        let first_ge = s.partition_point(|&v| v < x);
        if s[first_ge] == x {
            let end = s.partition_point(|&v| v <= x);
            let run = &t[first_ge..end];
            return run.iter().sum::<f64>() / run.len() as f64;
        }
        let (i, j) = (first_ge - 1, first_ge);
        let w = (x - s[i]) / (s[j] - s[i]);
        t[i] + w * (t[j] - t[i])
    }
}

pub fn apply_transport(map: &TransportMap, values: &[f64]) -> Vec<f64> {
    values.iter().map(|&v| map.apply(v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_runs_and_tails() {
        let m = fit_transport(&[1.0, 1.0, 1.0, 2.0], &[0.0, 1.0, 2.0, 3.0], 4).unwrap();
        assert_eq!(m.apply(-5.0), 0.0);
        assert_eq!(m.apply(9.0), 3.0);
        assert_eq!(m.apply(1.0), 1.0);
        assert!(m.apply(1.5) > 1.0 && m.apply(1.5) < 3.0);
        assert!(fit_transport(&[], &[1.0], 4).is_err());
        assert!(fit_transport(&[1.0], &[1.0], 1).is_err());
    }
}
