use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest number of non-zero differences handled by the exact null
/// distribution; above it the normal approximation is used.
pub const EXACT_MAX_N: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Non-zero differences kept.
    pub n: usize,
    /// `W+`, the rank sum of the positive differences.
    pub statistic: f64,
    /// `P(W+ <= observed)` under the null.
    pub p_value: f64,
    pub exact: bool,
}

/// Mid-ranks of `|d|`, 1-based.
fn mid_ranks(abs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..abs.len()).collect();
    order.sort_by(|&i, &j| abs[i].total_cmp(&abs[j]));
    let mut ranks = vec![0.0; abs.len()];
    let mut k = 0;
    while k < order.len() {
        let mut end = k;
        while end + 1 < order.len() && abs[order[end + 1]] == abs[order[k]] {
            end += 1;
        }
        let r = (k + end) as f64 / 2.0 + 1.0;
        for &i in &order[k..=end] {
            ranks[i] = r;
        }
        k = end + 1;
    }
    ranks
}

/// `P(W+ <= w)` by counting sign assignments over the doubled (integer) ranks.
fn exact_lower_tail(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    for &r in &doubled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let limit = (2.0 * w).round() as usize;
    let hits: f64 = counts[..=limit.min(total)].iter().sum();
    hits / 2f64.powi(ranks.len() as i32)
}

/// One-sided signed-rank test on `d = a - b` with the alternative that `a`
/// tends to be smaller (for gains: `a` is the more robust metric). Zero
/// differences are dropped and tied magnitudes get mid-ranks. Exact for up
/// to [`EXACT_MAX_N`] differences, otherwise normal with tie and continuity
/// corrections.
pub fn wilcoxon_one_sided(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("paired samples of {} and {}", a.len(), b.len())));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    if d.is_empty() {
        return Err(Error::Undefined("all paired differences are zero".into()));
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = mid_ranks(&abs);
    let w: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let n = d.len();
    if n <= EXACT_MAX_N {
        return Ok(WilcoxonResult {
            n,
            statistic: w,
            p_value: exact_lower_tail(&ranks, w),
            exact: true,
        });
    }
    let nf = n as f64;
    let mu = nf * (nf + 1.0) / 4.0;
    let mut ties = 0.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut k = 0;
    while k < sorted.len() {
        let mut end = k;
        while end + 1 < sorted.len() && sorted[end + 1] == sorted[k] {
            end += 1;
        }
        let t = (end - k + 1) as f64;
        ties += t * t * t - t;
        k = end + 1;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
    let z = (w - mu + 0.5) / var.sqrt();
    let normal = Normal::standard();
    Ok(WilcoxonResult {
        n,
        statistic: w,
        p_value: normal.cdf(z).min(1.0),
        exact: false,
    })
}
