use serde::{Deserialize, Serialize};

use super::scaling::ScoreSeries;

/// Pairs with `|after - before|` below this are outside the R-score's domain.
pub const R_DELTA_MIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    pub abs: f64,
    pub rel: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Per-pair `after - before`.
pub fn abs_terms(s: &ScoreSeries) -> Vec<f64> {
    s.before.iter().zip(&s.after).map(|(b, a)| a - b).collect()
}

/// Per-pair `(after - before) / (before + 1)`.
pub fn rel_terms(s: &ScoreSeries) -> Vec<f64> {
    s.before.iter().zip(&s.after).map(|(b, a)| (a - b) / (b + 1.0)).collect()
}

/// `abs = mean(after - before)`, `rel = mean((after - before) / (before + 1))`.
pub fn gains(s: &ScoreSeries) -> Gains {
    Gains {
        abs: mean(&abs_terms(s)),
        rel: mean(&rel_terms(s)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RScore {
    /// `None` when every pair was excluded.
    pub value: Option<f64>,
    pub used: usize,
    /// Pairs with `|after - before| < R_DELTA_MIN`.
    pub excluded_small_delta: usize,
    /// Pairs whose numerator `max(1 - after, before)` is not positive.
    pub excluded_nonpositive: usize,
}

impl RScore {
    pub fn excluded(&self) -> usize {
        self.excluded_small_delta + self.excluded_nonpositive
    }
}

/// Per-pair `log10(max(1 - after, before) / |after - before|)` with the
/// out-of-domain pairs counted separately.
pub fn r_terms(s: &ScoreSeries) -> (Vec<f64>, usize, usize) {
    let mut terms = Vec::with_capacity(s.len());
    let (mut small, mut nonpos) = (0, 0);
    for (&b, &a) in s.before.iter().zip(&s.after) {
        let d = (a - b).abs();
        if d < R_DELTA_MIN {
            small += 1;
            continue;
        }
        let num = (1.0 - a).max(b);
        if num <= 0.0 {
            nonpos += 1;
            continue;
        }
        terms.push((num / d).log10());
    }
    (terms, small, nonpos)
}

pub fn r_score(s: &ScoreSeries) -> RScore {
    let (terms, small, nonpos) = r_terms(s);
    RScore {
        value: (!terms.is_empty()).then(|| mean(&terms)),
        used: terms.len(),
        excluded_small_delta: small,
        excluded_nonpositive: nonpos,
    }
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Integrates `phi(F_p(x) - F_q(x))` over the real line for the two
/// empirical CDFs, which are piecewise constant between merged sample points.
fn cdf_integral(p: &[f64], q: &[f64], phi: impl Fn(f64) -> f64) -> f64 {
    let (p, q) = (sorted(p), sorted(q));
    let mut xs: Vec<f64> = p.iter().chain(&q).copied().collect();
    xs.sort_by(f64::total_cmp);
    let (np, nq) = (p.len() as f64, q.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut total = 0.0;
    for w in xs.windows(2) {
        while i < p.len() && p[i] <= w[0] {
            i += 1;
        }
        while j < q.len() && q[j] <= w[0] {
            j += 1;
        }
        let width = w[1] - w[0];
        if width > 0.0 {
            total += phi(i as f64 / np - j as f64 / nq) * width;
        }
    }
    total
}

/// First Wasserstein distance. Equal-size samples use the sorted pairing;
/// otherwise the CDF integral `∫|F_p - F_q|`.
pub fn wasserstein1(p: &[f64], q: &[f64]) -> f64 {
    if p.is_empty() || q.is_empty() {
        return 0.0;
    }
    if p.len() == q.len() {
        let (p, q) = (sorted(p), sorted(q));
        return p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64;
    }
    cdf_integral(p, q, f64::abs)
}

/// `sqrt(2 ∫ (F_p - F_q)²)`.
pub fn energy_distance(p: &[f64], q: &[f64]) -> f64 {
    if p.is_empty() || q.is_empty() {
        return 0.0;
    }
    (2.0 * cdf_integral(p, q, |d| d * d)).sqrt()
}

/// -1 when the mean score went down, +1 otherwise.
fn direction(s: &ScoreSeries) -> f64 {
    if mean(&s.after) < mean(&s.before) {
        -1.0
    } else {
        1.0
    }
}

pub fn w_score(s: &ScoreSeries) -> f64 {
    direction(s) * wasserstein1(&s.before, &s.after)
}

pub fn e_score(s: &ScoreSeries) -> f64 {
    direction(s) * energy_distance(&s.before, &s.after)
}
