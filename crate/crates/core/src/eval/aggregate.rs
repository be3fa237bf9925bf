use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::measures::{abs_terms, e_score, r_terms, rel_terms, w_score};
use super::scaling::ScoreSeries;
use crate::error::{Error, Result};

pub const BOOTSTRAP_RESAMPLES: usize = 10_000;

/// A point estimate with a 95% interval that always brackets it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

/// First eight bytes of SHA-256 of `key`, so every cell has its own stream
/// no matter which worker computes it.
pub fn key_seed(key: &str) -> u64 {
    let h = Sha256::digest(key.as_bytes());
    u64::from_le_bytes(h[..8].try_into().expect("8 bytes"))
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean with a seeded percentile-bootstrap 95% interval.
pub fn bootstrap_mean(values: &[f64], key: &str, resamples: usize) -> Result<Estimate> {
    stratified_bootstrap_mean(&[values], key, resamples)
}

/// Unweighted mean of the per-stratum means, with an interval from
/// resampling inside each stratum. Large strata do not outweigh small ones,
/// and a single stratum gives exactly [`bootstrap_mean`].
pub fn stratified_bootstrap_mean(strata: &[&[f64]], key: &str, resamples: usize) -> Result<Estimate> {
    if strata.is_empty() || strata.iter().any(|s| s.is_empty()) {
        return Err(Error::Empty("bootstrap sample"));
    }
    let k = strata.len() as f64;
    let value = strata.iter().map(|s| s.iter().sum::<f64>() / s.len() as f64).sum::<f64>() / k;
    if resamples == 0 {
        return Ok(Estimate { value, lo: value, hi: value });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(key_seed(key));
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            strata
                .iter()
                .map(|s| {
                    let n = s.len();
                    (0..n).map(|_| s[rng.gen_range(0..n)]).sum::<f64>() / n as f64
                })
                .sum::<f64>()
                / k
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    Ok(Estimate {
        value,
        lo: percentile(&stats, 0.025).min(value),
        hi: percentile(&stats, 0.975).max(value),
    })
}

/// One evaluated cell: scaled scores plus the per-image proxy values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellData {
    pub id: String,
    pub metric: String,
    pub attack: String,
    pub dataset: String,
    pub variant: String,
    /// Min-max scaled, index-aligned.
    pub series: ScoreSeries,
    pub ssim: Vec<f64>,
    pub psnr: Vec<f64>,
    pub mse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub level: String,
    pub metric: String,
    pub attack: String,
    pub dataset: String,
    pub variant: String,
    pub n: usize,
    pub abs_gain: Estimate,
    /// Unweighted mean of the constituent cells' abs gains.
    pub abs_gain_cell_mean: f64,
    pub rel_gain: Estimate,
    pub r_score: Option<Estimate>,
    pub r_excluded: usize,
    pub w_score: f64,
    pub e_score: f64,
    pub mean_ssim: f64,
    /// Mean over finite values; `None` when every image was untouched.
    pub mean_psnr: Option<f64>,
    pub mean_mse: f64,
    pub constituents: Vec<String>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Summarizes one or more cells by pooling their score pairs. Gains and
/// R-score get bootstrap intervals; W and E are computed on the pooled
/// sample, not averaged. `labels` are metric, attack, dataset and variant.
pub fn summarize(
    cells: &[&CellData],
    level: &str,
    labels: [&str; 4],
    resamples: usize,
) -> Result<RobustnessRow> {
    summarize_strata(&[cells.to_vec()], level, labels, resamples)
}

struct Stratum {
    pooled: ScoreSeries,
    abs: Vec<f64>,
    rel: Vec<f64>,
    r: Vec<f64>,
    r_excluded: usize,
    ssim: Vec<f64>,
    psnr: Vec<f64>,
    mse: Vec<f64>,
}

fn pool(cells: &[&CellData]) -> Result<Stratum> {
    let mut pooled = ScoreSeries::new("", "", "", Vec::new(), Vec::new())?;
    let (mut ssim, mut psnr, mut mse) = (Vec::new(), Vec::new(), Vec::new());
    for c in cells {
        pooled.before.extend(&c.series.before);
        pooled.after.extend(&c.series.after);
        ssim.extend(&c.ssim);
        psnr.extend(c.psnr.iter().filter(|v| v.is_finite()));
        mse.extend(&c.mse);
    }
    if pooled.is_empty() {
        return Err(Error::Empty("pooled score series"));
    }
    let (r, _, _) = r_terms(&pooled);
    Ok(Stratum {
        abs: abs_terms(&pooled),
        rel: rel_terms(&pooled),
        r_excluded: pooled.len() - r.len(),
        r,
        pooled,
        ssim,
        psnr,
        mse,
    })
}

/// Summarizes groups of cells with every group weighted equally: each
/// measure is the mean of the per-group pooled values, and intervals come
/// from resampling inside each group. One group is plain pooling.
pub fn summarize_strata(
    strata: &[Vec<&CellData>],
    level: &str,
    labels: [&str; 4],
    resamples: usize,
) -> Result<RobustnessRow> {
    if strata.is_empty() || strata.iter().any(|s| s.is_empty()) {
        return Err(Error::Empty("cell list"));
    }
    let mut ids: Vec<String> = strata.iter().flatten().map(|c| c.id.clone()).collect();
    ids.sort();
    let key = ids.join("|");
    let groups = strata.iter().map(|s| pool(s)).collect::<Result<Vec<_>>>()?;
    let slices = |f: fn(&Stratum) -> &Vec<f64>| groups.iter().map(f).map(Vec::as_slice).collect::<Vec<&[f64]>>();
    let r: Vec<&[f64]> = groups.iter().filter(|g| !g.r.is_empty()).map(|g| g.r.as_slice()).collect();
    let psnr: Vec<f64> = groups.iter().filter(|g| !g.psnr.is_empty()).map(|g| mean(&g.psnr)).collect();
    let cell_means: Vec<f64> = strata.iter().flatten().map(|c| mean(&abs_terms(&c.series))).collect();
    let across = |f: &dyn Fn(&Stratum) -> f64| groups.iter().map(f).sum::<f64>() / groups.len() as f64;
    Ok(RobustnessRow {
        level: level.to_string(),
        metric: labels[0].to_string(),
        attack: labels[1].to_string(),
        dataset: labels[2].to_string(),
        variant: labels[3].to_string(),
        n: groups.iter().map(|g| g.pooled.len()).sum(),
        abs_gain: stratified_bootstrap_mean(&slices(|g| &g.abs), &format!("{key}#abs"), resamples)?,
        abs_gain_cell_mean: mean(&cell_means),
        rel_gain: stratified_bootstrap_mean(&slices(|g| &g.rel), &format!("{key}#rel"), resamples)?,
        r_score: if r.is_empty() {
            None
        } else {
            Some(stratified_bootstrap_mean(&r, &format!("{key}#r"), resamples)?)
        },
        r_excluded: groups.iter().map(|g| g.r_excluded).sum(),
        w_score: across(&|g| w_score(&g.pooled)),
        e_score: across(&|g| e_score(&g.pooled)),
        mean_ssim: across(&|g| mean(&g.ssim)),
        mean_psnr: (!psnr.is_empty()).then(|| mean(&psnr)),
        mean_mse: across(&|g| mean(&g.mse)),
        constituents: ids,
    })
}
