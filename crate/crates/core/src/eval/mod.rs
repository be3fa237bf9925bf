//! Robustness measures: min-max scaling, quantile transport between metric
//! domains, gains, the robustness score, the signed Wasserstein and
//! energy-distance scores, the one-sided Wilcoxon test and bootstrap
//! aggregation.

mod aggregate;
mod measures;
mod scaling;
mod transport;
mod wilcoxon;

pub use aggregate::{bootstrap_mean, key_seed, stratified_bootstrap_mean, summarize, summarize_strata, CellData, Estimate, RobustnessRow, BOOTSTRAP_RESAMPLES};
pub use measures::{abs_terms, e_score, energy_distance, gains, r_score, r_terms, rel_terms, w_score, wasserstein1, Gains, RScore, R_DELTA_MIN};
pub use scaling::{minmax_scale, ScalingParams, ScoreSeries, SCALE_GRID};
pub use transport::{apply_transport, fit_transport, TransportMap};
pub use wilcoxon::{wilcoxon_one_sided, WilcoxonResult, EXACT_MAX_N};
