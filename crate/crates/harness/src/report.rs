//! Evaluation of persisted results and report generation.
//!
//! Files written to the report directory:
//! - `cells.csv`: one row per (metric, attack, dataset, variant) cell.
//! - `attacks.csv`: per (metric, attack), pooled over datasets and variants.
//! - `table3.csv`: metrics by attacks, each entry the energy-distance score.
//! - `table4.csv`: per metric, every attack weighted equally, with intervals.
//! - `curves.csv`: robustness against SSIM, one point per cell.
//! - `wilcoxon.csv`: pairwise one-sided tests on per-cell absolute gains.
//! - `uap_nesting.csv`: UAP measures under both averaging orders.
//! - `transport.csv`: scores in the transport target's domain, when configured.
//! - `report.json`: all of the above plus provenance.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use robench::attacks::Flag;
use robench::eval::{
    apply_transport, fit_transport, minmax_scale, summarize, summarize_strata, wilcoxon_one_sided, CellData,
    Estimate, RobustnessRow, ScoreSeries,
};
use robench::Error as CoreError;
use serde::Serialize;

use crate::config::{Variant, SCHEMA_VERSION};
use crate::error::{HarnessError, PathContext, Result};
use crate::layout::{CellKey, CellResults, RunDir, RunManifest};
use crate::ledger::write_atomic;

/// One cell loaded from disk with its scaled series.
#[derive(Debug, Clone)]
pub struct EvaluatedCell {
    pub key: CellKey,
    pub data: CellData,
    pub raw: ScoreSeries,
    pub flags: BTreeMap<Flag, usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Skipped {
    pub cell: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub manifest: RunManifest,
    pub cells: Vec<EvaluatedCell>,
    /// Cells with no results, or results that cannot be scored.
    pub skipped: Vec<Skipped>,
}

impl Evaluation {
    pub fn complete(&self) -> bool {
        self.skipped.is_empty()
    }
}

fn to_cell_data(key: &CellKey, results: &CellResults) -> std::result::Result<(CellData, ScoreSeries), CoreError> {
    let before: Vec<f64> = results.items.iter().map(|i| i.score_before).collect();
    let after: Vec<f64> = results.items.iter().map(|i| i.score_after).collect();
    let raw = ScoreSeries::new(&key.metric, &key.dataset, &key.attack, before, after)?;
    let (scaled, _) = minmax_scale(&raw)?;
    let data = CellData {
        id: key.id(),
        metric: key.metric.clone(),
        attack: key.attack.clone(),
        dataset: key.dataset.clone(),
        variant: key.variant.clone(),
        series: scaled,
        ssim: results.items.iter().map(|i| i.ssim).collect(),
        psnr: results.items.iter().map(|i| i.psnr.unwrap_or(f64::INFINITY)).collect(),
        mse: results.items.iter().map(|i| i.mse).collect(),
    };
    Ok((data, raw))
}

/// Loads every cell listed in the run manifest and min-max scales it.
pub fn evaluate(run_dir: &Path) -> Result<Evaluation> {
    let dir = RunDir::new(run_dir);
    let manifest = dir.read_manifest()?;
    let mut cells = Vec::new();
    let mut skipped = Vec::new();
    for key in &manifest.cells {
        let Some(results) = dir.read_cell(key)? else {
            skipped.push(Skipped {
                cell: key.id(),
                reason: "no results".into(),
            });
            continue;
        };
        if results.config_digest != manifest.config_digest {
            return Err(HarnessError::RunDir(format!(
                "{} was written for config {}, the run is {}",
                key.id(),
                results.config_digest,
                manifest.config_digest
            )));
        }
        match to_cell_data(key, &results) {
            Ok((data, raw)) => {
                let mut flags = BTreeMap::new();
                for item in &results.items {
                    for f in &item.flags {
                        *flags.entry(*f).or_insert(0) += 1;
                    }
                }
                cells.push(EvaluatedCell {
                    key: key.clone(),
                    data,
                    raw,
                    flags,
                });
            }
            Err(e) => skipped.push(Skipped {
                cell: key.id(),
                reason: e.to_string(),
            }),
        }
    }
    Ok(Evaluation {
        manifest,
        cells,
        skipped,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Row {
    #[serde(flatten)]
    pub row: RobustnessRow,
    /// Every cell the row should cover was evaluated.
    pub complete: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairTest {
    pub metric_a: String,
    pub metric_b: String,
    pub n: usize,
    pub statistic: Option<f64>,
    /// P(W+ <= observed) under the null; small values say `metric_a` gains
    /// less than `metric_b`, i.e. is more robust.
    pub p_value: Option<f64>,
    pub exact: Option<bool>,
    pub note: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct NestingRow {
    pub metric: String,
    pub attack: String,
    /// `by-trainset`: pool amplitudes within each training set, then average
    /// over training sets. `by-amplitude`: the other way round.
    pub order: String,
    pub groups: usize,
    pub abs_gain: f64,
    pub rel_gain: f64,
    pub r_score: Option<f64>,
    pub w_score: f64,
    pub e_score: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransportRow {
    pub metric: String,
    pub attack: String,
    pub target: String,
    pub abs_gain: f64,
    pub w_score: f64,
    pub e_score: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub config_digest: String,
    pub complete: bool,
    pub skipped: Vec<Skipped>,
    pub cells: Vec<Row>,
    pub attacks: Vec<Row>,
    pub metrics: Vec<Row>,
    pub wilcoxon: Vec<PairTest>,
    pub uap_nesting: Vec<NestingRow>,
    pub transport: Vec<TransportRow>,
}

fn labels<'a>(metric: &'a str, attack: &'a str, dataset: &'a str, variant: &'a str) -> [&'a str; 4] {
    [metric, attack, dataset, variant]
}

/// Builds every report table from an evaluation.
pub fn build_report(ev: &Evaluation) -> Result<Report> {
    let m = &ev.manifest;
    let resamples = m.bootstrap_resamples;
    let missing = |pred: &dyn Fn(&CellKey) -> bool| {
        m.cells
            .iter()
            .filter(|k| pred(k))
            .any(|k| !ev.cells.iter().any(|c| &c.key == k))
    };

    let mut cells = Vec::new();
    for c in &ev.cells {
        let k = &c.key;
        let row = summarize(&[&c.data], "cell", labels(&k.metric, &k.attack, &k.dataset, &k.variant), resamples)?;
        cells.push(Row { row, complete: true });
    }

    let mut attacks = Vec::new();
    let mut metrics = Vec::new();
    for metric in &m.metrics {
        let mut strata = Vec::new();
        for plan in &m.plans {
            let group: Vec<&CellData> = ev
                .cells
                .iter()
                .filter(|c| &c.key.metric == metric && c.key.attack == plan.label)
                .map(|c| &c.data)
                .collect();
            if group.is_empty() {
                continue;
            }
            let row = summarize(&group, "attack", labels(metric, &plan.label, "*", "*"), resamples)?;
            let complete = !missing(&|k| &k.metric == metric && k.attack == plan.label);
            attacks.push(Row { row, complete });
            strata.push(group);
        }
        if strata.is_empty() {
            continue;
        }
        let row = summarize_strata(&strata, "metric", labels(metric, "*", "*", "*"), resamples)?;
        let complete = !missing(&|k| &k.metric == metric);
        metrics.push(Row { row, complete });
    }

    Ok(Report {
        schema_version: SCHEMA_VERSION,
        config_digest: m.config_digest.clone(),
        complete: ev.complete(),
        skipped: ev.skipped.clone(),
        cells,
        attacks,
        metrics,
        wilcoxon: wilcoxon_matrix(ev),
        uap_nesting: uap_nesting(ev)?,
        transport: transport_rows(ev)?,
    })
}

fn cell_gain(c: &EvaluatedCell) -> f64 {
    let s = &c.data.series;
    s.after.iter().zip(&s.before).map(|(a, b)| a - b).sum::<f64>() / s.len() as f64
}

fn wilcoxon_matrix(ev: &Evaluation) -> Vec<PairTest> {
    let by_metric = |metric: &str| -> BTreeMap<(String, String, String), f64> {
        ev.cells
            .iter()
            .filter(|c| c.key.metric == metric)
            .map(|c| ((c.key.attack.clone(), c.key.dataset.clone(), c.key.variant.clone()), cell_gain(c)))
            .collect()
    };
    let mut out = Vec::new();
    for a in &ev.manifest.metrics {
        for b in &ev.manifest.metrics {
            if a == b {
                continue;
            }
            let (ga, gb) = (by_metric(a), by_metric(b));
            let (xa, xb): (Vec<f64>, Vec<f64>) = ga.iter().filter_map(|(k, v)| gb.get(k).map(|w| (*v, *w))).unzip();
            let mut t = PairTest {
                metric_a: a.clone(),
                metric_b: b.clone(),
                n: xa.len(),
                statistic: None,
                p_value: None,
                exact: None,
                note: String::new(),
            };
            if xa.is_empty() {
                t.note = "no paired cells".into();
            } else {
                match wilcoxon_one_sided(&xa, &xb) {
                    Ok(r) => {
                        t.n = r.n;
                        t.statistic = Some(r.statistic);
                        t.p_value = Some(r.p_value);
                        t.exact = Some(r.exact);
                    }
                    Err(e) => t.note = e.to_string(),
                }
            }
            out.push(t);
        }
    }
    out
}

fn uap_nesting(ev: &Evaluation) -> Result<Vec<NestingRow>> {
    let m = &ev.manifest;
    let mut out = Vec::new();
    for metric in &m.metrics {
        for plan in m.plans.iter().filter(|p| p.spec.kind.is_uap()) {
            let cells: Vec<(&EvaluatedCell, &Variant)> = ev
                .cells
                .iter()
                .filter(|c| &c.key.metric == metric && c.key.attack == plan.label)
                .filter_map(|c| m.variant(&c.key).map(|v| (c, v)))
                .collect();
            if cells.is_empty() {
                continue;
            }
            for order in ["by-trainset", "by-amplitude"] {
                let mut groups: BTreeMap<String, Vec<&CellData>> = BTreeMap::new();
                for (c, v) in &cells {
                    if let Variant::Uap { trainset, amplitude } = v {
                        let g = if order == "by-trainset" {
                            trainset.clone()
                        } else {
                            format!("{amplitude}")
                        };
                        groups.entry(g).or_default().push(&c.data);
                    }
                }
                let strata: Vec<Vec<&CellData>> = groups.into_values().collect();
                let row = summarize_strata(&strata, order, labels(metric, &plan.label, "*", "*"), 0)?;
                out.push(NestingRow {
                    metric: metric.clone(),
                    attack: plan.label.clone(),
                    order: order.into(),
                    groups: strata.len(),
                    abs_gain: row.abs_gain.value,
                    rel_gain: row.rel_gain.value,
                    r_score: row.r_score.map(|e| e.value),
                    w_score: row.w_score,
                    e_score: row.e_score,
                });
            }
        }
    }
    Ok(out)
}

/// Maps each metric's scaled scores onto the target metric's clean-score
/// distribution (per test dataset) and recomputes the pooled measures.
fn transport_rows(ev: &Evaluation) -> Result<Vec<TransportRow>> {
    let m = &ev.manifest;
    let Some(target) = &m.transport_target else {
        return Ok(Vec::new());
    };
    let clean = |metric: &str, dataset: &str| {
        ev.cells
            .iter()
            .find(|c| c.key.metric == metric && c.key.dataset == dataset)
            .map(|c| c.data.series.before.clone())
    };
    let mut out = Vec::new();
    for metric in &m.metrics {
        for plan in &m.plans {
            let mut pooled = CellData {
                id: format!("{metric}/{}", plan.label),
                metric: metric.clone(),
                attack: plan.label.clone(),
                dataset: String::new(),
                variant: String::new(),
                series: ScoreSeries::new(metric, "", &plan.label, Vec::new(), Vec::new())?,
                ssim: Vec::new(),
                psnr: Vec::new(),
                mse: Vec::new(),
            };
            for c in ev.cells.iter().filter(|c| &c.key.metric == metric && c.key.attack == plan.label) {
                let (Some(src), Some(tgt)) = (clean(metric, &c.key.dataset), clean(target, &c.key.dataset)) else {
                    continue;
                };
                let map = fit_transport(&src, &tgt, m.transport_grid)?;
                pooled.series.before.extend(apply_transport(&map, &c.data.series.before));
                pooled.series.after.extend(apply_transport(&map, &c.data.series.after));
                pooled.ssim.extend(&c.data.ssim);
                pooled.psnr.extend(&c.data.psnr);
                pooled.mse.extend(&c.data.mse);
            }
            if pooled.series.is_empty() {
                continue;
            }
            let row = summarize(&[&pooled], "transport", labels(metric, &plan.label, "*", "*"), 0)?;
            out.push(TransportRow {
                metric: metric.clone(),
                attack: plan.label.clone(),
                target: target.clone(),
                abs_gain: row.abs_gain.value,
                w_score: row.w_score,
                e_score: row.e_score,
            });
        }
    }
    Ok(out)
}

/// Fixed six-decimal rendering with negative zero folded to zero.
pub fn num(v: f64) -> String {
    let s = format!("{v:.6}");
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn est(e: &Estimate) -> [String; 3] {
    [num(e.value), num(e.lo), num(e.hi)]
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))
}

const MEASURE_HEADER: [&str; 17] = [
    "n",
    "abs_gain",
    "abs_gain_lo",
    "abs_gain_hi",
    "rel_gain",
    "rel_gain_lo",
    "rel_gain_hi",
    "r_score",
    "r_score_lo",
    "r_score_hi",
    "r_excluded",
    "w_score",
    "e_score",
    "mean_ssim",
    "mean_psnr",
    "mean_mse",
    "complete",
];

fn measure_fields(r: &Row) -> Vec<String> {
    let row = &r.row;
    let mut v = vec![row.n.to_string()];
    v.extend(est(&row.abs_gain));
    v.extend(est(&row.rel_gain));
    match &row.r_score {
        Some(e) => v.extend(est(e)),
        None => v.extend([String::new(), String::new(), String::new()]),
    }
    v.push(row.r_excluded.to_string());
    v.push(num(row.w_score));
    v.push(num(row.e_score));
    v.push(num(row.mean_ssim));
    v.push(opt(row.mean_psnr));
    v.push(num(row.mean_mse));
    v.push(r.complete.to_string());
    v
}

fn with_measures(prefix: &[&str]) -> Vec<String> {
    prefix.iter().chain(MEASURE_HEADER.iter()).map(|s| s.to_string()).collect()
}

/// Renders every report file in memory, keyed by file name.
pub fn render(report: &Report, ev: &Evaluation) -> Result<BTreeMap<String, Vec<u8>>> {
    let m = &ev.manifest;
    let mut files = BTreeMap::new();

    let flag_count = |key: &str, f: Flag| {
        ev.cells
            .iter()
            .find(|c| c.key.id() == key)
            .and_then(|c| c.flags.get(&f).copied())
            .unwrap_or(0)
            .to_string()
    };
    let mut header = with_measures(&["metric", "attack", "dataset", "variant"]);
    header.extend(["noop", "non_converged", "degenerate"].map(String::from));
    let rows: Vec<Vec<String>> = report
        .cells
        .iter()
        .map(|r| {
            let id = format!("{}/{}/{}/{}", r.row.metric, r.row.attack, r.row.dataset, r.row.variant);
            let mut v = vec![r.row.metric.clone(), r.row.attack.clone(), r.row.dataset.clone(), r.row.variant.clone()];
            v.extend(measure_fields(r));
            v.push(flag_count(&id, Flag::NoOp));
            v.push(flag_count(&id, Flag::NonConverged));
            v.push(flag_count(&id, Flag::Degenerate));
            v
        })
        .collect();
    files.insert("cells.csv".into(), csv_bytes(&header.iter().map(String::as_str).collect::<Vec<_>>(), &rows)?);

    let header = with_measures(&["metric", "attack"]);
    let rows: Vec<Vec<String>> = report
        .attacks
        .iter()
        .map(|r| {
            let mut v = vec![r.row.metric.clone(), r.row.attack.clone()];
            v.extend(measure_fields(r));
            v
        })
        .collect();
    files.insert("attacks.csv".into(), csv_bytes(&header.iter().map(String::as_str).collect::<Vec<_>>(), &rows)?);

    let mut header = vec!["metric".to_string()];
    header.extend(m.plans.iter().map(|p| p.label.clone()));
    header.push("complete".into());
    let rows: Vec<Vec<String>> = m
        .metrics
        .iter()
        .map(|metric| {
            let mut v = vec![metric.clone()];
            let mut complete = true;
            for p in &m.plans {
                match report.attacks.iter().find(|r| &r.row.metric == metric && r.row.attack == p.label) {
                    Some(r) => {
                        v.push(num(r.row.e_score));
                        complete &= r.complete;
                    }
                    None => {
                        v.push(String::new());
                        complete = false;
                    }
                }
            }
            v.push(complete.to_string());
            v
        })
        .collect();
    files.insert("table3.csv".into(), csv_bytes(&header.iter().map(String::as_str).collect::<Vec<_>>(), &rows)?);

    let header = with_measures(&["metric"]);
    let rows: Vec<Vec<String>> = report
        .metrics
        .iter()
        .map(|r| {
            let mut v = vec![r.row.metric.clone()];
            v.extend(measure_fields(r));
            v
        })
        .collect();
    files.insert("table4.csv".into(), csv_bytes(&header.iter().map(String::as_str).collect::<Vec<_>>(), &rows)?);

    let header = ["metric", "attack", "dataset", "variant", "parameter", "mean_ssim", "r_score", "abs_gain", "e_score"];
    let rows: Vec<Vec<String>> = report
        .cells
        .iter()
        .map(|r| {
            let key = ev.cells.iter().find(|c| c.data.id == r.row.constituents[0]).map(|c| &c.key);
            let parameter = key.and_then(|k| m.variant(k)).map(|v| match v {
                Variant::Base => String::new(),
                Variant::Epsilon { epsilon } => num(*epsilon),
                Variant::Uap { amplitude, .. } => num(*amplitude),
            });
            vec![
                r.row.metric.clone(),
                r.row.attack.clone(),
                r.row.dataset.clone(),
                r.row.variant.clone(),
                parameter.unwrap_or_default(),
                num(r.row.mean_ssim),
                opt(r.row.r_score.map(|e| e.value)),
                num(r.row.abs_gain.value),
                num(r.row.e_score),
            ]
        })
        .collect();
    files.insert("curves.csv".into(), csv_bytes(&header, &rows)?);

    let header = ["metric_a", "metric_b", "n", "statistic", "p_value", "exact", "note"];
    let rows: Vec<Vec<String>> = report
        .wilcoxon
        .iter()
        .map(|t| {
            vec![
                t.metric_a.clone(),
                t.metric_b.clone(),
                t.n.to_string(),
                opt(t.statistic),
                t.p_value.map(|p| format!("{p:.6e}")).unwrap_or_default(),
                t.exact.map(|e| e.to_string()).unwrap_or_default(),
                t.note.clone(),
            ]
        })
        .collect();
    files.insert("wilcoxon.csv".into(), csv_bytes(&header, &rows)?);

    let header = ["metric", "attack", "order", "groups", "abs_gain", "rel_gain", "r_score", "w_score", "e_score"];
    let rows: Vec<Vec<String>> = report
        .uap_nesting
        .iter()
        .map(|n| {
            vec![
                n.metric.clone(),
                n.attack.clone(),
                n.order.clone(),
                n.groups.to_string(),
                num(n.abs_gain),
                num(n.rel_gain),
                opt(n.r_score),
                num(n.w_score),
                num(n.e_score),
            ]
        })
        .collect();
    files.insert("uap_nesting.csv".into(), csv_bytes(&header, &rows)?);

    if m.transport_target.is_some() {
        let header = ["metric", "attack", "target", "abs_gain", "w_score", "e_score"];
        let rows: Vec<Vec<String>> = report
            .transport
            .iter()
            .map(|t| {
                vec![
                    t.metric.clone(),
                    t.attack.clone(),
                    t.target.clone(),
                    num(t.abs_gain),
                    num(t.w_score),
                    num(t.e_score),
                ]
            })
            .collect();
        files.insert("transport.csv".into(), csv_bytes(&header, &rows)?);
    }

    let mut json = serde_json::to_vec_pretty(report)?;
    json.push(b'\n');
    files.insert("report.json".into(), json);
    Ok(files)
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportSummary {
    pub config_digest: String,
    pub complete: bool,
    pub cells: usize,
    pub skipped: usize,
    pub out_dir: String,
    pub files: Vec<String>,
}

/// Evaluates a run directory and writes the report files into `out_dir`
/// (default: `<run>/report`).
pub fn write_report(run_dir: &Path, out_dir: Option<&Path>) -> Result<ReportSummary> {
    let ev = evaluate(run_dir)?;
    if ev.cells.is_empty() {
        return Err(HarnessError::RunDir(format!("{} has no evaluated cells", run_dir.display())));
    }
    let report = build_report(&ev)?;
    let files = render(&report, &ev)?;
    let out: PathBuf = out_dir.map(Path::to_path_buf).unwrap_or_else(|| RunDir::new(run_dir).report_dir());
    std::fs::create_dir_all(&out).at(&out)?;
    for (name, bytes) in &files {
        write_atomic(&out.join(name), bytes)?;
    }
    Ok(ReportSummary {
        config_digest: ev.manifest.config_digest.clone(),
        complete: ev.complete(),
        cells: ev.cells.len(),
        skipped: ev.skipped.len(),
        out_dir: out.display().to_string(),
        files: files.keys().cloned().collect(),
    })
}
