//! The job matrix: calibration, perturbation training, attack cells, resume.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use robench::attacks::{provider_for, run_attack, run_uap_attack, train_uap, AttackSpec, Perturbation};
use robench::metrics::{build_metric, MetricModel};
use serde::Serialize;

use crate::config::{ResolvedConfig, Role, Variant, SCHEMA_VERSION};
use crate::dataset::{check_leakage, ingest, save_png, ImageSet, Item};
use crate::error::{exit, HarnessError, PathContext, Result};
use crate::layout::{file_sha256, sha256_hex, CellKey, CellResults, ItemResult, RunDir, RunManifest, UapKey};
use crate::ledger::{write_atomic, Environment, Ledger, LedgerFile, Status};

/// Restricts which jobs a run touches. Empty fields match everything.
#[derive(Debug, Clone, Default)]
pub struct JobFilter {
    pub metric: Option<String>,
    pub attack: Option<String>,
    /// Test dataset of attack cells.
    pub dataset: Option<String>,
    /// Training dataset of perturbation jobs.
    pub trainset: Option<String>,
    /// Only train perturbations; run no attack cells.
    pub uap_only: bool,
}

impl JobFilter {
    fn matches(field: &Option<String>, v: &str) -> bool {
        field.as_deref().is_none_or(|f| f == v)
    }

    fn cell(&self, c: &CellKey) -> bool {
        !self.uap_only
            && Self::matches(&self.metric, &c.metric)
            && Self::matches(&self.attack, &c.attack)
            && Self::matches(&self.dataset, &c.dataset)
    }

    fn uap(&self, u: &UapKey) -> bool {
        Self::matches(&self.metric, &u.metric)
            && Self::matches(&self.attack, &u.attack)
            && Self::matches(&self.trainset, &u.trainset)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Stop after this many newly computed jobs (perturbations and cells).
    pub max_jobs: Option<usize>,
    pub filter: JobFilter,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub key: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub config_digest: String,
    pub output_dir: String,
    pub jobs: usize,
    pub done: usize,
    pub failed: usize,
    pub pending: usize,
    /// Jobs computed by this invocation (the rest were resumed).
    pub computed: usize,
    pub failures: Vec<Failure>,
}

impl RunSummary {
    /// 0 when every selected job is done, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.failed == 0 && self.pending == 0 {
            exit::SUCCESS
        } else {
            exit::PARTIAL
        }
    }
}

type Shared<T> = std::result::Result<Arc<T>, String>;

struct Context<'a> {
    cfg: &'a ResolvedConfig,
    dir: RunDir,
    ledger: Ledger,
    datasets: BTreeMap<String, Shared<ImageSet>>,
    metrics: BTreeMap<String, Shared<MetricModel>>,
}

fn fingerprint(parts: &[&str]) -> String {
    sha256_hex(parts.join("\n").as_bytes())
}

/// A job is done when its latest event is `done` for the same fingerprint
/// and its output file still has the recorded digest.
fn is_done(snapshot: &LedgerFile, key: &str, fp: &str, output: &std::path::Path) -> bool {
    let latest = snapshot.latest();
    let Some(e) = latest.get(key) else { return false };
    e.status == Status::Done
        && e.fingerprint == fp
        && e.output_digest.is_some()
        && file_sha256(output).as_ref() == e.output_digest.as_ref()
}

/// Ingests every dataset, checks for train/test leakage and writes the run
/// manifest. Used by `validate-config` as well as by runs.
pub fn load_datasets(cfg: &ResolvedConfig) -> Result<BTreeMap<String, Shared<ImageSet>>> {
    let loaded: Vec<(String, Shared<ImageSet>)> = cfg
        .config
        .datasets
        .par_iter()
        .map(|d| {
            let r = ingest(&d.id, d.kind, d.role, &cfg.dataset_path(d)).map(Arc::new).map_err(|e| e.to_string());
            (d.id.clone(), r)
        })
        .collect();
    let ok: Vec<&ImageSet> = loaded.iter().filter_map(|(_, r)| r.as_deref().ok()).collect();
    check_leakage(&ok)?;
    Ok(loaded.into_iter().collect())
}

fn prepare_metric(cfg: &ResolvedConfig, idx: usize, datasets: &BTreeMap<String, Shared<ImageSet>>) -> Shared<MetricModel> {
    let entry = &cfg.config.metrics[idx];
    let mut m = build_metric(&entry.name, entry.input_policy).map_err(|e| e.to_string())?;
    if let Some(w) = cfg.weights_path(entry) {
        m.load_weights(&w).map_err(|e| format!("loading weights {}: {e}", w.display()))?;
    }
    let mut calib = Vec::new();
    for d in cfg.datasets_with_role(Role::Calibration) {
        match &datasets[&d.id] {
            Ok(set) => calib.extend(set.frames()),
            Err(e) => return Err(format!("calibration dataset `{}` unavailable: {e}", d.id)),
        }
    }
    let (lo, hi) = m.calibrate_range(&calib).map_err(|e| e.to_string())?;
    info!("{}: calibrated score range [{lo}, {hi}] on {} images", entry.name, calib.len());
    Ok(Arc::new(m))
}

/// Runs (or resumes) the job matrix described by `cfg`.
pub fn run_matrix(cfg: &ResolvedConfig, opts: &RunOptions) -> Result<RunSummary> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| HarnessError::RunDir(format!("worker pool: {e}")))?;
    pool.install(|| run_in_pool(cfg, opts))
}

fn run_in_pool(cfg: &ResolvedConfig, opts: &RunOptions) -> Result<RunSummary> {
    let dir = RunDir::new(&cfg.output_dir);
    std::fs::create_dir_all(&dir.root).at(&dir.root)?;
    let ledger = Ledger::open(&dir.ledger(), &cfg.digest, Environment::current(cfg.workers))?;
    let manifest = RunManifest::new(cfg);
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    write_atomic(&dir.manifest(), &bytes)?;
    info!("config digest {}", cfg.digest);

    let datasets = load_datasets(cfg)?;
    for (id, r) in &datasets {
        match r {
            Ok(s) => info!("dataset {id}: {} items", s.len()),
            Err(e) => warn!("{e}"),
        }
    }
    let metrics: BTreeMap<String, Shared<MetricModel>> = (0..cfg.config.metrics.len())
        .into_par_iter()
        .map(|i| (cfg.config.metrics[i].name.clone(), prepare_metric(cfg, i, &datasets)))
        .collect();
    let ctx = Context {
        cfg,
        dir,
        ledger,
        datasets,
        metrics,
    };

    let cells: Vec<CellKey> = manifest.cells.iter().filter(|c| opts.filter.cell(c)).cloned().collect();
    let uaps: Vec<UapKey> = manifest
        .uap_jobs()
        .into_iter()
        .filter(|u| {
            if opts.filter.uap_only {
                opts.filter.uap(u)
            } else {
                cells.iter().any(|c| uap_for_cell(&manifest, c).as_ref() == Some(u))
            }
        })
        .collect();

    let mut budget = opts.max_jobs.unwrap_or(usize::MAX);
    let mut computed = 0;

    let snapshot = ctx.ledger.snapshot();
    let pending_uaps: Vec<&UapKey> = uaps
        .iter()
        .filter(|u| !is_done(&snapshot, &u.ledger_key(), &uap_fingerprint(&ctx, u), &ctx.dir.uap_file(u)))
        .take(budget)
        .collect();
    budget -= pending_uaps.len();
    computed += pending_uaps.len();
    pending_uaps.par_iter().for_each(|u| train_job(&ctx, u));

    let snapshot = ctx.ledger.snapshot();
    let mut pending_cells = Vec::new();
    for c in &cells {
        let uap = uap_for_cell(&manifest, c);
        let dep = match &uap {
            Some(u) => match dependency_digest(&snapshot, &ctx, u) {
                Some(d) => Some(d),
                // Perturbation not trained yet (job budget) or failed.
                None => {
                    if snapshot.latest().get(u.ledger_key().as_str()).is_some_and(|e| e.status == Status::Failed)
                        && budget > 0
                    {
                        pending_cells.push((c, None, uap.clone()));
                        budget -= 1;
                    }
                    continue;
                }
            },
            None => None,
        };
        let fp = cell_fingerprint(&ctx, c, dep.as_deref());
        if !is_done(&snapshot, &c.ledger_key(), &fp, &ctx.dir.cell_results(c)) && budget > 0 {
            pending_cells.push((c, dep, uap.clone()));
            budget -= 1;
        }
    }
    computed += pending_cells.len();
    pending_cells
        .par_iter()
        .for_each(|(c, dep, uap)| cell_job(&ctx, c, dep.as_deref(), uap.as_ref()));

    let snapshot = ctx.ledger.snapshot();
    let latest = snapshot.latest();
    let mut summary = RunSummary {
        config_digest: cfg.digest.clone(),
        output_dir: ctx.dir.root.display().to_string(),
        jobs: uaps.len() + cells.len(),
        done: 0,
        failed: 0,
        pending: 0,
        computed,
        failures: Vec::new(),
    };
    let keys = uaps.iter().map(|u| u.ledger_key()).chain(cells.iter().map(|c| c.ledger_key()));
    for key in keys {
        match latest.get(key.as_str()) {
            Some(e) if e.status == Status::Done => summary.done += 1,
            Some(e) => {
                summary.failed += 1;
                summary.failures.push(Failure {
                    key,
                    reason: e.reason.clone().unwrap_or_default(),
                });
            }
            None => summary.pending += 1,
        }
    }
    // A done event can be stale if its output was deleted; count it pending.
    let stale = stale_count(&ctx, &uaps, &cells, &snapshot);
    summary.done -= stale;
    summary.pending += stale;
    info!(
        "{} jobs: {} done, {} failed, {} pending ({} computed now)",
        summary.jobs, summary.done, summary.failed, summary.pending, summary.computed
    );
    Ok(summary)
}

fn stale_count(ctx: &Context, uaps: &[UapKey], cells: &[CellKey], snapshot: &LedgerFile) -> usize {
    let latest = snapshot.latest();
    let stale = |key: String, path: std::path::PathBuf| {
        latest
            .get(key.as_str())
            .is_some_and(|e| e.status == Status::Done && file_sha256(&path) != e.output_digest)
    };
    uaps.iter().filter(|u| stale(u.ledger_key(), ctx.dir.uap_file(u))).count()
        + cells.iter().filter(|c| stale(c.ledger_key(), ctx.dir.cell_results(c))).count()
}

fn uap_for_cell(manifest: &RunManifest, c: &CellKey) -> Option<UapKey> {
    match manifest.variant(c)? {
        Variant::Uap { trainset, amplitude } => Some(UapKey {
            metric: c.metric.clone(),
            attack: c.attack.clone(),
            kind: c.kind,
            trainset: trainset.clone(),
            amplitude: *amplitude,
        }),
        _ => None,
    }
}

fn dataset_digest(ctx: &Context, id: &str) -> String {
    match &ctx.datasets[id] {
        Ok(s) => s.digest.clone(),
        Err(e) => format!("unavailable: {e}"),
    }
}

fn uap_fingerprint(ctx: &Context, u: &UapKey) -> String {
    fingerprint(&[&ctx.cfg.digest, &u.ledger_key(), &dataset_digest(ctx, &u.trainset)])
}

fn cell_fingerprint(ctx: &Context, c: &CellKey, dep: Option<&str>) -> String {
    fingerprint(&[&ctx.cfg.digest, &c.ledger_key(), &dataset_digest(ctx, &c.dataset), dep.unwrap_or("")])
}

/// Output digest of a finished perturbation job, if it is done and intact.
fn dependency_digest(snapshot: &LedgerFile, ctx: &Context, u: &UapKey) -> Option<String> {
    let fp = uap_fingerprint(ctx, u);
    let path = ctx.dir.uap_file(u);
    is_done(snapshot, &u.ledger_key(), &fp, &path).then(|| file_sha256(&path)).flatten()
}

fn record(ctx: &Context, key: &str, fp: &str, started: Instant, outcome: std::result::Result<String, String>) {
    let seconds = started.elapsed().as_secs_f64();
    let (status, reason, digest) = match outcome {
        Ok(d) => (Status::Done, None, Some(d)),
        Err(e) => {
            warn!("{key} failed: {e}");
            (Status::Failed, Some(e), None)
        }
    };
    if let Err(e) = ctx.ledger.append(key, status, reason, fp, digest, seconds) {
        warn!("could not record {key} in the ledger: {e}");
    }
}

fn train_job(ctx: &Context, u: &UapKey) {
    let started = Instant::now();
    let fp = uap_fingerprint(ctx, u);
    let outcome = (|| -> std::result::Result<String, String> {
        let metric = ctx.metrics[&u.metric].clone()?;
        let set = ctx.datasets[&u.trainset].clone()?;
        let plan = ctx.cfg.plan(&u.attack).ok_or("attack plan vanished")?;
        let mut spec = plan.spec.clone();
        spec.amplitude = u.amplitude;
        let p = train_uap(&metric, &set.frames(), &u.trainset, &spec).map_err(|e| e.to_string())?;
        let path = ctx.dir.uap_file(u);
        std::fs::create_dir_all(path.parent().expect("uap file has a parent")).map_err(|e| e.to_string())?;
        p.save(&path).map_err(|e| e.to_string())?;
        info!("trained {} ({:.2}s)", u.id(), started.elapsed().as_secs_f64());
        file_sha256(&path).ok_or_else(|| "perturbation file vanished".to_string())
    })();
    record(ctx, &u.ledger_key(), &fp, started, outcome);
}

fn cell_job(ctx: &Context, c: &CellKey, dep: Option<&str>, uap: Option<&UapKey>) {
    let started = Instant::now();
    let fp = cell_fingerprint(ctx, c, dep);
    let outcome = (|| -> std::result::Result<String, String> {
        if let (Some(u), None) = (uap, dep) {
            return Err(format!("perturbation {} is unavailable", u.id()));
        }
        let metric = ctx.metrics[&c.metric].clone()?;
        let set = ctx.datasets[&c.dataset].clone()?;
        let plan = ctx.cfg.plan(&c.attack).ok_or("attack plan vanished")?;
        let variant = plan
            .variants
            .iter()
            .find(|v| v.name() == c.variant)
            .ok_or("variant vanished")?;
        let spec = plan.spec_for(variant);
        let perturbation = match uap {
            Some(u) => Some(Perturbation::load(&ctx.dir.uap_file(u)).map_err(|e| e.to_string())?),
            None => None,
        };
        let results = attack_cell(ctx, c, &metric, &set, &spec, perturbation.as_ref(), dep)?;
        let path = ctx.dir.cell_results(c);
        std::fs::create_dir_all(path.parent().expect("cell file has a parent")).map_err(|e| e.to_string())?;
        let mut bytes = serde_json::to_vec_pretty(&results).map_err(|e| e.to_string())?;
        bytes.push(b'\n');
        write_atomic(&path, &bytes).map_err(|e| e.to_string())?;
        info!("cell {} ({:.2}s)", c.id(), started.elapsed().as_secs_f64());
        Ok(sha256_hex(&bytes))
    })();
    record(ctx, &c.ledger_key(), &fp, started, outcome);
}

fn attack_cell(
    ctx: &Context,
    c: &CellKey,
    metric: &MetricModel,
    set: &ImageSet,
    spec: &AttackSpec,
    perturbation: Option<&Perturbation>,
    dep: Option<&str>,
) -> std::result::Result<CellResults, String> {
    let provider = if perturbation.is_none() {
        Some(provider_for(spec).map_err(|e| e.to_string())?)
    } else {
        None
    };
    let persist = ctx.cfg.config.run.persist_images.then(|| ctx.dir.cell_dir(c).join("images"));
    let items: Vec<std::result::Result<ItemResult, String>> = set
        .items
        .par_iter()
        .map(|item| {
            let r = attack_item(metric, item, spec, perturbation, provider.as_deref(), persist.as_deref());
            r.map_err(|e| format!("{}: {e}", item.name))
        })
        .collect();
    let items = items.into_iter().collect::<std::result::Result<Vec<_>, _>>()?;
    let range = metric
        .declared_range()
        .ok_or_else(|| format!("metric `{}` is uncalibrated", c.metric))?;
    Ok(CellResults {
        schema_version: SCHEMA_VERSION,
        config_digest: ctx.cfg.digest.clone(),
        cell: c.clone(),
        spec_digest: spec.digest(),
        spec: spec.clone(),
        range,
        dataset_digest: set.digest.clone(),
        perturbation_digest: dep.map(str::to_string),
        items,
    })
}

fn attack_item(
    metric: &MetricModel,
    item: &Item,
    spec: &AttackSpec,
    perturbation: Option<&Perturbation>,
    provider: Option<&dyn robench::attacks::EpsilonProvider>,
    persist: Option<&std::path::Path>,
) -> Result<ItemResult> {
    let mut frames = Vec::with_capacity(item.frames.len());
    for (i, (frame, fid)) in item.frames.iter().zip(&item.frame_ids).enumerate() {
        let out = match (perturbation, provider) {
            (Some(p), _) => run_uap_attack(metric, fid, frame, p, spec)?,
            (None, Some(prov)) => run_attack(metric, fid, frame, spec, prov)?,
            (None, None) => unreachable!("either a perturbation or a provider is set"),
        };
        if let Some(dir) = persist {
            std::fs::create_dir_all(dir).at(dir)?;
            let name = if item.frames.len() == 1 {
                format!("{}.png", item.name)
            } else {
                format!("{}_{i:05}.png", item.name)
            };
            save_png(&out.image, &dir.join(name))?;
        }
        frames.push(out.result);
    }
    let n = frames.len() as f64;
    let mean = |f: &dyn Fn(&robench::attacks::AttackResult) -> f64| frames.iter().map(f).sum::<f64>() / n;
    let mse = mean(&|r| r.proxy.mse);
    let mut flags: Vec<_> = frames.iter().flat_map(|r| r.flags.iter().copied()).collect();
    flags.sort();
    flags.dedup();
    Ok(ItemResult {
        id: item.id.clone(),
        name: item.name.clone(),
        score_before: mean(&|r| r.score_before),
        score_after: mean(&|r| r.score_after),
        mse,
        psnr: (mse > 0.0).then(|| -10.0 * mse.log10()),
        ssim: mean(&|r| r.proxy.ssim),
        linf: frames.iter().map(|r| r.linf).fold(0.0, f64::max),
        flags,
        frames,
    })
}
