//! Grid orchestration: dataset generation, (dataset × variant) training cells
//! and evaluation. Cells are the unit of parallelism and of resumption; every
//! file a cell writes is a pure function of the config and the master seed.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use ceme_core::data::Dataset;
use ceme_core::eval::{evaluate as evaluate_model, MetricReport};
use ceme_core::gpdata::dataset_bundle;
use ceme_core::scm::{FittedModel, Variant};
use ceme_core::semisynth::{build_benchmark, stand_in_table};
use ceme_core::vi::{fit_variant, select_best, RunRecord};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::io::{fmt_f64, fmt_opt, read_dataset, read_json, read_raw_table, write_csv, write_dataset, write_json};
use crate::layout::{CellRecord, CellStatus, DatasetManifest, RestartSummary, RunDir, TruthFile};
use crate::seeds::{derive_seed, Purpose};

/// Usage mistakes (bad filters, bad flags); mapped to exit status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// One dataset of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub id: String,
    pub noise_level: f64,
    /// Known up front for synthetic grids only.
    pub n_train: Option<usize>,
    pub replicate: usize,
}

pub fn synthetic_id(noise: f64, n_train: usize, replicate: usize) -> String {
    format!("syn_L{noise}_n{n_train}_r{replicate:03}")
}

pub fn semisynthetic_id(rho: f64) -> String {
    format!("semi_rho{rho}")
}

/// Every dataset of the configured grid, in canonical order.
pub fn dataset_entries(cfg: &ExperimentConfig) -> Vec<DatasetEntry> {
    match cfg.kind {
        ExperimentKind::Synthetic => {
            let g = &cfg.synthetic;
            let mut out = Vec::new();
            for &l in &g.noise_levels {
                for &n in &g.n_train {
                    for r in 0..g.replicates {
                        out.push(DatasetEntry {
                            id: synthetic_id(l, n, r),
                            noise_level: l,
                            n_train: Some(n),
                            replicate: r,
                        });
                    }
                }
            }
            out
        }
        ExperimentKind::Semisynthetic => cfg
            .semisynthetic
            .pipeline
            .noise_levels
            .iter()
            .map(|&rho| DatasetEntry { id: semisynthetic_id(rho), noise_level: rho, n_train: None, replicate: 0 })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum FilterKey {
    Dataset,
    Variant,
    NoiseLevel,
    NTrain,
    Replicate,
}

/// `--filter key=value` selections. Values of one key are alternatives;
/// different keys must all match.
#[derive(Debug, Clone, Default)]
pub struct Filters {
    by_key: BTreeMap<FilterKey, Vec<String>>,
}

impl Filters {
    pub fn parse<S: AsRef<str>>(items: &[S]) -> Result<Self, UsageError> {
        let mut f = Filters::default();
        for item in items {
            let item = item.as_ref();
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| UsageError(format!("filter `{item}` is not key=value")))?;
            let key = match k.trim() {
                "dataset" => FilterKey::Dataset,
                "variant" => FilterKey::Variant,
                "noise_level" => FilterKey::NoiseLevel,
                "n_train" => FilterKey::NTrain,
                "replicate" => FilterKey::Replicate,
                other => {
                    return Err(UsageError(format!(
                        "unknown filter key `{other}` (dataset, variant, noise_level, n_train, replicate)"
                    )))
                }
            };
            let v = v.trim().to_string();
            let ok = match key {
                FilterKey::Dataset => !v.is_empty(),
                FilterKey::Variant => Variant::from_str(&v).is_ok(),
                FilterKey::NoiseLevel => v.parse::<f64>().is_ok(),
                FilterKey::NTrain | FilterKey::Replicate => v.parse::<usize>().is_ok(),
            };
            if !ok {
                return Err(UsageError(format!("bad value in filter `{item}`")));
            }
            f.by_key.entry(key).or_default().push(v);
        }
        Ok(f)
    }

    fn any(&self, key: FilterKey, pred: impl Fn(&str) -> bool) -> bool {
        self.by_key.get(&key).is_none_or(|vs| vs.iter().any(|v| pred(v)))
    }

    pub fn dataset_matches(&self, e: &DatasetEntry) -> bool {
        self.any(FilterKey::Dataset, |v| v == e.id)
            && self.any(FilterKey::NoiseLevel, |v| v.parse::<f64>().is_ok_and(|l| l == e.noise_level))
            && self.any(FilterKey::NTrain, |v| v.parse::<usize>().ok() == e.n_train)
            && self.any(FilterKey::Replicate, |v| v.parse::<usize>().is_ok_and(|r| r == e.replicate))
    }

    pub fn variant_matches(&self, variant: Variant) -> bool {
        self.any(FilterKey::Variant, |v| Variant::from_str(v).is_ok_and(|x| x == variant))
    }
}

/// A (dataset, variant) pair.
#[derive(Debug, Clone)]
pub struct Cell {
    pub entry: DatasetEntry,
    pub variant: Variant,
}

fn all_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for e in dataset_entries(cfg) {
        for &v in &cfg.variants {
            out.push(Cell { entry: e.clone(), variant: v });
        }
    }
    out
}

pub fn cells(cfg: &ExperimentConfig, filters: &Filters) -> Vec<Cell> {
    all_cells(cfg)
        .into_iter()
        .filter(|c| filters.dataset_matches(&c.entry) && filters.variant_matches(c.variant))
        .collect()
}

/// Run-level manifest written at the root of the run directory.
#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    master_seed: u64,
    seed_rule: &'static str,
    config: &'a ExperimentConfig,
}

fn write_run_manifest(cfg: &ExperimentConfig, dir: &RunDir) -> Result<()> {
    write_json(
        &dir.manifest(),
        &RunManifest {
            tool: "ceme",
            version: env!("CARGO_PKG_VERSION"),
            master_seed: cfg.master_seed,
            seed_rule: "sha256(\"ceme-seed/v1\" | master | dataset | variant | restart | purpose)[0..8] LE",
            config: cfg,
        },
    )
}

fn with_pool<T: Send>(cfg: &ExperimentConfig, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.worker_count())
        .build()
        .context("building worker pool")?;
    Ok(pool.install(f))
}

fn write_dataset_dir(
    dir: &RunDir,
    manifest: &DatasetManifest,
    splits: [&Dataset; 3],
    truth: &TruthFile,
) -> Result<()> {
    let id = &manifest.id;
    for (name, d) in ["train", "val", "test"].into_iter().zip(splits) {
        write_dataset(&dir.split(id, name), d)?;
    }
    write_json(&dir.truth(id), truth)?;
    write_json(&dir.dataset_manifest(id), manifest)
}

/// Materializes every selected dataset. Returns the number written.
pub fn generate(cfg: &ExperimentConfig, dir: &RunDir, filters: &Filters) -> Result<usize> {
    write_run_manifest(cfg, dir)?;
    let entries: Vec<_> = dataset_entries(cfg).into_iter().filter(|e| filters.dataset_matches(e)).collect();
    match cfg.kind {
        ExperimentKind::Synthetic => {
            let g = &cfg.synthetic;
            let results: Vec<Result<()>> = with_pool(cfg, || {
                entries
                    .par_iter()
                    .map(|e| {
                        let n = e.n_train.expect("synthetic entries know n_train");
                        let seed = derive_seed(cfg.master_seed, &e.id, "", 0, Purpose::Data);
                        let b = dataset_bundle(n, g.n_val, g.n_test, e.noise_level, &g.generator, seed)
                            .with_context(|| format!("generating {}", e.id))?;
                        let manifest = DatasetManifest {
                            id: e.id.clone(),
                            noise_level: e.noise_level,
                            replicate: e.replicate,
                            seed,
                            n_train: b.train.len(),
                            n_val: b.val.len(),
                            n_test: b.test.len(),
                            tau: b.truth.tau,
                            sigma: b.truth.sigma,
                            rows_dropped: None,
                        };
                        write_dataset_dir(dir, &manifest, [&b.train, &b.val, &b.test], &TruthFile::Synthetic(b.truth))?;
                        info!("generated {}", e.id);
                        Ok(())
                    })
                    .collect()
            })?;
            results.into_iter().collect::<Result<Vec<()>>>()?;
        }
        ExperimentKind::Semisynthetic => {
            if entries.is_empty() {
                return Ok(0);
            }
            let src = &cfg.semisynthetic;
            let raw = match &src.table {
                Some(path) => read_raw_table(path)?,
                None => stand_in_table(
                    src.stand_in_rows,
                    src.stand_in_missing,
                    derive_seed(cfg.master_seed, "stand_in", "", 0, Purpose::Data),
                ),
            };
            let seed = derive_seed(cfg.master_seed, "semisynthetic", "", 0, Purpose::Data);
            let bench = with_pool(cfg, || build_benchmark(&raw, &src.column_spec(), &src.pipeline, seed))??;
            info!(
                "semisynthetic table: {} rows kept, {} dropped; outcome noise SD {}",
                bench.spec.rows, bench.spec.rows_dropped, bench.outcome.delta_y_sd
            );
            for level in &bench.levels {
                let id = semisynthetic_id(level.rho);
                if !entries.iter().any(|e| e.id == id) {
                    continue;
                }
                let manifest = DatasetManifest {
                    id: id.clone(),
                    noise_level: level.rho,
                    replicate: 0,
                    seed,
                    n_train: level.train.len(),
                    n_val: level.val.len(),
                    n_test: level.test.len(),
                    tau: level.truth.tau,
                    sigma: level.truth.delta_y_sd,
                    rows_dropped: Some(bench.spec.rows_dropped),
                };
                write_dataset_dir(
                    dir,
                    &manifest,
                    [&level.train, &level.val, &level.test],
                    &TruthFile::Semisynthetic(level.truth.clone()),
                )?;
                info!("generated {id}");
            }
        }
    }
    Ok(entries.len())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainSummary {
    pub trained: usize,
    pub resumed: usize,
    pub skipped: usize,
    pub failed: usize,
}

fn skip_reason(cell: &Cell) -> Option<String> {
    (cell.variant == Variant::CemePlus && cell.entry.noise_level == 0.0)
        .then(|| "CEME+ needs a positive known noise scale; this dataset has none".to_string())
}

fn load_restart(dir: &RunDir, cell: &Cell, r: usize) -> Option<RunRecord> {
    let id = &cell.entry.id;
    let (rec, model) = (dir.restart_record(id, cell.variant, r), dir.restart_model(id, cell.variant, r));
    if !(RunDir::exists(&rec) && RunDir::exists(&model)) {
        return None;
    }
    read_json(&rec).ok()
}

fn train_cell(cfg: &ExperimentConfig, dir: &RunDir, cell: &Cell) -> Result<(CellStatus, bool)> {
    let id = &cell.entry.id;
    let v = cell.variant;
    let marker = dir.cell(id, v);
    if RunDir::exists(&marker) {
        let done: CellRecord = read_json(&marker)?;
        return Ok((done.status, true));
    }
    let mut record = CellRecord {
        dataset_id: id.clone(),
        variant: v,
        status: CellStatus::Skipped,
        reason: None,
        chosen_restart: None,
        seed: None,
        restarts: Vec::new(),
    };
    if let Some(reason) = skip_reason(cell) {
        record.reason = Some(reason);
        write_json(&marker, &record)?;
        return Ok((CellStatus::Skipped, false));
    }
    let manifest: DatasetManifest =
        read_json(&dir.dataset_manifest(id)).with_context(|| format!("dataset {id} has not been generated"))?;
    let train = read_dataset(&dir.split(id, "train"))?;
    let val = read_dataset(&dir.split(id, "val"))?;
    let tcfg = cfg.train_config(v, manifest.n_train);
    let mut records = Vec::with_capacity(tcfg.restarts);
    for r in 0..tcfg.restarts {
        let rec = match load_restart(dir, cell, r) {
            Some(rec) => rec,
            None => {
                let seed = derive_seed(cfg.master_seed, id, v.as_str(), r, Purpose::Train);
                let started = Instant::now();
                let (model, mut rec) = fit_variant(v, &train, &val, Some(manifest.tau), &tcfg, seed, &mut |_| {})
                    .with_context(|| format!("{id}/{v} restart {r}"))?;
                rec.checkpoint = Some(format!("restart_{r}.model.json"));
                info!(
                    "{id}/{v} restart {r}: {} epochs, best score {}, {:?}{} in {:.1}s",
                    rec.history.len(),
                    rec.best_val_score,
                    rec.stop_reason,
                    if rec.failed { " (failed)" } else { "" },
                    started.elapsed().as_secs_f64()
                );
                write_json(&dir.restart_model(id, v, r), &model)?;
                write_json(&dir.restart_record(id, v, r), &rec)?;
                rec
            }
        };
        record.restarts.push(RestartSummary {
            restart: r,
            seed: rec.seed,
            failed: rec.failed,
            best_val_score: rec.best_val_score.is_finite().then_some(rec.best_val_score),
            epochs: rec.history.len(),
        });
        records.push(rec);
    }
    match select_best(&records) {
        Ok(best) => {
            record.status = CellStatus::Ok;
            record.chosen_restart = Some(best);
            record.seed = Some(records[best].seed);
        }
        Err(e) => {
            record.status = CellStatus::Failed;
            record.reason = Some(e.to_string());
        }
    }
    write_json(&marker, &record)?;
    Ok((record.status, false))
}

/// Trains every selected cell, skipping those already marked complete.
pub fn train(cfg: &ExperimentConfig, dir: &RunDir, filters: &Filters) -> Result<TrainSummary> {
    write_run_manifest(cfg, dir)?;
    let selected = cells(cfg, filters);
    let outcomes: Vec<Result<(CellStatus, bool)>> =
        with_pool(cfg, || selected.par_iter().map(|c| train_cell(cfg, dir, c)).collect())?;
    let mut s = TrainSummary::default();
    for (cell, out) in selected.iter().zip(outcomes) {
        match out {
            Ok((_, true)) => s.resumed += 1,
            Ok((CellStatus::Ok, false)) => s.trained += 1,
            Ok((CellStatus::Skipped, false)) => s.skipped += 1,
            Ok((CellStatus::Failed, false)) => s.failed += 1,
            Err(e) => {
                // Recorded so that evaluation reports it as a failure row.
                warn!("{}/{}: {e:#}", cell.entry.id, cell.variant);
                let record = CellRecord {
                    dataset_id: cell.entry.id.clone(),
                    variant: cell.variant,
                    status: CellStatus::Failed,
                    reason: Some(format!("{e:#}")),
                    chosen_restart: None,
                    seed: None,
                    restarts: Vec::new(),
                };
                write_json(&dir.cell(&cell.entry.id, cell.variant), &record)?;
                s.failed += 1;
            }
        }
    }
    Ok(s)
}

/// Per-cell evaluation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub dataset_id: String,
    pub noise_level: f64,
    pub n_train: usize,
    pub replicate: usize,
    /// Training seed of the chosen restart.
    pub seed: u64,
    pub chosen_restart: usize,
    pub eval_seed: u64,
    pub report: MetricReport,
}

/// One row of `aggregate.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub dataset_id: String,
    pub noise_level: f64,
    pub n_train: usize,
    pub variant: Variant,
    pub rmse: f64,
    pub rel_err_sigma: f64,
    pub rel_err_tau: Option<f64>,
    pub aid: f64,
    pub seed: u64,
}

pub const AGGREGATE_HEADER: [&str; 9] =
    ["dataset_id", "noise_level", "n_train", "variant", "rmse", "rel_err_sigma", "rel_err_tau", "aid", "seed"];

/// One row of `failures.csv`: a cell with no metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureRow {
    pub dataset_id: String,
    pub noise_level: f64,
    pub variant: Variant,
    pub status: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultsTable {
    pub rows: Vec<AggregateRow>,
    pub failures: Vec<FailureRow>,
}

fn evaluate_cell(cfg: &ExperimentConfig, dir: &RunDir, cell: &Cell) -> Result<()> {
    let id = &cell.entry.id;
    let v = cell.variant;
    let out = dir.report(id, v);
    if RunDir::exists(&out) {
        return Ok(());
    }
    let marker = dir.cell(id, v);
    if !RunDir::exists(&marker) {
        return Ok(());
    }
    let done: CellRecord = read_json(&marker)?;
    let (Some(chosen), Some(seed)) = (done.chosen_restart, done.seed) else {
        return Ok(());
    };
    let manifest: DatasetManifest = read_json(&dir.dataset_manifest(id))?;
    let model: FittedModel = read_json(&dir.restart_model(id, v, chosen))
        .with_context(|| format!("checkpoint of {id}/{v} restart {chosen}"))?;
    let truth: TruthFile = read_json(&dir.truth(id))?;
    let test = read_dataset(&dir.split(id, "test"))?;
    // Shared by every variant of the dataset: same x* draws, same y offsets.
    let eval_seed = derive_seed(cfg.master_seed, id, "", 0, Purpose::Eval);
    let started = Instant::now();
    let (report, preds) = evaluate_model(&model, truth.as_truth(), &test, &cfg.eval, eval_seed)?;
    info!("{id}/{v}: rmse {} aid {} ({:.1}s)", report.rmse_mu_y, report.aid, started.elapsed().as_secs_f64());
    let rows: Vec<Vec<String>> = preds
        .model
        .iter()
        .zip(&preds.truth)
        .enumerate()
        .map(|(i, (m, t))| vec![i.to_string(), fmt_f64(*m), fmt_f64(*t)])
        .collect();
    write_csv(&dir.predictions(id, v), &["row", "mu_y_model", "mu_y_truth"], &rows)?;
    write_json(
        &out,
        &CellResult {
            dataset_id: id.clone(),
            noise_level: manifest.noise_level,
            n_train: manifest.n_train,
            replicate: manifest.replicate,
            seed,
            chosen_restart: chosen,
            eval_seed,
            report,
        },
    )
}

/// Collects per-cell results of the whole grid; every cell yields exactly one
/// success row or one failure row.
pub fn collect_results(cfg: &ExperimentConfig, dir: &RunDir) -> Result<ResultsTable> {
    let mut t = ResultsTable::default();
    for cell in all_cells(cfg) {
        let id = &cell.entry.id;
        let v = cell.variant;
        let fail = |status: &str, reason: String| FailureRow {
            dataset_id: id.clone(),
            noise_level: cell.entry.noise_level,
            variant: v,
            status: status.to_string(),
            reason,
        };
        let marker = dir.cell(id, v);
        if !RunDir::exists(&marker) {
            t.failures.push(fail("missing", "not trained".into()));
            continue;
        }
        let done: CellRecord = read_json(&marker)?;
        match done.status {
            CellStatus::Skipped => {
                t.failures.push(fail("skipped", done.reason.unwrap_or_default()));
                continue;
            }
            CellStatus::Failed => {
                t.failures.push(fail("failed", done.reason.unwrap_or_default()));
                continue;
            }
            CellStatus::Ok => {}
        }
        let path = dir.report(id, v);
        if !RunDir::exists(&path) {
            t.failures.push(fail("missing", "not evaluated".into()));
            continue;
        }
        let r: CellResult = read_json(&path)?;
        t.rows.push(AggregateRow {
            dataset_id: r.dataset_id,
            noise_level: r.noise_level,
            n_train: r.n_train,
            variant: r.report.variant,
            rmse: r.report.rmse_mu_y,
            rel_err_sigma: r.report.rel_err_sigma,
            rel_err_tau: r.report.rel_err_tau,
            aid: r.report.aid,
            seed: r.seed,
        });
    }
    Ok(t)
}

fn aggregate_record(r: &AggregateRow) -> Vec<String> {
    vec![
        r.dataset_id.clone(),
        fmt_f64(r.noise_level),
        r.n_train.to_string(),
        r.variant.as_str().to_string(),
        fmt_f64(r.rmse),
        fmt_f64(r.rel_err_sigma),
        fmt_opt(r.rel_err_tau),
        fmt_f64(r.aid),
        r.seed.to_string(),
    ]
}

/// Plot data: one file per metric, long format, grouped by noise level and
/// training size so each (metric, noise level, n_train) panel is a filter.
fn write_plot_data(dir: &RunDir, t: &ResultsTable) -> Result<()> {
    type Get = fn(&AggregateRow) -> Option<f64>;
    let metrics: [(&str, Get); 4] = [
        ("rmse", |r| Some(r.rmse)),
        ("aid", |r| Some(r.aid)),
        ("rel_err_sigma", |r| Some(r.rel_err_sigma)),
        ("rel_err_tau", |r| r.rel_err_tau),
    ];
    for (name, get) in metrics {
        let mut rows: Vec<&AggregateRow> = t.rows.iter().filter(|r| get(r).is_some()).collect();
        rows.sort_by(|a, b| {
            a.noise_level
                .total_cmp(&b.noise_level)
                .then(a.n_train.cmp(&b.n_train))
                .then(a.variant.cmp(&b.variant))
                .then(a.dataset_id.cmp(&b.dataset_id))
        });
        let out: Vec<Vec<String>> = rows
            .into_iter()
            .map(|r| {
                vec![
                    fmt_f64(r.noise_level),
                    r.n_train.to_string(),
                    r.variant.as_str().to_string(),
                    r.dataset_id.clone(),
                    fmt_f64(get(r).expect("filtered above")),
                ]
            })
            .collect();
        write_csv(&dir.plot(name), &["noise_level", "n_train", "variant", "dataset_id", name], &out)?;
    }
    Ok(())
}

pub fn write_results(dir: &RunDir, t: &ResultsTable) -> Result<()> {
    let rows: Vec<Vec<String>> = t.rows.iter().map(aggregate_record).collect();
    write_csv(&dir.aggregate(), &AGGREGATE_HEADER, &rows)?;
    let failures: Vec<Vec<String>> = t
        .failures
        .iter()
        .map(|f| {
            vec![f.dataset_id.clone(), fmt_f64(f.noise_level), f.variant.as_str().to_string(), f.status.clone(), f.reason.clone()]
        })
        .collect();
    write_csv(&dir.failures(), &["dataset_id", "noise_level", "variant", "status", "reason"], &failures)?;
    write_plot_data(dir, t)
}

/// Evaluates every selected cell that has a chosen run, then rebuilds the
/// aggregate tables of the whole grid.
pub fn evaluate(cfg: &ExperimentConfig, dir: &RunDir, filters: &Filters) -> Result<ResultsTable> {
    write_run_manifest(cfg, dir)?;
    let selected = cells(cfg, filters);
    let outcomes: Vec<Result<()>> =
        with_pool(cfg, || selected.par_iter().map(|c| evaluate_cell(cfg, dir, c)).collect())?;
    for (cell, out) in selected.iter().zip(outcomes) {
        if let Err(e) = out {
            // Turns the cell into a failure row instead of aborting the grid.
            warn!("{}/{}: evaluation failed: {e:#}", cell.entry.id, cell.variant);
            let marker = dir.cell(&cell.entry.id, cell.variant);
            let mut record: CellRecord = read_json(&marker)?;
            record.status = CellStatus::Failed;
            record.reason = Some(format!("evaluation failed: {e:#}"));
            write_json(&marker, &record)?;
        }
    }
    let t = collect_results(cfg, dir)?;
    write_results(dir, &t)?;
    Ok(t)
}

/// Reads `aggregate.csv` back.
pub fn read_aggregate(dir: &RunDir) -> Result<Vec<AggregateRow>> {
    let path = dir.aggregate();
    let mut rdr = csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != AGGREGATE_HEADER {
        bail!("{} has an unexpected header", path.display());
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| anyhow!("bad number `{s}`: {e}"));
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            Ok(AggregateRow {
                dataset_id: rec[0].to_string(),
                noise_level: num(&rec[1])?,
                n_train: rec[2].parse()?,
                variant: Variant::from_str(&rec[3]).map_err(|e| anyhow!("{e}"))?,
                rmse: num(&rec[4])?,
                rel_err_sigma: num(&rec[5])?,
                rel_err_tau: if rec[6].is_empty() { None } else { Some(num(&rec[6])?) },
                aid: num(&rec[7])?,
                seed: rec[8].parse()?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(text).unwrap()
    }

    #[test]
    fn grid_cardinality_and_ids() {
        let c = cfg("kind = \"synthetic\"\nmaster_seed = 1\n[synthetic]\nreplicates = 2");
        let e = dataset_entries(&c);
        assert_eq!(e.len(), 18);
        assert_eq!(e[0].id, "syn_L0.1_n1000_r000");
        assert_eq!(e[17].id, "syn_L0.4_n16000_r001");
        let full = cfg("kind = \"synthetic\"\nmaster_seed = 1");
        assert_eq!(dataset_entries(&full).len(), 1800);
        let semi = cfg("kind = \"semisynthetic\"\nmaster_seed = 1");
        let ids: Vec<_> = dataset_entries(&semi).into_iter().map(|e| e.id).collect();
        assert_eq!(ids, ["semi_rho0", "semi_rho0.2", "semi_rho0.4", "semi_rho0.6", "semi_rho0.8", "semi_rho1"]);
    }

    #[test]
    fn filters_select_cells() {
        let c = cfg("kind = \"synthetic\"\nmaster_seed = 1\n[synthetic]\nreplicates = 2");
        let f = Filters::parse(&["dataset=syn_L0.2_n4000_r001", "variant=naive"]).unwrap();
        let sel = cells(&c, &f);
        assert_eq!(sel.len(), 1);
        assert_eq!(sel[0].variant, Variant::Naive);
        let f = Filters::parse(&["noise_level=0.2", "noise_level=0.4", "n_train=1000", "variant=ceme+"]).unwrap();
        assert_eq!(cells(&c, &f).len(), 4);
        assert_eq!(cells(&c, &Filters::default()).len(), 72);
        for bad in ["dataset", "colour=red", "n_train=many", "variant=bayes"] {
            assert!(Filters::parse(&[bad]).is_err(), "{bad}");
        }
    }

    #[test]
    fn ceme_plus_skipped_only_without_noise() {
        let e = |l| DatasetEntry { id: "x".into(), noise_level: l, n_train: None, replicate: 0 };
        assert!(skip_reason(&Cell { entry: e(0.0), variant: Variant::CemePlus }).is_some());
        assert!(skip_reason(&Cell { entry: e(0.2), variant: Variant::CemePlus }).is_none());
        assert!(skip_reason(&Cell { entry: e(0.0), variant: Variant::Ceme }).is_none());
    }
}
