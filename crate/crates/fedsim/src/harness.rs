//! Experiment driver: sweep client counts, repeat with derived seeds,
//! aggregate across repetitions, and emit plot-ready CSV files plus a
//! manifest that replays the run bit for bit.
//!
//! Per (t, repetition): split train/test, z-score on the training fit,
//! deal the training rows to t clients, run a federation, record the
//! final round's test metrics. A centralized baseline trained with the
//! same hyperparameters joins the result set for comparison. All seeds
//! derive from the single base seed, so results are independent of
//! worker-thread scheduling.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    load_mhealth, make_synthetic, partition_clients, split_train_test, standardize_apply,
    standardize_fit, Dataset,
};
use crate::error::{Error, Result};
use crate::federation::{run_federation, FederationConfig};
use crate::metrics::{evaluate, MetricsReport};
use crate::nn::{init_model, train_local, LocalTrainConfig, Model, FORMAT_VERSION};
use crate::secagg::PRG_ID;
use crate::seeds::{derive_seed, tag, train_seed, SEED_DERIVATION_ID};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RAW_FILE: &str = "raw.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TREND_FILE: &str = "trend.csv";
pub const HISTORY_FILE: &str = "history.csv";
pub const MODELS_DIR: &str = "models";

/// Where the experiment's rows come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic {
        m: usize,
        n: usize,
        classes: usize,
        separation: f64,
    },
    Files {
        pattern: String,
        keep_null: bool,
    },
}

/// The full experiment description; everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub client_counts: Vec<usize>,
    pub repetitions: usize,
    pub test_fraction: f64,
    pub standardize: bool,
    pub include_baseline: bool,
    pub source: DataSource,
    /// Per-run copies override `t` and `seed`; the remaining fields apply
    /// to every run as given.
    pub base: FederationConfig,
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 1 {
            return Err(Error::InvalidInput("repetitions must be at least 1".into()));
        }
        if self.client_counts.is_empty() && !self.include_baseline {
            return Err(Error::InvalidInput(
                "grid has no client counts and no baseline; nothing to run".into(),
            ));
        }
        if self.client_counts.iter().any(|&t| t < 1) {
            return Err(Error::InvalidInput("client counts must be at least 1".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidInput(format!(
                "test fraction must be in (0, 1), got {}",
                self.test_fraction
            )));
        }
        self.base.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RunKind {
    Baseline,
    Federated,
}

impl fmt::Display for RunKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunKind::Baseline => "baseline",
            RunKind::Federated => "federated",
        })
    }
}

/// Per-round numbers kept for the history export.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundStat {
    pub round: usize,
    pub weight_delta: f64,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

/// One grid cell's outcome. A failed run keeps its seed coordinates and
/// the error text; it is excluded from aggregation but never dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub kind: RunKind,
    pub t: usize,
    pub rep: usize,
    /// Rounds actually executed; baselines have no rounds.
    pub rounds_run: Option<usize>,
    /// Final round's max-abs weight change; baselines have none.
    pub weight_delta: Option<f64>,
    pub metrics: Option<MetricsReport>,
    pub error: Option<String>,
    pub history: Vec<RoundStat>,
}

impl RunRow {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Aggregates over the ok repetitions of one (kind, t) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub kind: RunKind,
    pub t: usize,
    pub runs: usize,
    pub excluded_count: usize,
    /// (mean, population std) for accuracy, macro precision, macro
    /// recall, macro F1, in that order; None when every rep failed.
    pub stats: Option<[(f64, f64); 4]>,
}

pub const SUMMARY_METRICS: [&str; 4] =
    ["accuracy", "macro_precision", "macro_recall", "macro_f1"];

#[derive(Debug, Clone)]
pub struct GridResult {
    /// Canonical order: baselines first, then federated by (t, rep).
    pub rows: Vec<RunRow>,
    pub summaries: Vec<SummaryRow>,
    /// Final model of each successful run, keyed by its file stem.
    pub models: Vec<(String, Model)>,
}

impl GridResult {
    pub fn failed_count(&self) -> usize {
        self.rows.iter().filter(|r| !r.is_ok()).count()
    }
}

pub fn split_seed(base: u64, rep: usize) -> u64 {
    derive_seed(&[base, tag::SPLIT, rep as u64])
}

pub fn partition_seed(base: u64, t: usize, rep: usize) -> u64 {
    derive_seed(&[base, tag::PARTITION, t as u64, rep as u64])
}

pub fn federation_seed(base: u64, t: usize, rep: usize) -> u64 {
    derive_seed(&[base, tag::FEDERATION, t as u64, rep as u64])
}

fn resolve_pattern(pattern: &str) -> Result<Vec<PathBuf>> {
    let entries = glob::glob(pattern)
        .map_err(|e| Error::InvalidInput(format!("bad glob pattern {pattern:?}: {e}")))?;
    let mut paths = Vec::new();
    for entry in entries {
        match entry {
            Ok(path) => paths.push(path),
            Err(e) => {
                let path = e.path().display().to_string();
                return Err(Error::io(path, e.into()));
            }
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no files match pattern {pattern:?}"
        )));
    }
    Ok(paths)
}

/// Materialize the source dataset. File patterns resolve through the
/// filesystem; synthetic data is generated from the base seed.
pub fn load_source(source: &DataSource, base_seed: u64) -> Result<(Dataset, Vec<PathBuf>)> {
    match source {
        DataSource::Synthetic {
            m,
            n,
            classes,
            separation,
        } => Ok((make_synthetic(*m, *n, *classes, *separation, base_seed)?, Vec::new())),
        DataSource::Files { pattern, keep_null } => {
            let paths = resolve_pattern(pattern)?;
            Ok((load_mhealth(&paths, *keep_null)?, paths))
        }
    }
}

fn load_resolved(paths: &[PathBuf], keep_null: bool) -> Result<Dataset> {
    load_mhealth(paths, keep_null)
}

/// Split and (optionally) standardize for one repetition. The test side
/// uses the training fit, so no test statistics leak into training.
fn prepared_split(full: &Dataset, grid: &ExperimentGrid, rep: usize) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_train_test(full, grid.test_fraction, split_seed(grid.base.seed, rep))?;
    if !grid.standardize {
        return Ok((train, test));
    }
    let params = standardize_fit(&train);
    Ok((
        standardize_apply(&params, &train)?,
        standardize_apply(&params, &test)?,
    ))
}

/// Centralized reference training: one model, the whole training set, the
/// same initialization, hyperparameters, and seed derivation a
/// single-client federation round would use.
pub fn run_baseline(
    train: &Dataset,
    test: &Dataset,
    cfg: &FederationConfig,
) -> Result<(Model, MetricsReport)> {
    cfg.validate()?;
    let mut sizes = Vec::with_capacity(cfg.hidden_layers.len() + 2);
    sizes.push(train.features());
    sizes.extend_from_slice(&cfg.hidden_layers);
    sizes.push(train.class_count);
    let model = init_model(&sizes, cfg.seed)?;
    let trained = train_local(
        model,
        train,
        &LocalTrainConfig {
            epochs: cfg.local_epochs,
            batch_size: cfg.batch_size,
            learning_rate: cfg.learning_rate,
            seed: train_seed(cfg.seed, 1, 0),
        },
    )?;
    let report = evaluate(&trained, test)?;
    Ok((trained, report))
}

fn round_stats(history: &[crate::federation::RoundRecord]) -> Vec<RoundStat> {
    history
        .iter()
        .map(|r| RoundStat {
            round: r.round_index,
            weight_delta: r.weight_delta,
            accuracy: r.metrics.accuracy,
            macro_precision: r.metrics.macro_precision,
            macro_recall: r.metrics.macro_recall,
            macro_f1: r.metrics.macro_f1,
        })
        .collect()
}

fn failed_row(kind: RunKind, t: usize, rep: usize, err: Error) -> RunRow {
    RunRow {
        kind,
        t,
        rep,
        rounds_run: None,
        weight_delta: None,
        metrics: None,
        error: Some(err.to_string()),
        history: Vec::new(),
    }
}

fn run_federated_cell(
    full: &Dataset,
    grid: &ExperimentGrid,
    t: usize,
    rep: usize,
) -> (RunRow, Option<Model>) {
    let attempt = || -> Result<(RunRow, Model)> {
        let (train, test) = prepared_split(full, grid, rep)?;
        let clients = partition_clients(&train, t, partition_seed(grid.base.seed, t, rep))?;
        let cfg = FederationConfig {
            t,
            seed: federation_seed(grid.base.seed, t, rep),
            ..grid.base.clone()
        };
        let (model, history) = run_federation(&clients, &test, &cfg)?;
        let last = history.last().expect("at least one round");
        let row = RunRow {
            kind: RunKind::Federated,
            t,
            rep,
            rounds_run: Some(history.len()),
            weight_delta: Some(last.weight_delta),
            metrics: Some(last.metrics.clone()),
            error: None,
            history: round_stats(&history),
        };
        Ok((row, model))
    };
    match attempt() {
        Ok((row, model)) => (row, Some(model)),
        Err(e) => (failed_row(RunKind::Federated, t, rep, e), None),
    }
}

fn run_baseline_cell(full: &Dataset, grid: &ExperimentGrid, rep: usize) -> (RunRow, Option<Model>) {
    let attempt = || -> Result<(RunRow, Model)> {
        let (train, test) = prepared_split(full, grid, rep)?;
        // Train on the single-client shard (same rows, same dealt order)
        // so the baseline is bit-identical to a t=1, rounds=1 federation.
        let shard = partition_clients(&train, 1, partition_seed(grid.base.seed, 1, rep))?
            .pop()
            .expect("one client")
            .data;
        let cfg = FederationConfig {
            t: 1,
            seed: federation_seed(grid.base.seed, 1, rep),
            ..grid.base.clone()
        };
        let (model, report) = run_baseline(&shard, &test, &cfg)?;
        let row = RunRow {
            kind: RunKind::Baseline,
            t: 1,
            rep,
            rounds_run: None,
            weight_delta: None,
            metrics: Some(report),
            error: None,
            history: Vec::new(),
        };
        Ok((row, model))
    };
    match attempt() {
        Ok((row, model)) => (row, Some(model)),
        Err(e) => (failed_row(RunKind::Baseline, 1, rep, e), None),
    }
}

fn population_stats(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Group rows by (kind, t) and aggregate the ok repetitions.
pub fn summarize(rows: &[RunRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(RunKind, usize), Vec<&RunRow>> = BTreeMap::new();
    for row in rows {
        groups.entry((row.kind, row.t)).or_default().push(row);
    }
    groups
        .into_iter()
        .map(|((kind, t), members)| {
            let ok: Vec<&MetricsReport> =
                members.iter().filter_map(|r| r.metrics.as_ref()).collect();
            let stats = if ok.is_empty() {
                None
            } else {
                let col = |f: fn(&MetricsReport) -> f64| {
                    population_stats(&ok.iter().map(|m| f(m)).collect::<Vec<_>>())
                };
                Some([
                    col(|m| m.accuracy),
                    col(|m| m.macro_precision),
                    col(|m| m.macro_recall),
                    col(|m| m.macro_f1),
                ])
            };
            SummaryRow {
                kind,
                t,
                runs: ok.len(),
                excluded_count: members.len() - ok.len(),
                stats,
            }
        })
        .collect()
}

fn run_tasks(full: &Dataset, grid: &ExperimentGrid) -> GridResult {
    // Canonical task order; results come back in the same order however
    // the pool schedules them.
    let mut tasks: Vec<(RunKind, usize, usize)> = Vec::new();
    if grid.include_baseline {
        for rep in 0..grid.repetitions {
            tasks.push((RunKind::Baseline, 1, rep));
        }
    }
    for &t in &grid.client_counts {
        for rep in 0..grid.repetitions {
            tasks.push((RunKind::Federated, t, rep));
        }
    }

    let outcomes: Vec<(RunRow, Option<Model>)> = tasks
        .par_iter()
        .map(|&(kind, t, rep)| match kind {
            RunKind::Baseline => run_baseline_cell(full, grid, rep),
            RunKind::Federated => run_federated_cell(full, grid, t, rep),
        })
        .collect();

    let mut rows = Vec::with_capacity(outcomes.len());
    let mut models = Vec::new();
    for (row, model) in outcomes {
        if let Some(model) = model {
            let stem = match row.kind {
                RunKind::Baseline => format!("baseline_rep{}", row.rep),
                RunKind::Federated => format!("federated_t{}_rep{}", row.t, row.rep),
            };
            models.push((stem, model));
        }
        rows.push(row);
    }
    let summaries = summarize(&rows);
    GridResult {
        rows,
        summaries,
        models,
    }
}

/// Run the whole grid. The data source is resolved up front, so a bad
/// source aborts before any training; a single run's failure becomes a
/// failed row instead.
pub fn run_grid(grid: &ExperimentGrid) -> Result<GridResult> {
    Ok(run_grid_with_manifest(grid)?.0)
}

/// As [`run_grid`], also returning the manifest that replays this run,
/// with file sources pinned to the paths the glob resolved to.
pub fn run_grid_with_manifest(grid: &ExperimentGrid) -> Result<(GridResult, Manifest)> {
    grid.validate()?;
    let (full, resolved) = load_source(&grid.source, grid.base.seed)?;
    let manifest = Manifest::for_grid(grid, &resolved);
    Ok((run_tasks(&full, grid), manifest))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub crate_version: String,
    pub seed_derivation: String,
    pub prg_id: String,
    pub model_format_version: u32,
    pub grid: ExperimentGrid,
    /// Files the pattern matched at run time; a replay reads exactly
    /// these instead of re-globbing.
    pub resolved_files: Vec<String>,
}

impl Manifest {
    pub fn for_grid(grid: &ExperimentGrid, resolved: &[PathBuf]) -> Manifest {
        Manifest {
            manifest_version: MANIFEST_VERSION,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            seed_derivation: SEED_DERIVATION_ID.to_string(),
            prg_id: PRG_ID.to_string(),
            model_format_version: FORMAT_VERSION,
            grid: grid.clone(),
            resolved_files: resolved
                .iter()
                .map(|p| p.display().to_string())
                .collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Manifest> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.manifest_version != MANIFEST_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported manifest version {}",
                manifest.manifest_version
            )));
        }
        if manifest.seed_derivation != SEED_DERIVATION_ID {
            return Err(Error::InvalidInput(format!(
                "manifest used seed derivation {:?}, this build provides {SEED_DERIVATION_ID:?}",
                manifest.seed_derivation
            )));
        }
        if manifest.prg_id != PRG_ID {
            return Err(Error::InvalidInput(format!(
                "manifest used mask generator {:?}, this build provides {PRG_ID:?}",
                manifest.prg_id
            )));
        }
        Ok(manifest)
    }
}

/// Replay a manifest exactly: same grid, and for file sources the same
/// resolved file list rather than a fresh glob.
pub fn run_from_manifest(manifest: &Manifest) -> Result<GridResult> {
    manifest.grid.validate()?;
    let full = match &manifest.grid.source {
        DataSource::Synthetic { .. } => load_source(&manifest.grid.source, manifest.grid.base.seed)?.0,
        DataSource::Files { keep_null, .. } => {
            let paths: Vec<PathBuf> = manifest.resolved_files.iter().map(PathBuf::from).collect();
            if paths.is_empty() {
                return Err(Error::InvalidInput(
                    "manifest has a file source but no resolved files".into(),
                ));
            }
            load_resolved(&paths, *keep_null)?
        }
    };
    Ok(run_tasks(&full, &manifest.grid))
}

fn fmt_opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|v| v.to_string()).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::InvalidInput(format!("cannot write {}: {e}", path.display())))?;
    writer
        .write_record(header)
        .and_then(|_| {
            for row in &rows {
                writer.write_record(row)?;
            }
            writer.flush().map_err(csv::Error::from)
        })
        .map_err(|e| Error::InvalidInput(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

/// Write raw.csv, summary.csv, trend.csv, history.csv, the manifest, and
/// the final models under `dir`.
pub fn emit_report(
    result: &GridResult,
    manifest: &Manifest,
    dir: impl AsRef<Path>,
) -> Result<()> {
    let dir = dir.as_ref();
    if result.rows.is_empty() {
        return Err(Error::InvalidInput("refusing to write an empty result".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;

    let raw_rows = result
        .rows
        .iter()
        .map(|r| {
            let m = r.metrics.as_ref();
            vec![
                r.kind.to_string(),
                r.t.to_string(),
                r.rep.to_string(),
                if r.is_ok() { "ok" } else { "failed" }.to_string(),
                fmt_opt(&r.rounds_run),
                fmt_opt(&r.weight_delta),
                fmt_opt(&m.map(|m| m.accuracy)),
                fmt_opt(&m.map(|m| m.macro_precision)),
                fmt_opt(&m.map(|m| m.macro_recall)),
                fmt_opt(&m.map(|m| m.macro_f1)),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(
        &dir.join(RAW_FILE),
        &[
            "kind",
            "t",
            "rep",
            "status",
            "rounds",
            "weight_delta",
            "accuracy",
            "macro_precision",
            "macro_recall",
            "macro_f1",
            "error",
        ],
        raw_rows,
    )?;

    let summary_rows = result
        .summaries
        .iter()
        .map(|s| {
            let mut row = vec![
                s.kind.to_string(),
                s.t.to_string(),
                s.runs.to_string(),
                s.excluded_count.to_string(),
            ];
            match &s.stats {
                Some(stats) => {
                    for (mean, std) in stats {
                        row.push(mean.to_string());
                        row.push(std.to_string());
                    }
                }
                None => row.extend(std::iter::repeat(String::new()).take(8)),
            }
            row
        })
        .collect();
    write_csv(
        &dir.join(SUMMARY_FILE),
        &[
            "kind",
            "t",
            "runs",
            "excluded_count",
            "accuracy_mean",
            "accuracy_std",
            "macro_precision_mean",
            "macro_precision_std",
            "macro_recall_mean",
            "macro_recall_std",
            "macro_f1_mean",
            "macro_f1_std",
        ],
        summary_rows,
    )?;

    // Long-format trend table: one row per (metric, t), federated only.
    let mut trend_rows = Vec::new();
    for (idx, metric) in SUMMARY_METRICS.iter().enumerate() {
        for s in &result.summaries {
            if s.kind != RunKind::Federated {
                continue;
            }
            let (mean, std) = match &s.stats {
                Some(stats) => (stats[idx].0.to_string(), stats[idx].1.to_string()),
                None => (String::new(), String::new()),
            };
            trend_rows.push(vec![metric.to_string(), s.t.to_string(), mean, std]);
        }
    }
    write_csv(
        &dir.join(TREND_FILE),
        &["metric", "t", "mean", "std"],
        trend_rows,
    )?;

    let mut history_rows = Vec::new();
    for r in &result.rows {
        for h in &r.history {
            history_rows.push(vec![
                r.t.to_string(),
                r.rep.to_string(),
                h.round.to_string(),
                h.weight_delta.to_string(),
                h.accuracy.to_string(),
                h.macro_precision.to_string(),
                h.macro_recall.to_string(),
                h.macro_f1.to_string(),
            ]);
        }
    }
    write_csv(
        &dir.join(HISTORY_FILE),
        &[
            "t",
            "rep",
            "round",
            "weight_delta",
            "accuracy",
            "macro_precision",
            "macro_recall",
            "macro_f1",
        ],
        history_rows,
    )?;

    let manifest_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(manifest)?;
    std::fs::write(&manifest_path, json)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;

    let models_dir = dir.join(MODELS_DIR);
    std::fs::create_dir_all(&models_dir)
        .map_err(|e| Error::io(models_dir.display().to_string(), e))?;
    for (stem, model) in &result.models {
        model.save(models_dir.join(format!("{stem}.json")))?;
    }
    Ok(())
}
