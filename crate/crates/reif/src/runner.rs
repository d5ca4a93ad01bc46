//! Grid execution. Each run owns `runs/<run_id>/` and writes its manifest
//! last, so a directory with a complete manifest is a finished run.
//!
//! ```text
//! <output_dir>/
//!   dataset.jsonl            generated or loaded data with the validation split applied
//!   grid.json                run ids in grid order
//!   summary.csv              one row per run, recomputed from the run CSVs
//!   summary_by_strategy.csv  means over seeds
//!   runs/<run_id>/{manifest.json, model.json, history.csv, influences.csv,
//!                  pr_curve.csv, patn.csv, noise_report.csv, selections.csv}
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use reif_core::data::{build_validation_set, generate_synthetic_ds, Dataset, Split};
use reif_core::eval::{self, pr_auc, BagPrediction, PrCurve, PrPoint};
use reif_core::influence::{self, InfluenceEntry, InfluenceReport};
use reif_core::numeric::{derive_seed, Stream};
use reif_core::trainer::{self, RunConfig, Strategy, TrainHistory};
use reif_core::SoftmaxModel;
use serde::{Deserialize, Serialize};

use crate::artifacts::{self as art, HistoryRow, InfluenceRow, PatnRow};
use crate::dataset_io::{self, LoadOptions};
use crate::error::{Error, ExitKind, Result};
use crate::experiment::{ExperimentSpec, InfluenceSettings, RunSpec};

pub const WORKERS_ENV: &str = "REIF_WORKERS";
pub const MANIFEST: &str = "manifest.json";
pub const MODEL: &str = "model.json";
pub const DATASET: &str = "dataset.jsonl";
pub const GRID: &str = "grid.json";
pub const SUMMARY: &str = "summary.csv";
pub const SUMMARY_BY_STRATEGY: &str = "summary_by_strategy.csv";

/// `requested` (or the machine's parallelism), capped by `REIF_WORKERS`.
pub fn resolve_workers(requested: Option<usize>) -> usize {
    let base = requested
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
        .max(1);
    match std::env::var(WORKERS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(cap) if cap >= 1 => base.min(cap),
        _ => base,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub run: RunSpec,
    pub experiment: String,
    /// Generator settings, absent when the data came from a file.
    pub data: Option<reif_core::data::NoiseSpec>,
    pub validation: reif_core::data::ValidationParams,
    pub influence: InfluenceSettings,
    pub report: crate::experiment::ReportSettings,
    /// Relative to the run directory.
    pub dataset_file: String,
    pub dataset_sha256: String,
    pub status: RunStatus,
    pub failure: Option<String>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    fn same_inputs(&self, other: &Manifest) -> bool {
        self.run == other.run
            && self.data == other.data
            && self.validation == other.validation
            && self.influence == other.influence
            && self.report == other.report
            && self.dataset_sha256 == other.dataset_sha256
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_model(path: &Path) -> Result<SoftmaxModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn write_model(path: &Path, model: &SoftmaxModel) -> Result<()> {
    write_json(path, model)
}

/// Train / validation / test views of one dataset.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub path: PathBuf,
    pub sha256: String,
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl PreparedData {
    /// Splits an in-memory dataset, building a validation split from the
    /// training part when none is present.
    pub fn split(
        dataset: &Dataset,
        params: &reif_core::data::ValidationParams,
    ) -> Result<(Dataset, Dataset, Dataset, Dataset)> {
        let full = if dataset.subset(Split::Validation).is_empty() {
            let train = dataset.subset(Split::Train);
            if train.is_empty() {
                return Err(Error::Data("dataset has no training instances".into()));
            }
            let vs = build_validation_set(&train, params)?;
            if vs.exhausted {
                log::warn!(
                    "validation heuristic ran out of patterns after selecting {} instances",
                    vs.validation.len()
                );
            }
            vs.apply(dataset)
        } else {
            dataset.clone()
        };
        let train = full.subset(Split::Train);
        let validation = full.subset(Split::Validation);
        let test = full.subset(Split::Test);
        if train.is_empty() || validation.is_empty() {
            return Err(Error::Data("need non-empty train and validation splits".into()));
        }
        Ok((full, train, validation, test))
    }

    pub fn prepare(spec: &ExperimentSpec) -> Result<Self> {
        let raw = match &spec.dataset {
            Some(p) => dataset_io::read_dataset(p, LoadOptions::default())?.dataset,
            None => generate_synthetic_ds(&spec.data)?,
        };
        let (full, train, validation, test) = Self::split(&raw, &spec.validation)?;
        fs::create_dir_all(&spec.output_dir).map_err(|e| Error::io(&spec.output_dir, e))?;
        let path = spec.output_dir.join(DATASET);
        let text = dataset_io::dataset_to_jsonl(&full)?;
        fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
        Ok(PreparedData {
            path,
            sha256: dataset_io::sha256_hex(text.as_bytes()),
            train,
            validation,
            test,
        })
    }
}

/// Sampling temperature actually used by a run.
pub fn effective_alpha(config: &RunConfig, validation_size: usize) -> f64 {
    if config.validation_sum {
        config.sampler.alpha * validation_size as f64
    } else {
        config.sampler.alpha
    }
}

/// Φ and π for every training instance at `model`, with `s` solved over the
/// full training set.
pub fn final_influences(
    model: &SoftmaxModel,
    train: &Dataset,
    validation: &Dataset,
    config: &RunConfig,
    settings: &InfluenceSettings,
    epoch: usize,
) -> Result<InfluenceReport> {
    let mut method = settings.method(model.num_params(), config);
    if let influence::InverseHvpMethod::Lissa(p) = &mut method {
        p.seed = derive_seed(config.seed, Stream::Lissa, &[epoch as u64, 1]);
    }
    let v = influence::aggregate_validation_gradient(model, validation.instances())?;
    let mut s = method.solve(model, train.instances(), &v, config.lambda_reg)?;
    s.epoch = epoch;
    Ok(influence::influence_scores(
        &s,
        train.instances(),
        model,
        effective_alpha(config, validation.len()),
    )?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub predictions: Vec<BagPrediction>,
    pub pr: PrCurve,
    pub patn: Vec<PatnRow>,
}

/// Bag-level PR curve and P@N on `test`; cutoffs larger than the number of
/// bags are skipped.
pub fn evaluate(model: &SoftmaxModel, test: &Dataset, patn: &[usize]) -> Result<Evaluation> {
    let predictions = eval::bag_level_predict(model, test)?;
    let gold = eval::gold_bag_relations(test);
    let pr = eval::pr_curve(&predictions, &gold)?;
    let mut rows = Vec::new();
    for &n in patn {
        if n > predictions.len() {
            log::warn!("skipping P@{n}: only {} bags", predictions.len());
            continue;
        }
        rows.push(PatnRow { n, precision: eval::precision_at_n(&predictions, &gold, n)? });
    }
    Ok(Evaluation { predictions, pr, patn: rows })
}

fn history_header() -> [&'static str; 9] {
    [
        "epoch",
        "learning_rate",
        "val_loss",
        "subset_loss",
        "selected",
        "clean_fraction",
        "ihvp_iterations",
        "ihvp_converged",
        "ihvp_fell_back",
    ]
}

/// Trains, scores and evaluates one grid cell, writing everything except the
/// manifest into `dir`.
pub fn execute_run(run: &RunSpec, data: &PreparedData, spec: &ExperimentSpec, dir: &Path) -> Result<TrainHistory> {
    let started = Instant::now();
    let (model, mut history) = trainer::train_any(&data.train, &data.validation, &run.config)?;
    history.wall_clock_secs = Some(started.elapsed().as_secs_f64());
    write_model(&dir.join(MODEL), &model)?;
    art::write_csv(&dir.join(art::HISTORY), &art::history_rows(&history), &history_header())?;
    if spec.report.selections {
        art::write_csv(
            &dir.join(art::SELECTIONS),
            &art::selection_rows(&history.selections),
            &["instance_id", "bag_id", "phi", "pi", "kept", "epoch"],
        )?;
    }

    let report = final_influences(&model, &data.train, &data.validation, &run.config, &spec.influence, run.config.epochs)?;
    art::write_csv(
        &dir.join(art::INFLUENCES),
        &art::influence_rows(&report),
        &["instance_id", "bag_id", "phi", "pi", "epoch"],
    )?;

    if !data.test.is_empty() {
        let ev = evaluate(&model, &data.test, &spec.report.patn)?;
        art::write_csv(&dir.join(art::PR_CURVE), &art::pr_rows(&ev.pr), &["threshold", "precision", "recall"])?;
        art::write_csv(&dir.join(art::PATN), &ev.patn, &["n", "precision"])?;
    }
    if spec.report.noise_report && data.train.has_gold() {
        let nr = eval::noise_detection_report(&report, &data.train)?;
        art::write_csv(&dir.join(art::NOISE_REPORT), &art::noise_rows(&nr), &["k", "clean_fraction"])?;
    }
    log::info!("{}: done in {:.1}s", run.run_id, started.elapsed().as_secs_f64());
    Ok(history)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    Completed,
    Skipped,
    Failed(ExitKind),
}

#[derive(Debug, Clone)]
pub struct GridReport {
    pub outcomes: Vec<(String, RunOutcome)>,
    pub summary: Vec<SummaryRow>,
}

impl GridReport {
    pub fn all_failed(&self) -> bool {
        self.outcomes.iter().all(|(_, o)| matches!(o, RunOutcome::Failed(_)))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GridOptions {
    pub resume: bool,
    pub workers: Option<usize>,
}

pub fn run_grid(spec: &ExperimentSpec, options: GridOptions) -> Result<GridReport> {
    let data = PreparedData::prepare(spec)?;
    let runs = spec.expand();
    write_json(
        &spec.output_dir.join(GRID),
        &runs.iter().map(|r| r.run_id.clone()).collect::<Vec<_>>(),
    )?;
    let workers = resolve_workers(options.workers);
    log::info!("{} runs on {workers} worker(s)", runs.len());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let outcomes: Vec<Result<(String, RunOutcome)>> = pool.install(|| {
        runs.par_iter()
            .map(|run| run_one(run, &data, spec, options.resume).map(|o| (run.run_id.clone(), o)))
            .collect()
    });
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let summary = summarize(&spec.output_dir)?;
    Ok(GridReport { outcomes, summary })
}

fn run_one(run: &RunSpec, data: &PreparedData, spec: &ExperimentSpec, resume: bool) -> Result<RunOutcome> {
    let dir = spec.output_dir.join("runs").join(&run.run_id);
    let mut manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").into(),
        run: run.clone(),
        experiment: spec.name.clone(),
        data: spec.dataset.is_none().then(|| spec.data.clone()),
        validation: spec.validation,
        influence: spec.influence,
        report: spec.report.clone(),
        dataset_file: format!("../../{DATASET}"),
        dataset_sha256: data.sha256.clone(),
        status: RunStatus::Complete,
        failure: None,
    };
    let manifest_path = dir.join(MANIFEST);
    if resume {
        if let Ok(old) = Manifest::read(&manifest_path) {
            if old.status == RunStatus::Complete && old.same_inputs(&manifest) {
                log::info!("{}: already complete, skipping", run.run_id);
                return Ok(RunOutcome::Skipped);
            }
        }
    }
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let outcome = match execute_run(run, data, spec, &dir) {
        Ok(_) => RunOutcome::Completed,
        Err(e @ Error::Io { .. }) => return Err(e),
        Err(e) => {
            log::error!("{}: {e}", run.run_id);
            manifest.status = RunStatus::Failed;
            manifest.failure = Some(e.to_string());
            RunOutcome::Failed(e.kind())
        }
    };
    write_json(&manifest_path, &manifest)?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub run_id: String,
    pub strategy: Strategy,
    pub ratio: Option<f64>,
    pub seed: u64,
    pub status: RunStatus,
    pub epochs: Option<usize>,
    pub final_val_loss: Option<f64>,
    /// Mean selected clean fraction over epochs 3 and later.
    pub clean_fraction: Option<f64>,
    pub pr_auc: Option<f64>,
    pub patn: Vec<(usize, f64)>,
    pub noise_auroc: Option<f64>,
    pub failure: Option<String>,
}

fn read_optional<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<Vec<T>>> {
    if path.is_file() {
        art::read_csv(path).map(Some)
    } else {
        Ok(None)
    }
}

/// Rebuilds the per-run and per-strategy tables from the files under `dir`
/// and writes them next to the runs.
pub fn summarize(dir: &Path) -> Result<Vec<SummaryRow>> {
    let grid_path = dir.join(GRID);
    let text = fs::read_to_string(&grid_path).map_err(|e| Error::io(&grid_path, e))?;
    let ids: Vec<String> = serde_json::from_str(&text).map_err(|e| Error::Data(e.to_string()))?;
    let mut gold_data: Option<Dataset> = None;
    let mut rows = Vec::new();
    for id in ids {
        let run_dir = dir.join("runs").join(&id);
        let manifest = match Manifest::read(&run_dir.join(MANIFEST)) {
            Ok(m) => m,
            Err(_) => {
                log::warn!("{id}: no manifest, run missing or interrupted");
                continue;
            }
        };
        let mut row = SummaryRow {
            run_id: id.clone(),
            strategy: manifest.run.strategy,
            ratio: manifest.run.ratio,
            seed: manifest.run.seed,
            status: manifest.status,
            epochs: None,
            final_val_loss: None,
            clean_fraction: None,
            pr_auc: None,
            patn: Vec::new(),
            noise_auroc: None,
            failure: manifest.failure.clone(),
        };
        if manifest.status == RunStatus::Complete {
            let history: Vec<HistoryRow> = art::read_csv(&run_dir.join(art::HISTORY))?;
            row.epochs = Some(history.len());
            row.final_val_loss = history.last().map(|h| h.val_loss);
            let late: Vec<f64> = history.iter().filter(|h| h.epoch >= 3).filter_map(|h| h.clean_fraction).collect();
            if !late.is_empty() {
                row.clean_fraction = Some(late.iter().sum::<f64>() / late.len() as f64);
            }
            if let Some(points) = read_optional::<PrPoint>(&run_dir.join(art::PR_CURVE))? {
                row.pr_auc = Some(pr_auc(&points));
            }
            if let Some(patn) = read_optional::<PatnRow>(&run_dir.join(art::PATN))? {
                row.patn = patn.into_iter().map(|p| (p.n, p.precision)).collect();
            }
            if gold_data.is_none() {
                let path = run_dir.join(&manifest.dataset_file);
                gold_data = Some(dataset_io::read_dataset(&path, LoadOptions::default())?.dataset);
            }
            let ds = gold_data.as_ref().expect("loaded above");
            if ds.has_gold() {
                let infl: Vec<InfluenceRow> = art::read_csv(&run_dir.join(art::INFLUENCES))?;
                let report = InfluenceReport {
                    entries: infl
                        .iter()
                        .map(|r| InfluenceEntry { instance_id: r.instance_id, bag_id: r.bag_id, phi: r.phi, pi: r.pi })
                        .collect(),
                    pairwise: None,
                    alpha: 1.0,
                    epoch: infl.first().map_or(0, |r| r.epoch),
                };
                row.noise_auroc = eval::noise_detection_report(&report, ds).ok().map(|n| n.auroc);
            }
        }
        rows.push(row);
    }
    write_summary(&dir.join(SUMMARY), &rows)?;
    write_strategy_summary(&dir.join(SUMMARY_BY_STRATEGY), &rows)?;
    Ok(rows)
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn patn_columns(rows: &[SummaryRow]) -> Vec<usize> {
    let mut ns: Vec<usize> = rows.iter().flat_map(|r| r.patn.iter().map(|p| p.0)).collect();
    ns.sort_unstable();
    ns.dedup();
    ns
}

fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let ns = patn_columns(rows);
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
    let mut header: Vec<String> = ["run_id", "strategy", "ratio", "seed", "status", "epochs", "final_val_loss", "clean_fraction", "pr_auc"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(ns.iter().map(|n| format!("p@{n}")));
    header.extend(["noise_auroc".to_string(), "failure".to_string()]);
    w.write_record(&header).map_err(|e| Error::Data(e.to_string()))?;
    for r in rows {
        let mut rec = vec![
            r.run_id.clone(),
            r.strategy.to_string(),
            fmt_opt(r.ratio),
            r.seed.to_string(),
            match r.status {
                RunStatus::Complete => "complete".into(),
                RunStatus::Failed => "failed".into(),
            },
            fmt_opt(r.epochs),
            fmt_opt(r.final_val_loss),
            fmt_opt(r.clean_fraction),
            fmt_opt(r.pr_auc),
        ];
        for n in &ns {
            rec.push(fmt_opt(r.patn.iter().find(|p| p.0 == *n).map(|p| p.1)));
        }
        rec.push(fmt_opt(r.noise_auroc));
        rec.push(r.failure.clone().unwrap_or_default());
        w.write_record(&rec).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Mean of `f` over the rows where it is defined.
fn mean_of(rows: &[&SummaryRow], f: impl Fn(&SummaryRow) -> Option<f64>) -> Option<f64> {
    let v: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyRow {
    pub strategy: Strategy,
    pub ratio: Option<f64>,
    pub runs: usize,
    pub completed: usize,
    pub pr_auc: Option<f64>,
    pub patn: Vec<(usize, Option<f64>)>,
    pub noise_auroc: Option<f64>,
}

/// Groups by strategy and ratio in first-appearance order.
pub fn strategy_rows(rows: &[SummaryRow]) -> Vec<StrategyRow> {
    let ns = patn_columns(rows);
    let mut order: Vec<(Strategy, Option<u64>)> = Vec::new();
    let mut groups: BTreeMap<(Strategy, Option<u64>), Vec<&SummaryRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.strategy, r.ratio.map(f64::to_bits));
        if !groups.contains_key(&key) {
            order.push(key);
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            StrategyRow {
                strategy: key.0,
                ratio: key.1.map(f64::from_bits),
                runs: g.len(),
                completed: g.iter().filter(|r| r.status == RunStatus::Complete).count(),
                pr_auc: mean_of(g, |r| r.pr_auc),
                patn: ns
                    .iter()
                    .map(|&n| (n, mean_of(g, |r| r.patn.iter().find(|p| p.0 == n).map(|p| p.1))))
                    .collect(),
                noise_auroc: mean_of(g, |r| r.noise_auroc),
            }
        })
        .collect()
}

fn write_strategy_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let ns = patn_columns(rows);
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
    let mut header: Vec<String> =
        ["strategy", "ratio", "runs", "completed", "pr_auc_mean"].iter().map(|s| s.to_string()).collect();
    header.extend(ns.iter().map(|n| format!("p@{n}_mean")));
    header.push("noise_auroc_mean".into());
    w.write_record(&header).map_err(|e| Error::Data(e.to_string()))?;
    for g in strategy_rows(rows) {
        let mut rec = vec![
            g.strategy.to_string(),
            fmt_opt(g.ratio),
            g.runs.to_string(),
            g.completed.to_string(),
            fmt_opt(g.pr_auc),
        ];
        rec.extend(g.patn.iter().map(|p| fmt_opt(p.1)));
        rec.push(fmt_opt(g.noise_auroc));
        w.write_record(&rec).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
