//! The five pipeline stages. Each reads what the previous stage wrote under
//! the output directory and leaves a `manifest.json` next to its files.
//!
//! ```text
//! <out>/data/series.csv, manifest.json
//! <out>/model/collection.json, auc.csv, manifest.json
//! <out>/sweep/results.csv, histograms.csv, economy/k<K>.json, decisions/<cm>_a<alpha>_<method>.csv, manifest.json
//! <out>/report/*.csv, *.svg, gaps.csv, manifest.json
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use ecots_core::classifiers::{auc, tune_and_train_collection, ModelArtifact};
use ecots_core::data::{build_horizon_datasets, generate_synthetic, load_pdm_csv, read_native_csv, split_series, write_native_csv, IngestSummary};
use ecots_core::streaming::ScoredSeries;
use ecots_core::sweep::{run_sweep, sweep_cells, Prepared};
use ecots_core::{Class, DecisionRecord, Method, OpenTimeSeries, ProbClassifier, SweepRow};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::charts;
use crate::config::{hex, DataSource, RunConfig};
use crate::error::{CliError, Result};

pub const RESULT_COLUMNS: [&str; 7] = ["method", "alpha", "cm_id", "avg_cost", "mean_horizon", "forced_frac", "params"];
pub const LOG_COLUMNS: [&str; 9] = ["series_id", "t_p", "t", "eta", "y_hat", "y", "cm_cost", "cd_cost", "forced"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TunedEntry {
    pub method: Method,
    pub alpha: f64,
    pub cm_id: String,
    pub params: serde_json::Value,
    pub validation_cost: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub generator_seed: Option<u64>,
    pub config_hash: String,
    pub config: &'a RunConfig,
    /// SHA-256 of each input file.
    pub inputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub summary: serde_json::Value,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub tuned: Vec<TunedEntry>,
}

impl<'a> Manifest<'a> {
    fn new(command: &'static str, config: &'a RunConfig) -> Result<Self> {
        Ok(Self {
            tool: "ecots",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed: config.seed,
            generator_seed: (config.data.source == DataSource::Synthetic).then_some(config.data.synthetic.seed),
            config_hash: config.hash()?,
            config,
            inputs: BTreeMap::new(),
            summary: serde_json::Value::Null,
            tuned: Vec::new(),
        })
    }

    fn input(mut self, path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        self.inputs.insert(path.display().to_string(), hex(&Sha256::digest(&bytes)));
        Ok(self)
    }

    fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("manifest.json"), self)
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(ecots_core::Error::from)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn require(path: &Path, hint: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Missing(format!("{} not found; {hint}", path.display())))
    }
}

fn summary_json(summary: &IngestSummary) -> serde_json::Value {
    serde_json::to_value(summary).expect("plain struct")
}

pub fn generate(config: &RunConfig) -> Result<()> {
    if config.data.source != DataSource::Synthetic {
        return Err(CliError::Config("generate needs data.source = \"synthetic\"".into()));
    }
    let series = generate_synthetic(&config.data.synthetic)?;
    write_series(config, "generate", &series)
}

pub fn ingest(config: &RunConfig) -> Result<()> {
    let paths = match (&config.data.source, &config.data.pdm) {
        (DataSource::Pdm, Some(p)) => p,
        _ => return Err(CliError::Config("ingest needs data.source = \"pdm\" and [data.pdm]".into())),
    };
    let series = load_pdm_csv(&paths.telemetry, &paths.errors, &paths.failures)?;
    if series.is_empty() {
        return Err(CliError::data(&paths.telemetry, "no series found"));
    }
    write_series(config, "ingest", &series)
}

fn write_series(config: &RunConfig, command: &'static str, series: &[OpenTimeSeries]) -> Result<()> {
    let dir = config.data_dir();
    create_dir(&dir)?;
    let path = dir.join("series.csv");
    write_native_csv(&path, series)?;
    let summary = IngestSummary::of(series);
    let mut manifest = Manifest::new(command, config)?;
    manifest.summary = summary_json(&summary);
    manifest.write(&dir)?;
    eprintln!("{command}: {} series, {} timestamps -> {}", summary.num_series, summary.num_timestamps, path.display());
    Ok(())
}

fn load_series(config: &RunConfig) -> Result<(PathBuf, Vec<OpenTimeSeries>)> {
    let path = config.series_path();
    require(&path, "run `ecots generate` or `ecots ingest` first")?;
    let series = read_native_csv(&path)?;
    if series.is_empty() {
        return Err(CliError::data(&path, "no series"));
    }
    Ok((path, series))
}

pub fn train(config: &RunConfig) -> Result<()> {
    let (series_path, series) = load_series(config)?;
    let split = split_series(series, config.seed)?;
    let datasets = build_horizon_datasets(&split.train, &config.horizons)?;
    let matrix = config.matrix(&config.training.cost_matrix)?;
    let (collection, report) = tune_and_train_collection(&datasets, &matrix, &config.training_config())?;

    let dir = config.model_dir();
    create_dir(&dir)?;
    let test = build_horizon_datasets(&split.test, &config.horizons)?;
    let mut rows = Vec::new();
    for ds in test.iter() {
        let model = collection.get(ds.eta)?;
        let scores: Vec<f64> = ds.examples.iter().map(|e| model.predict_proba(&e.features)).collect();
        let labels: Vec<Class> = ds.examples.iter().map(|e| e.label).collect();
        // Single-class horizons have no AUC and stay blank.
        rows.push([ds.eta.to_string(), auc(&scores, &labels).map(|a| a.to_string()).unwrap_or_default()]);
    }
    write_table(&dir.join("auc.csv"), &["eta", "auc"], rows)?;

    let constant = report.horizons.iter().filter(|h| h.constant).count();
    ModelArtifact::new(collection, report).write(dir.join("collection.json"))?;
    let mut manifest = Manifest::new("train", config)?.input(&series_path)?;
    manifest.summary = serde_json::json!({
        "split": split_sizes(&split.sizes()),
        "classifiers": config.horizons.len(),
        "constant_classifiers": constant,
    });
    manifest.write(&dir)?;
    eprintln!("train: {} classifiers -> {}", config.horizons.len(), dir.join("collection.json").display());
    Ok(())
}

fn split_sizes(sizes: &[usize; 4]) -> BTreeMap<&'static str, usize> {
    ecots_core::DatasetSplit::NAMES.into_iter().zip(sizes.iter().copied()).collect()
}

/// One decision log per cell, each behind its own lock.
struct CellLog {
    path: PathBuf,
    out: Option<csv::Writer<BufWriter<File>>>,
    error: Option<csv::Error>,
}

impl CellLog {
    fn open(path: PathBuf) -> Result<Self> {
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut out = csv::Writer::from_writer(BufWriter::new(file));
        out.write_record(LOG_COLUMNS).map_err(|e| CliError::data(&path, e))?;
        Ok(Self { path, out: Some(out), error: None })
    }

    fn append(&mut self, series: &ScoredSeries, records: &[DecisionRecord]) {
        let (Some(out), None) = (self.out.as_mut(), self.error.as_ref()) else { return };
        let class = |c: Class| if c == Class::Positive { "1" } else { "0" };
        for r in records {
            let row = [
                series.id().to_owned(),
                r.t_p.to_string(),
                r.t.to_string(),
                r.eta.to_string(),
                class(r.predicted).to_owned(),
                class(r.actual).to_owned(),
                r.misclassification_cost.to_string(),
                r.delay_cost.to_string(),
                u8::from(r.forced).to_string(),
            ];
            if let Err(e) = out.write_record(&row) {
                self.error = Some(e);
                return;
            }
        }
    }

    fn finish(mut self) -> Result<()> {
        if let Some(e) = self.error.take() {
            return Err(CliError::data(&self.path, e));
        }
        if let Some(out) = self.out.take() {
            let mut inner = out.into_inner().map_err(|e| CliError::data(&self.path, e.error()))?;
            inner.flush().map_err(|e| CliError::io(&self.path, e))?;
        }
        Ok(())
    }
}

pub fn decision_log_name(cm_id: &str, alpha: f64, method: Method) -> String {
    format!("{cm_id}_a{alpha}_{method}.csv")
}

pub fn sweep(config: &RunConfig) -> Result<()> {
    let (series_path, series) = load_series(config)?;
    let model_path = config.model_dir().join("collection.json");
    require(&model_path, "run `ecots train` first")?;
    let artifact = ModelArtifact::read(&model_path)?;
    if artifact.training.config.seed != config.seed {
        return Err(CliError::Config(format!(
            "the model was trained with seed {} but the run uses seed {}; the splits would differ",
            artifact.training.config.seed, config.seed
        )));
    }
    if *artifact.collection.horizons() != config.horizons {
        return Err(CliError::Config("the model's horizons differ from the configured horizons".into()));
    }
    let split = split_series(series, config.seed)?;
    let prepared = Prepared::new(&split, &artifact.collection, &config.tuning_grids()?)?;
    let matrices = config.matrices()?;

    let dir = config.sweep_dir();
    create_dir(&dir.join("economy"))?;
    for model in &prepared.economy_models {
        write_json(&dir.join("economy").join(format!("k{}.json", model.k())), model)?;
    }

    let cells = sweep_cells(&config.methods, &config.alphas, &matrices);
    let logs: Vec<Mutex<Option<CellLog>>> = if config.sweep.decision_logs {
        create_dir(&dir.join("decisions"))?;
        cells
            .iter()
            .map(|&(m, alpha, id, _)| Ok(Mutex::new(Some(CellLog::open(dir.join("decisions").join(decision_log_name(id, alpha, m)))?))))
            .collect::<Result<_>>()?
    } else {
        cells.iter().map(|_| Mutex::new(None)).collect()
    };
    let result = run_sweep(&prepared, &config.methods, &config.alphas, &matrices, |i, s, records| {
        if let Some(log) = logs[i].lock().expect("log lock").as_mut() {
            log.append(s, records);
        }
    })?;
    for log in logs {
        if let Some(log) = log.into_inner().expect("log lock") {
            log.finish()?;
        }
    }

    write_results(&dir.join("results.csv"), &result.rows)?;
    write_histograms(&dir.join("histograms.csv"), &result.rows, config)?;
    let mut manifest = Manifest::new("sweep", config)?.input(&series_path)?.input(&model_path)?;
    manifest.tuned = result
        .rows
        .iter()
        .map(|r| TunedEntry {
            method: r.method,
            alpha: r.alpha,
            cm_id: r.cm_id.clone(),
            params: serde_json::to_value(r.params).expect("plain params"),
            validation_cost: r.validation_cost,
        })
        .collect();
    manifest.summary = serde_json::json!({ "cells": result.rows.len(), "test_series": prepared.test.len() });
    manifest.write(&dir)?;
    eprintln!("sweep: {} cells -> {}", result.rows.len(), dir.join("results.csv").display());
    Ok(())
}

fn write_table<R: IntoIterator<Item = String>>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<()> {
    fs::write(path, table_text(header, rows)?).map_err(|e| CliError::io(path, e))
}

fn write_results(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_table(
        path,
        &RESULT_COLUMNS,
        rows.iter().map(|r| {
            [
                r.method.to_string(),
                r.alpha.to_string(),
                r.cm_id.clone(),
                r.avg_cost.to_string(),
                r.mean_horizon.to_string(),
                r.forced_fraction.to_string(),
                r.params.to_string(),
            ]
        }),
    )
}

fn write_histograms(path: &Path, rows: &[SweepRow], config: &RunConfig) -> Result<()> {
    let lines = rows.iter().flat_map(|r| {
        config.horizons.horizons().map(move |eta| {
            [r.method.to_string(), r.alpha.to_string(), r.cm_id.clone(), eta.to_string(), r.histogram.get(&eta).copied().unwrap_or(0).to_string()]
        })
    });
    write_table(path, &["method", "alpha", "cm_id", "eta", "count"], lines)
}

/// Rows of a headered CSV file, after checking its columns.
fn read_table(path: &Path, columns: &[&str]) -> Result<Vec<Vec<String>>> {
    let err = |e: csv::Error| CliError::data(path, e);
    let mut reader = csv::Reader::from_path(path).map_err(err)?;
    let header: Vec<&str> = reader.headers().map_err(err)?.iter().collect();
    if header != columns {
        return Err(CliError::data(path, format!("expected columns {columns:?}, found {header:?}")));
    }
    reader.records().map(|r| Ok(r.map_err(err)?.iter().map(str::to_owned).collect())).collect()
}

fn parse_alpha(path: &Path, cell: &str) -> Result<f64> {
    cell.parse().map_err(|_| CliError::data(path, format!("bad alpha {cell:?}")))
}

#[derive(Debug, Default)]
pub struct ReportOutcome {
    pub files: Vec<PathBuf>,
    pub gaps: usize,
    /// Gaps other than undefined AUC values: missing result or histogram rows, missing files.
    pub missing: usize,
}

pub fn report(config: &RunConfig) -> Result<ReportOutcome> {
    let sweep_dir = config.sweep_dir();
    let results_path = sweep_dir.join("results.csv");
    require(&results_path, "run `ecots sweep` first")?;
    let results = read_table(&results_path, &RESULT_COLUMNS)?;
    if results.is_empty() {
        return Err(CliError::data(&results_path, "no result rows to report"));
    }
    // (method, alpha bits, cm) -> avg_cost cell, kept verbatim.
    let mut cost: HashMap<(String, u64, String), String> = HashMap::new();
    for row in &results {
        cost.insert((row[0].clone(), parse_alpha(&results_path, &row[1])?.to_bits(), row[2].clone()), row[3].clone());
    }
    let dir = config.report_dir();
    create_dir(&dir)?;
    let mut outcome = ReportOutcome::default();
    let mut gaps: Vec<[String; 5]> = Vec::new();
    let emit = |name: String, table: String, svg: Option<String>, outcome: &mut ReportOutcome| -> Result<()> {
        let path = dir.join(&name);
        fs::write(&path, &table).map_err(|e| CliError::io(&path, e))?;
        outcome.files.push(path.clone());
        if let Some(svg) = svg {
            let svg_path = path.with_extension("svg");
            fs::write(&svg_path, svg).map_err(|e| CliError::io(&svg_path, e))?;
            outcome.files.push(svg_path);
        }
        Ok(())
    };

    let mut summary_rows = Vec::new();
    for cm in &config.cost_matrices {
        let mut rows = Vec::new();
        for &m in &config.methods {
            let mut summary = vec![cm.id.clone(), m.to_string()];
            for &alpha in &config.alphas {
                let cell = cost.get(&(m.to_string(), alpha.to_bits(), cm.id.clone())).cloned();
                if cell.is_none() {
                    gaps.push(["result".into(), m.to_string(), alpha.to_string(), cm.id.clone(), "no row in results.csv".into()]);
                }
                let cell = cell.unwrap_or_default();
                rows.push([m.to_string(), alpha.to_string(), cell.clone()]);
                summary.push(cell);
            }
            summary_rows.push(summary);
        }
        let name = format!("cost_{}.csv", cm.id);
        let table = table_text(&["method", "alpha", "avg_cost"], rows)?;
        let svg = charts::cost_chart(&name, &cm.id, &table)?;
        emit(name, table, Some(svg), &mut outcome)?;
    }
    let mut summary_header = vec!["cm_id".to_owned(), "method".to_owned()];
    summary_header.extend(config.alphas.iter().map(|a| format!("alpha={a}")));
    let header: Vec<&str> = summary_header.iter().map(String::as_str).collect();
    emit("summary.csv".into(), table_text(&header, summary_rows)?, None, &mut outcome)?;

    let hist_path = sweep_dir.join("histograms.csv");
    let mut counts: HashMap<(String, u64, String), BTreeMap<i32, String>> = HashMap::new();
    if hist_path.is_file() {
        for row in read_table(&hist_path, &["method", "alpha", "cm_id", "eta", "count"])? {
            let eta: i32 = row[3].parse().map_err(|_| CliError::data(&hist_path, format!("bad horizon {:?}", row[3])))?;
            counts.entry((row[0].clone(), parse_alpha(&hist_path, &row[1])?.to_bits(), row[2].clone())).or_default().insert(eta, row[4].clone());
        }
    } else {
        gaps.push(["file".into(), String::new(), String::new(), String::new(), format!("{} not found", hist_path.display())]);
    }
    for sel in &config.report.histograms {
        let mut rows = Vec::new();
        for &m in &config.methods {
            let cell = counts.get(&(m.to_string(), sel.alpha.to_bits(), sel.cm.clone()));
            if cell.is_none() && hist_path.is_file() {
                gaps.push(["histogram".into(), m.to_string(), sel.alpha.to_string(), sel.cm.clone(), "no rows in histograms.csv".into()]);
            }
            for eta in config.horizons.horizons() {
                rows.push([m.to_string(), eta.to_string(), cell.and_then(|c| c.get(&eta)).cloned().unwrap_or_default()]);
            }
        }
        let name = format!("horizons_{}_a{}.csv", sel.cm, sel.alpha);
        let table = table_text(&["method", "eta", "count"], rows)?;
        let svg = charts::histogram_chart(&name, &sel.cm, &sel.alpha.to_string(), &table)?;
        emit(name, table, Some(svg), &mut outcome)?;
    }

    let auc_path = config.model_dir().join("auc.csv");
    if auc_path.is_file() {
        let rows = read_table(&auc_path, &["eta", "auc"])?;
        for row in rows.iter().filter(|r| r[1].is_empty()) {
            gaps.push(["auc".into(), String::new(), String::new(), String::new(), format!("horizon {} has a single class on test", row[0])]);
        }
        let table = table_text(&["eta", "auc"], rows)?;
        let svg = charts::auc_chart("auc.csv", &table)?;
        emit("auc.csv".into(), table, Some(svg), &mut outcome)?;
    } else {
        gaps.push(["file".into(), String::new(), String::new(), String::new(), format!("{} not found", auc_path.display())]);
    }

    outcome.gaps = gaps.len();
    outcome.missing = gaps.iter().filter(|g| g[0] != "auc").count();
    emit("gaps.csv".into(), table_text(&["kind", "method", "alpha", "cm_id", "detail"], gaps)?, None, &mut outcome)?;
    let mut manifest = Manifest::new("report", config)?.input(&results_path)?;
    manifest.summary = serde_json::json!({ "files": outcome.files.len(), "gaps": outcome.gaps, "missing": outcome.missing });
    manifest.write(&dir)?;
    eprintln!("report: {} files -> {}", outcome.files.len(), dir.display());
    Ok(outcome)
}

fn table_text<R: IntoIterator<Item = String>>(header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<String> {
    let err = |e: csv::Error| CliError::data("table", e);
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(header).map_err(err)?;
    for row in rows {
        out.write_record(row.into_iter().collect::<Vec<_>>()).map_err(err)?;
    }
    let bytes = out.into_inner().map_err(|e| CliError::data("table", e.error()))?;
    Ok(String::from_utf8(bytes).expect("csv of strings"))
}
