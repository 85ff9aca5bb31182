//! Evaluation sweeps over (method, alpha, cost matrix) cells.
//!
//! Every cell tunes its method on the validation split and reports the
//! test-split outcome. One classifier collection serves all cells; series are
//! scored once and reused.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{ClassifierCollection, ProbClassifier};
use crate::cost::{CostMatrix, CostModel, HorizonRange};
use crate::data::{DatasetSplit, GeneratorConfig, OpenTimeSeries};
use crate::economy::{fit_economy_scored, tune_economy, EconomyModel};
use crate::error::{Error, Result};
use crate::streaming::{evaluate, score_series, DecisionRecord, DecisionSummary, ScoredSeries};
use crate::triggers::{sr_grid, theta_grid, CcParams, CcTrigger, EarlyTrigger, LateTrigger, SrParams, SrTrigger, Trigger};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Early,
    Late,
    Cc,
    Sr,
    Economy,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Early, Method::Late, Method::Cc, Method::Sr, Method::Economy];

    pub fn name(self) -> &'static str {
        match self {
            Method::Early => "early",
            Method::Late => "late",
            Method::Cc => "cc",
            Method::Sr => "sr",
            Method::Economy => "economy",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TunedParams {
    Sr { gamma: SrParams },
    Cc { theta: CcParams },
    Economy { k: usize },
    None {},
}

impl fmt::Display for TunedParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serde_json::to_string(self).map_err(|_| fmt::Error)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningGrids {
    pub thetas: Vec<CcParams>,
    pub gammas: Vec<SrParams>,
    pub ks: Vec<usize>,
}

impl Default for TuningGrids {
    fn default() -> Self {
        Self { thetas: theta_grid(), gammas: sr_grid(), ks: (1..=5).collect() }
    }
}

/// Scored splits, fitted economy models and the validation decisions of every
/// cost-independent candidate, shared by every cell.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub horizons: HorizonRange,
    pub validation: Vec<ScoredSeries>,
    pub test: Vec<ScoredSeries>,
    pub estimation: Vec<ScoredSeries>,
    pub economy_models: Vec<EconomyModel>,
    /// Ascending thresholds with their validation decisions.
    pub cc_candidates: Vec<(CcParams, DecisionSummary)>,
    /// Lexicographically ordered triples with their validation decisions.
    pub sr_candidates: Vec<(SrParams, DecisionSummary)>,
}

pub fn score_all<C: ProbClassifier>(series: &[OpenTimeSeries], collection: &ClassifierCollection<C>) -> Result<Vec<ScoredSeries>> {
    series.par_iter().map(|s| score_series(s, collection)).collect()
}

fn summarize_all<P: Copy + Send + Sync, T: Trigger>(
    validation: &[ScoredSeries],
    grid: &[P],
    make: impl Fn(P) -> T + Sync,
) -> Result<Vec<(P, DecisionSummary)>> {
    if validation.is_empty() {
        return Ok(Vec::new());
    }
    grid.par_iter().map(|&p| Ok((p, DecisionSummary::collect(validation, &make(p))?))).collect()
}

/// First candidate with the lowest cost.
fn cheapest<P: Copy>(candidates: &[(P, DecisionSummary)], cost: &CostModel) -> Result<(P, f64)> {
    let mut best: Option<(P, f64)> = None;
    for (p, summary) in candidates {
        let c = summary.avg_cost(cost)?;
        if best.is_none_or(|(_, b)| c < b) {
            best = Some((*p, c));
        }
    }
    best.ok_or_else(|| Error::InvalidConfig("empty tuning grid".into()))
}

impl Prepared {
    /// Score the validation, test and estimation splits, fit one economy
    /// model per K on the estimation split and run every SR and CC
    /// candidate over the validation split.
    pub fn new<C: ProbClassifier>(split: &DatasetSplit, collection: &ClassifierCollection<C>, grids: &TuningGrids) -> Result<Self> {
        let validation = score_all(&split.validation, collection)?;
        let test = score_all(&split.test, collection)?;
        let estimation = score_all(&split.estimation, collection)?;
        let economy_models = if grids.ks.is_empty() {
            Vec::new()
        } else {
            grids.ks.par_iter().map(|&k| fit_economy_scored(&estimation, k)).collect::<Result<_>>()?
        };
        let mut thetas = grids.thetas.clone();
        thetas.sort_by(|a, b| a.theta().total_cmp(&b.theta()));
        thetas.dedup();
        let mut gammas = grids.gammas.clone();
        gammas.sort_by(|a, b| a.gamma().partial_cmp(&b.gamma()).expect("finite parameters"));
        gammas.dedup();
        let cc_candidates = summarize_all(&validation, &thetas, CcTrigger)?;
        let sr_candidates = summarize_all(&validation, &gammas, SrTrigger)?;
        Ok(Self { horizons: *collection.horizons(), validation, test, estimation, economy_models, cc_candidates, sr_candidates })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub method: Method,
    pub alpha: f64,
    pub cm_id: String,
    pub params: TunedParams,
    /// Validation cost of the chosen parameters; absent for the baselines.
    pub validation_cost: Option<f64>,
    pub avg_cost: f64,
    pub mean_horizon: f64,
    pub forced_fraction: f64,
    pub histogram: BTreeMap<i32, usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn get(&self, method: Method, alpha: f64, cm_id: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.method == method && r.alpha == alpha && r.cm_id == cm_id)
    }
}

/// Tune `method` for one cost model and return the trigger with its
/// parameters and validation cost. Ties go to the smaller threshold, the
/// lexicographically smaller triple and the smaller K.
pub fn tune_method(method: Method, prepared: &Prepared, cost: &CostModel) -> Result<(Box<dyn Trigger>, TunedParams, Option<f64>)> {
    Ok(match method {
        Method::Early => (Box::new(EarlyTrigger), TunedParams::None {}, None),
        Method::Late => (Box::new(LateTrigger), TunedParams::None {}, None),
        Method::Cc => {
            let (p, c) = cheapest(&prepared.cc_candidates, cost)?;
            (Box::new(CcTrigger(p)), TunedParams::Cc { theta: p }, Some(c))
        }
        Method::Sr => {
            let (p, c) = cheapest(&prepared.sr_candidates, cost)?;
            (Box::new(SrTrigger(p)), TunedParams::Sr { gamma: p }, Some(c))
        }
        Method::Economy => {
            let (model, policy, c) = tune_economy(&prepared.economy_models, &prepared.validation, cost)?;
            (Box::new(policy), TunedParams::Economy { k: model.k() }, Some(c))
        }
    })
}

/// One cell: tune on validation, evaluate on test. `sink` receives each test
/// series' decision records.
pub fn run_cell(
    method: Method,
    alpha: f64,
    cm_id: &str,
    matrix: CostMatrix,
    prepared: &Prepared,
    sink: impl FnMut(&ScoredSeries, &[DecisionRecord]),
) -> Result<SweepRow> {
    let cost = CostModel::new(matrix, alpha, prepared.horizons)?;
    let (trigger, params, validation_cost) = tune_method(method, prepared, &cost)?;
    let eval = evaluate(&prepared.test, trigger.as_ref(), &cost, sink)?;
    Ok(SweepRow {
        method,
        alpha,
        cm_id: cm_id.to_owned(),
        params,
        validation_cost,
        avg_cost: eval.avg_cost,
        mean_horizon: eval.mean_horizon,
        forced_fraction: eval.forced_fraction,
        histogram: eval.histogram,
    })
}

/// Cells in output order: cost matrix, then alpha, then method.
pub fn sweep_cells<'a>(
    methods: &[Method],
    alphas: &[f64],
    matrices: &'a [(String, CostMatrix)],
) -> Vec<(Method, f64, &'a str, CostMatrix)> {
    let mut cells = Vec::new();
    for (id, cm) in matrices {
        for &alpha in alphas {
            for &m in methods {
                cells.push((m, alpha, id.as_str(), *cm));
            }
        }
    }
    cells
}

/// Run every cell concurrently. `sink(row_index, series, records)` is called
/// from worker threads; rows come back in `sweep_cells` order.
pub fn run_sweep(
    prepared: &Prepared,
    methods: &[Method],
    alphas: &[f64],
    matrices: &[(String, CostMatrix)],
    sink: impl Fn(usize, &ScoredSeries, &[DecisionRecord]) + Sync,
) -> Result<SweepResult> {
    let cells = sweep_cells(methods, alphas, matrices);
    let rows = cells
        .par_iter()
        .enumerate()
        .map(|(i, &(m, alpha, id, cm))| run_cell(m, alpha, id, cm, prepared, |s, r| sink(i, s, r)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { rows })
}

/// Seed of the reference benchmark run.
pub const BENCHMARK_SEED: u64 = 1;

/// Synthetic data used for the trade-off experiments: sparse failures with
/// premises 14 to 23 steps ahead, and telemetry shifted while a failure runs.
pub fn benchmark_generator_config(seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        seed,
        num_series: 200,
        length: 3000,
        failure_rate: 10.0,
        failure_drift_amplitude: 2.0,
        ..GeneratorConfig::default()
    }
}
