//! The online decision engine.
//!
//! Time advances over window ends `t = w..=T`. At each step the window's
//! features are computed once and every horizon's classifier scores them.
//! Targets `t_p` enter the pending set as soon as `t_p <= t + eta_max`;
//! pending targets are then scanned in increasing `t_p` with horizon
//! `eta = t_p - t`. A target is decided when its trigger fires, when
//! `eta == eta_min`, or at the last step `t == T`; the last two are recorded
//! as forced when the trigger did not fire. Every `t_p` in `[1, T]` receives
//! exactly one record.
//!
//! Targets that first become visible below `w + eta_max` start at a reduced
//! horizon. When `eta_min > -w`, targets `t_p < w + eta_min` are already
//! behind the first window; they are decided at `t = w` by `h_{eta_min}`,
//! recorded with horizon `eta_min` and flagged forced.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::classifiers::{ClassifierCollection, ProbClassifier};
use crate::cost::{Class, CostModel, HorizonRange};
use crate::data::{extract_features, extract_window, OpenTimeSeries};
use crate::error::{Error, Result};
use crate::triggers::{Trigger, TriggerContext};

/// Undecided target tracked by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PendingTarget {
    pub t_p: usize,
    pub first_evaluable_t: usize,
    pub last_evaluable_t: usize,
}

impl PendingTarget {
    pub fn new(t_p: usize, len: usize, horizons: &HorizonRange) -> Self {
        let w = horizons.window() as i64;
        let first = (t_p as i64 - horizons.eta_max() as i64).max(w);
        let last = (t_p as i64 - horizons.eta_min() as i64).min(len as i64).max(first);
        Self { t_p, first_evaluable_t: first as usize, last_evaluable_t: last as usize }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub t_p: usize,
    /// Window end at which the decision was taken.
    pub t: usize,
    pub eta: i32,
    pub predicted: Class,
    pub actual: Class,
    pub misclassification_cost: f64,
    pub delay_cost: f64,
    pub forced: bool,
}

impl DecisionRecord {
    pub fn cost(&self) -> f64 {
        self.misclassification_cost + self.delay_cost
    }
}

/// Posteriors of every horizon's classifier at every window end of a series.
///
/// Row `t - w` holds the posteriors for the window ending at `t`, in
/// ascending horizon order. Scoring is independent of the trigger and the
/// costs, so one scored series serves every method and cost setting.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSeries {
    id: String,
    horizons: HorizonRange,
    labels: Vec<Class>,
    posteriors: Vec<f64>,
}

impl ScoredSeries {
    /// Assemble from a posterior function `(t, eta) -> p`, evaluated for
    /// every window end `t in [w, T]` and horizon.
    pub fn from_fn(
        id: impl Into<String>,
        horizons: HorizonRange,
        labels: Vec<Class>,
        mut posterior: impl FnMut(usize, i32) -> f64,
    ) -> Result<Self> {
        let w = horizons.window();
        if labels.len() < w {
            return Err(Error::InsufficientData(format!("series of length {} is shorter than the window {w}", labels.len())));
        }
        let mut posteriors = Vec::with_capacity((labels.len() - w + 1) * horizons.len());
        for t in w..=labels.len() {
            posteriors.extend(horizons.horizons().map(|eta| posterior(t, eta)));
        }
        Ok(Self { id: id.into(), horizons, labels, posteriors })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn horizons(&self) -> &HorizonRange {
        &self.horizons
    }

    pub fn labels(&self) -> &[Class] {
        &self.labels
    }

    /// Posterior of `h_eta` on the window ending at `t`.
    pub fn posterior(&self, t: usize, eta: i32) -> f64 {
        let row = t - self.horizons.window();
        let col = (eta - self.horizons.eta_min()) as usize;
        self.posteriors[row * self.horizons.len() + col]
    }
}

/// Score a series with every classifier of the collection. Each window's
/// features are computed once and only from rows up to its end.
pub fn score_series<C: ProbClassifier>(
    series: &OpenTimeSeries,
    collection: &ClassifierCollection<C>,
) -> Result<ScoredSeries> {
    let horizons = *collection.horizons();
    let w = horizons.window();
    if series.len() < w {
        return Err(Error::InsufficientData(format!(
            "series {} of length {} is shorter than the window {w}",
            series.id(),
            series.len()
        )));
    }
    if series.layout() != collection.layout() {
        return Err(Error::InvalidConfig(format!(
            "series {} layout {:?} does not match the collection's {:?}",
            series.id(),
            series.layout(),
            collection.layout()
        )));
    }
    let mut posteriors = Vec::with_capacity((series.len() - w + 1) * horizons.len());
    let mut row = Vec::with_capacity(horizons.len());
    for t in w..=series.len() {
        let features = extract_features(&extract_window(series, t, w)?)?;
        collection.posteriors_into(&features, &mut row);
        posteriors.extend_from_slice(&row);
    }
    Ok(ScoredSeries { id: series.id().to_owned(), horizons, labels: series.labels().to_vec(), posteriors })
}

/// Drive `trigger` over a scored series, calling `emit(t_p, t, eta, forced)`
/// once per target in decision order.
fn drive(scored: &ScoredSeries, trigger: &dyn Trigger, mut emit: impl FnMut(usize, usize, i32, bool)) -> Result<()> {
    let horizons = scored.horizons;
    let len = scored.len();
    let w = horizons.window();
    let (eta_min, eta_max) = (horizons.eta_min() as i64, horizons.eta_max() as i64);

    let mut decided = 0;
    // (t_p, already evaluated at an earlier step)
    let mut pending: VecDeque<(usize, bool)> = VecDeque::new();
    let mut next_target = 1usize;
    let mut keep = VecDeque::new();

    for t in w..=len {
        let newest = (t as i64 + eta_max).min(len as i64) as usize;
        while next_target <= newest {
            pending.push_back((next_target, false));
            next_target += 1;
        }
        let last_step = t == len;
        keep.clear();
        for &(t_p, seen) in &pending {
            let lag = t_p as i64 - t as i64;
            if lag < eta_min {
                // Behind the first window: only possible when eta_min > -w.
                emit(t_p, t, eta_min as i32, true);
                decided += 1;
                continue;
            }
            let eta = lag as i32;
            let ctx = TriggerContext {
                eta,
                posterior: scored.posterior(t, eta),
                horizons,
                first_look: !seen,
            };
            let fire = trigger.decide(&ctx).fires();
            let forced = !fire && (lag == eta_min || last_step);
            if fire || forced {
                emit(t_p, t, eta, forced);
                decided += 1;
            } else {
                keep.push_back((t_p, true));
            }
        }
        std::mem::swap(&mut pending, &mut keep);
    }
    if !pending.is_empty() || decided != len {
        return Err(Error::Invariant(format!("{decided} of {len} targets decided")));
    }
    Ok(())
}

/// Run a trigger over a scored series.
pub fn run_scored(scored: &ScoredSeries, trigger: &dyn Trigger, cost: &CostModel) -> Result<Vec<DecisionRecord>> {
    if cost.horizons() != &scored.horizons {
        return Err(Error::InvalidConfig("cost model and classifiers use different horizon ranges".into()));
    }
    let mut records = Vec::with_capacity(scored.len());
    let mut failure = None;
    drive(scored, trigger, |t_p, t, eta, forced| match record(scored, cost, t_p, t, eta, forced) {
        Ok(r) => records.push(r),
        Err(e) => failure = Some(e),
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(records),
    }
}

/// Decisions of one trigger over a set of series, reduced to per-horizon
/// (predicted, actual) weights. Each decision on series `s` weighs
/// `1 / (S * T_s)`, so the dataset AvgCost under any cost model is a linear
/// function of the table.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionSummary {
    horizons: HorizonRange,
    weights: Vec<[[f64; 2]; 2]>,
}

impl DecisionSummary {
    pub fn collect(series: &[ScoredSeries], trigger: &dyn Trigger) -> Result<Self> {
        let horizons = match series.first() {
            Some(s) => s.horizons,
            None => return Err(Error::InsufficientData("no series to summarize".into())),
        };
        let mut weights = vec![[[0.0; 2]; 2]; horizons.len()];
        let mut counts = vec![[[0usize; 2]; 2]; horizons.len()];
        for s in series {
            if s.horizons != horizons {
                return Err(Error::InvalidConfig("series scored with different horizon ranges".into()));
            }
            counts.iter_mut().for_each(|c| *c = [[0; 2]; 2]);
            drive(s, trigger, |t_p, t, eta, _| {
                let predicted = Class::from_posterior(s.posterior(t, eta));
                let actual = s.labels[t_p - 1];
                counts[(eta - horizons.eta_min()) as usize][predicted.index()][actual.index()] += 1;
            })?;
            let scale = (series.len() * s.len()) as f64;
            for (w, c) in weights.iter_mut().zip(&counts) {
                for (wr, cr) in w.iter_mut().zip(c) {
                    for (wv, cv) in wr.iter_mut().zip(cr) {
                        *wv += *cv as f64 / scale;
                    }
                }
            }
        }
        Ok(Self { horizons, weights })
    }

    /// Dataset AvgCost of the summarized decisions.
    pub fn avg_cost(&self, cost: &CostModel) -> Result<f64> {
        if cost.horizons() != &self.horizons {
            return Err(Error::InvalidConfig("cost model and summary use different horizon ranges".into()));
        }
        let mut total = 0.0;
        for (eta, w) in self.horizons.horizons().zip(&self.weights) {
            let delay = cost.delay_cost(eta)?;
            for predicted in Class::ALL {
                for actual in Class::ALL {
                    let weight = w[predicted.index()][actual.index()];
                    if weight > 0.0 {
                        total += weight * (cost.misclassification_cost(predicted, actual) + delay);
                    }
                }
            }
        }
        Ok(total)
    }
}

fn record(scored: &ScoredSeries, cost: &CostModel, t_p: usize, t: usize, eta: i32, forced: bool) -> Result<DecisionRecord> {
    let predicted = Class::from_posterior(scored.posterior(t, eta));
    let actual = scored.labels[t_p - 1];
    Ok(DecisionRecord {
        t_p,
        t,
        eta,
        predicted,
        actual,
        misclassification_cost: cost.misclassification_cost(predicted, actual),
        delay_cost: cost.delay_cost(eta)?,
        forced,
    })
}

/// Score `series` with `collection` and run `trigger` over it.
pub fn run_stream<C: ProbClassifier>(
    series: &OpenTimeSeries,
    collection: &ClassifierCollection<C>,
    trigger: &dyn Trigger,
    cost: &CostModel,
) -> Result<Vec<DecisionRecord>> {
    run_scored(&score_series(series, collection)?, trigger, cost)
}

/// Mean combined cost over all `len` timestamps of a series. Costs are
/// recomputed from `(predicted, actual, eta)`; every `t_p in [1, len]` must
/// have exactly one record.
pub fn avg_cost_series(records: &[DecisionRecord], len: usize, cost: &CostModel) -> Result<f64> {
    if len == 0 {
        return Err(Error::Coverage("series has no timestamps".into()));
    }
    let mut seen = vec![false; len];
    let mut total = 0.0;
    for r in records {
        if r.t_p == 0 || r.t_p > len {
            return Err(Error::Coverage(format!("target {} outside [1, {len}]", r.t_p)));
        }
        if std::mem::replace(&mut seen[r.t_p - 1], true) {
            return Err(Error::Coverage(format!("target {} decided twice", r.t_p)));
        }
        total += cost.combined_cost(r.predicted, r.actual, r.eta)?;
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::Coverage(format!("target {} never decided", missing + 1)));
    }
    Ok(total / len as f64)
}

/// Unweighted mean of per-series average costs.
pub fn avg_cost_dataset(per_series: &[f64]) -> Result<f64> {
    if per_series.is_empty() {
        return Err(Error::InsufficientData("no series to average".into()));
    }
    Ok(per_series.iter().sum::<f64>() / per_series.len() as f64)
}

pub fn horizon_histogram<'a>(records: impl IntoIterator<Item = &'a DecisionRecord>) -> BTreeMap<i32, usize> {
    let mut hist = BTreeMap::new();
    for r in records {
        *hist.entry(r.eta).or_insert(0) += 1;
    }
    hist
}

/// Aggregate outcome of one trigger over a set of series.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub avg_cost: f64,
    pub per_series_cost: Vec<f64>,
    pub mean_horizon: f64,
    pub forced_fraction: f64,
    pub histogram: BTreeMap<i32, usize>,
}

/// Run `trigger` over every series and aggregate. `sink` receives each
/// series' records in input order.
pub fn evaluate(
    series: &[ScoredSeries],
    trigger: &dyn Trigger,
    cost: &CostModel,
    mut sink: impl FnMut(&ScoredSeries, &[DecisionRecord]),
) -> Result<Evaluation> {
    let mut per_series_cost = Vec::with_capacity(series.len());
    let mut histogram = BTreeMap::new();
    let (mut count, mut eta_sum, mut forced) = (0usize, 0i64, 0usize);
    for s in series {
        let records = run_scored(s, trigger, cost)?;
        per_series_cost.push(avg_cost_series(&records, s.len(), cost)?);
        for r in &records {
            *histogram.entry(r.eta).or_insert(0) += 1;
            eta_sum += r.eta as i64;
            forced += r.forced as usize;
        }
        count += records.len();
        sink(s, &records);
    }
    Ok(Evaluation {
        avg_cost: avg_cost_dataset(&per_series_cost)?,
        per_series_cost,
        mean_horizon: eta_sum as f64 / count as f64,
        forced_fraction: forced as f64 / count as f64,
        histogram,
    })
}

/// Average cost only; used by the tuning sweeps.
pub fn dataset_cost(series: &[ScoredSeries], trigger: &dyn Trigger, cost: &CostModel) -> Result<f64> {
    let per_series = series
        .iter()
        .map(|s| avg_cost_series(&run_scored(s, trigger, cost)?, s.len(), cost))
        .collect::<Result<Vec<_>>>()?;
    avg_cost_dataset(&per_series)
}
