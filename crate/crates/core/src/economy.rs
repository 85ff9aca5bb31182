//! Non-myopic trigger over confidence groups.
//!
//! At every horizon the posteriors of `h_eta` on estimation data are cut into
//! at most `K` equal-frequency groups. Each group carries a label prior and a
//! confusion matrix of the hard prediction, and adjacent horizons are linked
//! by a transition matrix counted from target trajectories. At decision time
//! the current group is projected to every remaining horizon and the expected
//! combined cost of deciding there is compared with deciding now.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{ClassifierCollection, ProbClassifier};
use crate::cost::{Class, CostMatrix, CostModel, HorizonRange, TriggerDecision};
use crate::data::HorizonDatasets;
use crate::error::{Error, Result};
use crate::streaming::{DecisionSummary, ScoredSeries};
use crate::triggers::{Trigger, TriggerContext};

const STOCHASTIC_TOL: f64 = 1e-12;

/// Groups and their statistics at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonGroups {
    /// Strictly ascending cut points; group `j` covers `[b[j-1], b[j])`.
    pub boundaries: Vec<f64>,
    /// `priors[g][y] = P(y | g)`.
    pub priors: Vec<[f64; 2]>,
    /// `confusions[g][y][y_hat] = P(y_hat | y, g)`.
    pub confusions: Vec<[[f64; 2]; 2]>,
    /// `transition[i][j] = P(group j at eta - 1 | group i at eta)`; empty at `eta_min`.
    pub transition: Vec<Vec<f64>>,
}

impl HorizonGroups {
    pub fn num_groups(&self) -> usize {
        self.boundaries.len() + 1
    }

    pub fn group_of(&self, posterior: f64) -> usize {
        self.boundaries.partition_point(|&b| b <= posterior)
    }

    /// Expected misclassification cost of each group.
    fn expected_misclassification(&self, cm: &CostMatrix) -> Vec<f64> {
        self.priors
            .iter()
            .zip(&self.confusions)
            .map(|(prior, conf)| {
                let mut total = 0.0;
                for y in Class::ALL {
                    for y_hat in Class::ALL {
                        total += prior[y.index()] * conf[y.index()][y_hat.index()] * cm.get(y_hat, y);
                    }
                }
                total
            })
            .collect()
    }
}

fn stochastic(row: &[f64]) -> bool {
    row.iter().all(|&v| v >= 0.0 && v.is_finite()) && (row.iter().sum::<f64>() - 1.0).abs() <= STOCHASTIC_TOL
}

/// Probabilities over the groups of one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Membership {
    pub eta: i32,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EconomyModel {
    horizons: HorizonRange,
    k: usize,
    /// One entry per horizon, ascending.
    levels: Vec<HorizonGroups>,
}

impl EconomyModel {
    pub fn from_parts(horizons: HorizonRange, k: usize, levels: Vec<HorizonGroups>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidConfig("K must be at least 1".into()));
        }
        if levels.len() != horizons.len() {
            return Err(Error::InvalidConfig(format!("{} horizon levels for {} horizons", levels.len(), horizons.len())));
        }
        for (i, level) in levels.iter().enumerate() {
            let eta = horizons.eta_at(i);
            let n = level.num_groups();
            let bad = |what: &str| Err(Error::InvalidConfig(format!("horizon {eta}: {what}")));
            if n > k {
                return bad("more groups than K");
            }
            if level.boundaries.windows(2).any(|w| w[0] >= w[1]) || level.boundaries.iter().any(|b| !b.is_finite()) {
                return bad("boundaries not strictly ascending");
            }
            if level.priors.len() != n || level.confusions.len() != n {
                return bad("group statistics do not match the group count");
            }
            if !level.priors.iter().all(|p| stochastic(p)) || !level.confusions.iter().flatten().all(|r| stochastic(r)) {
                return bad("priors or confusion rows are not distributions");
            }
            let expected_rows = if i == 0 { 0 } else { n };
            if level.transition.len() != expected_rows {
                return bad("transition has the wrong number of rows");
            }
            if i > 0 {
                let next = levels[i - 1].num_groups();
                if level.transition.iter().any(|row| row.len() != next || !stochastic(row)) {
                    return bad("transition rows are not distributions over the next horizon's groups");
                }
            }
        }
        Ok(Self { horizons, k, levels })
    }

    pub fn horizons(&self) -> &HorizonRange {
        &self.horizons
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn level(&self, eta: i32) -> Result<&HorizonGroups> {
        Ok(&self.levels[self.horizons.index(eta)?])
    }

    pub fn levels(&self) -> &[HorizonGroups] {
        &self.levels
    }
}

/// Posteriors of one estimation target at every horizon, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub label: Class,
    pub posteriors: Vec<f64>,
}

fn quantile_boundaries(sorted: &[f64], k: usize) -> Vec<f64> {
    let n = sorted.len();
    let mut cuts: Vec<f64> = (1..k).map(|i| sorted[i * n / k]).filter(|&c| c > sorted[0]).collect();
    cuts.dedup();
    cuts
}

fn smoothed(counts: &[f64]) -> Vec<f64> {
    let total: f64 = counts.iter().sum::<f64>() + counts.len() as f64;
    counts.iter().map(|c| (c + 1.0) / total).collect()
}

/// Fit from target trajectories. Groups are equal-frequency quantiles of each
/// horizon's posteriors; counts are add-one smoothed.
pub fn fit_from_trajectories(horizons: HorizonRange, k: usize, trajectories: &[Trajectory]) -> Result<EconomyModel> {
    if k == 0 {
        return Err(Error::InvalidConfig("K must be at least 1".into()));
    }
    if trajectories.is_empty() {
        return Err(Error::InsufficientData("no estimation targets".into()));
    }
    if let Some(t) = trajectories.iter().find(|t| t.posteriors.len() != horizons.len()) {
        return Err(Error::InvalidConfig(format!("trajectory of length {} for {} horizons", t.posteriors.len(), horizons.len())));
    }
    if trajectories.iter().flat_map(|t| &t.posteriors).any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::NonFinite("posteriors outside [0, 1]".into()));
    }

    let columns: Vec<(Vec<f64>, Vec<usize>)> = (0..horizons.len())
        .into_par_iter()
        .map(|i| {
            let mut sorted: Vec<f64> = trajectories.iter().map(|t| t.posteriors[i]).collect();
            sorted.sort_by(f64::total_cmp);
            let boundaries = quantile_boundaries(&sorted, k);
            let groups = trajectories.iter().map(|t| boundaries.partition_point(|&b| b <= t.posteriors[i])).collect();
            (boundaries, groups)
        })
        .collect();

    let levels = columns
        .iter()
        .enumerate()
        .map(|(i, (boundaries, groups))| {
            let n = boundaries.len() + 1;
            let mut label_counts = vec![[0.0; 2]; n];
            let mut confusion_counts = vec![[[0.0; 2]; 2]; n];
            for (t, &g) in trajectories.iter().zip(groups) {
                let y = t.label.index();
                label_counts[g][y] += 1.0;
                confusion_counts[g][y][Class::from_posterior(t.posteriors[i]).index()] += 1.0;
            }
            let priors = label_counts.iter().map(|c| smoothed(c).try_into().unwrap()).collect();
            let confusions = confusion_counts
                .iter()
                .map(|rows| rows.map(|r| smoothed(&r).try_into().unwrap()))
                .collect();
            let transition = if i == 0 {
                Vec::new()
            } else {
                let (prev_boundaries, prev_groups) = &columns[i - 1];
                let mut counts = vec![vec![0.0; prev_boundaries.len() + 1]; n];
                for (&from, &to) in groups.iter().zip(prev_groups) {
                    counts[from][to] += 1.0;
                }
                counts.iter().map(|row| smoothed(row)).collect()
            };
            HorizonGroups { boundaries: boundaries.clone(), priors, confusions, transition }
        })
        .collect();
    EconomyModel::from_parts(horizons, k, levels)
}

/// Fit from aligned per-horizon datasets scored by the collection.
pub fn fit_economy<C: ProbClassifier>(
    collection: &ClassifierCollection<C>,
    estimation: &HorizonDatasets,
    k: usize,
) -> Result<EconomyModel> {
    let horizons = *collection.horizons();
    if estimation.horizons() != &horizons {
        return Err(Error::InvalidConfig("estimation horizons differ from the collection's".into()));
    }
    let n = estimation.num_targets();
    let mut trajectories: Vec<Trajectory> = Vec::with_capacity(n);
    for (i, ds) in estimation.iter().enumerate() {
        let model = collection.get(ds.eta)?;
        for (j, ex) in ds.examples.iter().enumerate() {
            if i == 0 {
                trajectories.push(Trajectory { label: ex.label, posteriors: Vec::with_capacity(horizons.len()) });
            }
            trajectories[j].posteriors.push(model.predict_proba(&ex.features));
        }
    }
    fit_from_trajectories(horizons, k, &trajectories)
}

/// Trajectories of every timestamp of the scored series whose full horizon
/// range lies inside the series: `posterior(t_p - eta, eta)` for each `eta`.
pub fn dense_trajectories(series: &[ScoredSeries]) -> Vec<Trajectory> {
    let mut out = Vec::new();
    for s in series {
        let h = s.horizons();
        let first = h.window() as i64 + h.eta_max() as i64;
        let last = s.len() as i64 + h.eta_min() as i64;
        for t_p in first..=last {
            out.push(Trajectory {
                label: s.labels()[t_p as usize - 1],
                posteriors: h.horizons().map(|eta| s.posterior((t_p - eta as i64) as usize, eta)).collect(),
            });
        }
    }
    out
}

/// Fit from every full trajectory of the scored estimation series.
pub fn fit_economy_scored(series: &[ScoredSeries], k: usize) -> Result<EconomyModel> {
    let horizons = match series.first() {
        Some(s) => *s.horizons(),
        None => return Err(Error::InsufficientData("empty estimation split".into())),
    };
    fit_from_trajectories(horizons, k, &dense_trajectories(series))
}

/// One-hot membership of the group containing `posterior` at `eta`.
pub fn current_membership(model: &EconomyModel, eta: i32, posterior: f64) -> Result<Membership> {
    let level = model.level(eta)?;
    let mut probabilities = vec![0.0; level.num_groups()];
    probabilities[level.group_of(posterior)] = 1.0;
    Ok(Membership { eta, probabilities })
}

/// Carry a membership from its horizon down to `to` through the transition chain.
pub fn project_membership(model: &EconomyModel, membership: &Membership, to: i32) -> Result<Membership> {
    let from = membership.eta;
    let h = model.horizons();
    h.index(from)?;
    h.index(to)?;
    if to > from {
        return Err(Error::HorizonOutOfRange { eta: to, eta_min: h.eta_min(), eta_max: from });
    }
    if membership.probabilities.len() != model.level(from)?.num_groups() {
        return Err(Error::InvalidConfig("membership size differs from the horizon's group count".into()));
    }
    let mut m = membership.probabilities.clone();
    for eta in ((to + 1)..=from).rev() {
        m = step(&model.level(eta)?.transition, &m);
    }
    Ok(Membership { eta: to, probabilities: m })
}

fn step(transition: &[Vec<f64>], m: &[f64]) -> Vec<f64> {
    let mut next = vec![0.0; transition[0].len()];
    for (mi, row) in m.iter().zip(transition) {
        for (n, t) in next.iter_mut().zip(row) {
            *n += mi * t;
        }
    }
    next
}

/// Expected combined cost of deciding at the membership's horizon.
pub fn expected_cost_at(model: &EconomyModel, cost: &CostModel, membership: &Membership) -> Result<f64> {
    let level = model.level(membership.eta)?;
    if membership.probabilities.len() != level.num_groups() {
        return Err(Error::InvalidConfig("membership size differs from the horizon's group count".into()));
    }
    let misclassification: f64 = level
        .expected_misclassification(cost.matrix())
        .iter()
        .zip(&membership.probabilities)
        .map(|(e, m)| e * m)
        .sum();
    Ok(misclassification + cost.delay_cost(membership.eta)?)
}

/// Fire iff deciding now is no more expensive than any reachable later horizon.
pub fn economy_trigger(model: &EconomyModel, cost: &CostModel, ctx: &TriggerContext) -> Result<TriggerDecision> {
    let h = model.horizons();
    if ctx.eta == h.eta_min() {
        return Ok(TriggerDecision::Fire);
    }
    let current = current_membership(model, ctx.eta, ctx.posterior)?;
    let now = expected_cost_at(model, cost, &current)?;
    let mut m = current;
    for eta in (h.eta_min()..ctx.eta).rev() {
        m = Membership { eta, probabilities: step(&model.level(eta + 1)?.transition, &m.probabilities) };
        if expected_cost_at(model, cost, &m)? < now {
            return Ok(TriggerDecision::Wait);
        }
    }
    Ok(TriggerDecision::Fire)
}

/// The economy decision precomputed for every (horizon, group) under one cost model.
#[derive(Debug, Clone, PartialEq)]
pub struct EconomyPolicy {
    groups: Vec<Vec<f64>>,
    fire: Vec<Vec<bool>>,
    horizons: HorizonRange,
    k: usize,
}

impl EconomyPolicy {
    pub fn compile(model: &EconomyModel, cost: &CostModel) -> Result<Self> {
        let h = *model.horizons();
        if cost.horizons() != &h {
            return Err(Error::InvalidConfig("cost model and economy model use different horizon ranges".into()));
        }
        let expected: Vec<Vec<f64>> = h
            .horizons()
            .zip(&model.levels)
            .map(|(eta, level)| {
                let delay = cost.delay_cost(eta)?;
                Ok(level.expected_misclassification(cost.matrix()).into_iter().map(|e| e + delay).collect())
            })
            .collect::<Result<_>>()?;
        // fire[i][g]: project group g at horizon i down the chain and wait
        // as soon as some later horizon is strictly cheaper.
        let fire = (0..h.len())
            .map(|i| {
                (0..model.levels[i].num_groups())
                    .map(|g| {
                        if i == 0 {
                            return true;
                        }
                        let now = expected[i][g];
                        let mut m = vec![0.0; model.levels[i].num_groups()];
                        m[g] = 1.0;
                        for j in (0..i).rev() {
                            m = step(&model.levels[j + 1].transition, &m);
                            let later: f64 = m.iter().zip(&expected[j]).map(|(a, b)| a * b).sum();
                            if later < now {
                                return false;
                            }
                        }
                        true
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            groups: model.levels.iter().map(|l| l.boundaries.clone()).collect(),
            fire,
            horizons: h,
            k: model.k,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fires_at(&self, eta: i32, group: usize) -> bool {
        self.fire[(eta - self.horizons.eta_min()) as usize][group]
    }
}

impl Trigger for EconomyPolicy {
    fn decide(&self, ctx: &TriggerContext) -> TriggerDecision {
        let i = (ctx.eta - self.horizons.eta_min()) as usize;
        let g = self.groups[i].partition_point(|&b| b <= ctx.posterior);
        if self.fire[i][g] {
            TriggerDecision::Fire
        } else {
            TriggerDecision::Wait
        }
    }
}

/// Pick the model with the lowest validation cost; ties go to the smaller K.
pub fn tune_economy<'a>(
    models: &'a [EconomyModel],
    validation: &[ScoredSeries],
    cost: &CostModel,
) -> Result<(&'a EconomyModel, EconomyPolicy, f64)> {
    if models.is_empty() {
        return Err(Error::InvalidConfig("no economy models to choose from".into()));
    }
    let mut order: Vec<&EconomyModel> = models.iter().collect();
    order.sort_by_key(|m| m.k);
    let scored = order
        .par_iter()
        .map(|m| {
            let policy = EconomyPolicy::compile(m, cost)?;
            let c = DecisionSummary::collect(validation, &policy)?.avg_cost(cost)?;
            Ok((*m, policy, c))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = None;
    for cell in scored {
        if best.as_ref().is_none_or(|b: &(&EconomyModel, EconomyPolicy, f64)| cell.2 < b.2) {
            best = Some(cell);
        }
    }
    Ok(best.unwrap())
}
