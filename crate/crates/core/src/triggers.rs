//! Trigger rules deciding, per target and time step, whether to emit the
//! prediction now or wait for a smaller horizon.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{CostModel, HorizonRange, TriggerDecision};
use crate::error::{Error, Result};
use crate::streaming::{dataset_cost, ScoredSeries};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerContext {
    pub eta: i32,
    /// Posterior of the failure class from `h_eta`.
    pub posterior: f64,
    pub horizons: HorizonRange,
    /// True the first time the engine consults the trigger for this target.
    pub first_look: bool,
}

pub trait Trigger: Send + Sync {
    fn decide(&self, ctx: &TriggerContext) -> TriggerDecision;
}

impl<T: Trigger + ?Sized> Trigger for &T {
    fn decide(&self, ctx: &TriggerContext) -> TriggerDecision {
        (**self).decide(ctx)
    }
}

impl<T: Trigger + ?Sized> Trigger for Box<T> {
    fn decide(&self, ctx: &TriggerContext) -> TriggerDecision {
        (**self).decide(ctx)
    }
}

fn fire_if(cond: bool) -> TriggerDecision {
    if cond {
        TriggerDecision::Fire
    } else {
        TriggerDecision::Wait
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct SrParams {
    gamma: [f64; 3],
}

impl SrParams {
    pub fn new(gamma: [f64; 3]) -> Result<Self> {
        if gamma.iter().any(|g| !(-1.0..=1.0).contains(g)) {
            return Err(Error::InvalidConfig(format!("SR parameters {gamma:?} outside [-1, 1]")));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> [f64; 3] {
        self.gamma
    }

    pub fn score(&self, posterior: f64, eta: i32, horizons: &HorizonRange) -> f64 {
        let p1 = posterior.max(1.0 - posterior);
        let p2 = 2.0 * p1 - 1.0;
        let r = horizons.relative_position(eta);
        self.gamma[0] * p1 + self.gamma[1] * p2 + self.gamma[2] * r
    }
}

impl TryFrom<[f64; 3]> for SrParams {
    type Error = Error;

    fn try_from(gamma: [f64; 3]) -> Result<Self> {
        Self::new(gamma)
    }
}

impl From<SrParams> for [f64; 3] {
    fn from(p: SrParams) -> Self {
        p.gamma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct CcParams {
    theta: f64,
}

impl CcParams {
    pub fn new(theta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::InvalidConfig(format!("threshold {theta} outside [0, 1]")));
        }
        Ok(Self { theta })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }
}

impl TryFrom<f64> for CcParams {
    type Error = Error;

    fn try_from(theta: f64) -> Result<Self> {
        Self::new(theta)
    }
}

impl From<CcParams> for f64 {
    fn from(p: CcParams) -> Self {
        p.theta
    }
}

pub fn sr_trigger(ctx: &TriggerContext, params: &SrParams) -> TriggerDecision {
    fire_if(params.score(ctx.posterior, ctx.eta, &ctx.horizons) > 0.0)
}

pub fn cc_trigger(ctx: &TriggerContext, params: &CcParams) -> TriggerDecision {
    fire_if(ctx.posterior > params.theta)
}

/// Fires at `eta_max`, or at the first evaluable horizon of a target that
/// never reaches `eta_max`.
pub fn early_trigger(ctx: &TriggerContext) -> TriggerDecision {
    fire_if(ctx.eta == ctx.horizons.eta_max() || ctx.first_look)
}

/// Never fires; every decision comes from forcing.
pub fn late_trigger(_ctx: &TriggerContext) -> TriggerDecision {
    TriggerDecision::Wait
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SrTrigger(pub SrParams);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcTrigger(pub CcParams);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EarlyTrigger;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LateTrigger;

impl Trigger for SrTrigger {
    fn decide(&self, ctx: &TriggerContext) -> TriggerDecision {
        sr_trigger(ctx, &self.0)
    }
}

impl Trigger for CcTrigger {
    fn decide(&self, ctx: &TriggerContext) -> TriggerDecision {
        cc_trigger(ctx, &self.0)
    }
}

impl Trigger for EarlyTrigger {
    fn decide(&self, ctx: &TriggerContext) -> TriggerDecision {
        early_trigger(ctx)
    }
}

impl Trigger for LateTrigger {
    fn decide(&self, ctx: &TriggerContext) -> TriggerDecision {
        late_trigger(ctx)
    }
}

pub const SR_GAMMA_VALUES: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];

/// All 125 triples, in lexicographic order.
pub fn sr_grid() -> Vec<SrParams> {
    let mut grid = Vec::with_capacity(125);
    for g1 in SR_GAMMA_VALUES {
        for g2 in SR_GAMMA_VALUES {
            for g3 in SR_GAMMA_VALUES {
                grid.push(SrParams { gamma: [g1, g2, g3] });
            }
        }
    }
    grid
}

/// Thresholds 0.00, 0.05, ..., 1.00.
pub fn theta_grid() -> Vec<CcParams> {
    (0..=20).map(|i| CcParams { theta: i as f64 / 20.0 }).collect()
}

/// Outcome of a grid search: the chosen point, its cost, and every point's cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Tuned<P> {
    pub params: P,
    pub avg_cost: f64,
    pub costs: Vec<f64>,
}

/// Evaluate every candidate on `validation` and return the cheapest.
/// Candidates are scored concurrently; ties go to the earliest in `grid`.
pub fn tune_grid<P, T>(
    validation: &[ScoredSeries],
    cost: &CostModel,
    grid: &[P],
    make: impl Fn(&P) -> T + Sync,
) -> Result<Tuned<P>>
where
    P: Clone + Sync,
    T: Trigger,
{
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty tuning grid".into()));
    }
    if validation.is_empty() {
        return Err(Error::InsufficientData("empty validation split".into()));
    }
    let costs = grid
        .par_iter()
        .map(|p| dataset_cost(validation, &make(p), cost))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, &c) in costs.iter().enumerate() {
        if c < costs[best] {
            best = i;
        }
    }
    Ok(Tuned { params: grid[best].clone(), avg_cost: costs[best], costs })
}

/// Grid search over SR triples. Pass a grid in lexicographic order for the
/// lexicographic tie rule; `sr_grid()` is.
pub fn tune_sr(validation: &[ScoredSeries], cost: &CostModel, grid: &[SrParams]) -> Result<Tuned<SrParams>> {
    tune_grid(validation, cost, grid, |p| SrTrigger(*p))
}

/// Grid search over thresholds; ties go to the smaller threshold.
pub fn tune_cc(validation: &[ScoredSeries], cost: &CostModel, grid: &[CcParams]) -> Result<Tuned<CcParams>> {
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.theta.total_cmp(&b.theta));
    sorted.dedup();
    tune_grid(validation, cost, &sorted, |p| CcTrigger(*p))
}
