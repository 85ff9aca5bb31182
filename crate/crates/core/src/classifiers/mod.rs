//! Per-horizon probabilistic classifiers.
//!
//! A [`ClassifierCollection`] holds one model `h_eta` for every horizon of a
//! [`HorizonRange`]; all members read the same [`FeatureLayout`]. Any type
//! implementing [`ProbClassifier`] can populate a collection. The harness
//! uses [`HorizonModel`]: the reference logistic model, or a constant
//! base-rate model for horizons whose training data has a single class.

mod auc;
mod logistic;

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{Class, CostMatrix, HorizonRange};
use crate::data::{FeatureLayout, HorizonDataset, HorizonDatasets, TargetId, WindowFeatures};
use crate::error::{Error, Result};

pub use auc::{auc, auc_profile};
pub use logistic::{train_reference, LogisticObjective, ReferenceClassifier, GRADIENT_TOL, MAX_ITERATIONS};

/// A trained model returning `P(y = 1 | window)`.
pub trait ProbClassifier: Send + Sync {
    fn predict_proba(&self, features: &WindowFeatures) -> f64;
}

impl<C: ProbClassifier + ?Sized> ProbClassifier for Box<C> {
    fn predict_proba(&self, features: &WindowFeatures) -> f64 {
        (**self).predict_proba(features)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HorizonModel {
    Logistic(ReferenceClassifier),
    /// Smoothed base rate `(n1 + 1) / (n + 2)`, used when a horizon's
    /// training data holds a single class.
    Constant { probability: f64 },
}

impl ProbClassifier for HorizonModel {
    fn predict_proba(&self, features: &WindowFeatures) -> f64 {
        match self {
            HorizonModel::Logistic(m) => m.predict_proba(features),
            HorizonModel::Constant { probability } => *probability,
        }
    }
}

/// How the positive-class weight is chosen for each horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoPolicy {
    /// `#negatives / #positives` of the data being fitted.
    NegativesOverPositives,
    Fixed(f64),
}

impl RhoPolicy {
    fn rho(self, counts: [usize; 2]) -> f64 {
        match self {
            RhoPolicy::NegativesOverPositives => counts[0] as f64 / counts[1] as f64,
            RhoPolicy::Fixed(r) => r,
        }
    }
}

/// Fit a horizon model, falling back to the constant model on single-class
/// (or empty) data.
pub fn fit_horizon_model(dataset: &HorizonDataset, lambda: f64, rho: RhoPolicy) -> Result<HorizonModel> {
    let counts = dataset.class_counts();
    if counts[0] == 0 || counts[1] == 0 {
        let n = dataset.len() as f64;
        return Ok(HorizonModel::Constant { probability: (counts[1] as f64 + 1.0) / (n + 2.0) });
    }
    Ok(HorizonModel::Logistic(train_reference(dataset, lambda, rho.rho(counts))?))
}

/// One classifier per horizon, stored in ascending horizon order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierCollection<C = HorizonModel> {
    horizons: HorizonRange,
    layout: FeatureLayout,
    members: Vec<C>,
}

impl<C: ProbClassifier> ClassifierCollection<C> {
    pub fn new(horizons: HorizonRange, layout: FeatureLayout, members: Vec<C>) -> Result<Self> {
        if members.len() != horizons.len() {
            return Err(Error::InvalidConfig(format!(
                "{} classifiers for {} horizons",
                members.len(),
                horizons.len()
            )));
        }
        Ok(Self { horizons, layout, members })
    }

    /// Build a collection by calling `make(eta)` for every horizon.
    pub fn from_fn(horizons: HorizonRange, layout: FeatureLayout, make: impl FnMut(i32) -> C) -> Self {
        Self { horizons, layout, members: horizons.horizons().map(make).collect() }
    }

    pub fn horizons(&self) -> &HorizonRange {
        &self.horizons
    }

    pub fn layout(&self) -> FeatureLayout {
        self.layout
    }

    pub fn get(&self, eta: i32) -> Result<&C> {
        Ok(&self.members[self.horizons.index(eta)?])
    }

    pub fn members(&self) -> &[C] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Posterior of every horizon's classifier for one window, ascending
    /// horizon order.
    pub fn posteriors_into(&self, features: &WindowFeatures, out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.members.iter().map(|m| m.predict_proba(features)));
    }
}

/// Collection training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub lambda_grid: Vec<f64>,
    pub rho: RhoPolicy,
    /// Fraction of each horizon's targets held out to select lambda.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lambda_grid: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            rho: RhoPolicy::NegativesOverPositives,
            holdout_fraction: 0.2,
            seed: 0,
        }
    }
}

/// What was selected for one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonReport {
    pub eta: i32,
    pub lambda: f64,
    /// Held-out misclassification cost of each lambda, in grid order. Empty
    /// when the grid has a single value.
    pub heldout_costs: Vec<f64>,
    pub negatives: usize,
    pub positives: usize,
    pub constant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub config: TrainingConfig,
    pub cost_matrix: CostMatrix,
    pub horizons: Vec<HorizonReport>,
}

fn subset(dataset: &HorizonDataset, keep: impl Fn(&TargetId) -> bool) -> HorizonDataset {
    HorizonDataset {
        eta: dataset.eta,
        examples: dataset.examples.iter().filter(|e| keep(&e.target)).cloned().collect(),
    }
}

/// Total misclassification cost at the 0.5 threshold.
pub fn misclassification_total<C: ProbClassifier>(model: &C, dataset: &HorizonDataset, cost: &CostMatrix) -> f64 {
    dataset
        .examples
        .iter()
        .map(|e| cost.get(Class::from_posterior(model.predict_proba(&e.features)), e.label))
        .sum()
}

/// Train every horizon independently. For each horizon a seeded
/// `holdout_fraction` of the targets is held out, each lambda is fitted on
/// the rest and scored by total misclassification cost on the held-out
/// targets; the cheapest lambda (first in grid order on ties) is refitted
/// on all of the horizon's data.
pub fn tune_and_train_collection(
    datasets: &HorizonDatasets,
    cost: &CostMatrix,
    config: &TrainingConfig,
) -> Result<(ClassifierCollection<HorizonModel>, TrainingReport)> {
    if config.lambda_grid.is_empty() {
        return Err(Error::InvalidConfig("lambda grid is empty".into()));
    }
    if !(0.0..1.0).contains(&config.holdout_fraction) {
        return Err(Error::InvalidConfig(format!(
            "holdout fraction must lie in [0, 1), got {}",
            config.holdout_fraction
        )));
    }
    let layout = datasets
        .layout()
        .ok_or_else(|| Error::InsufficientData("no training series".into()))?;

    // Targets are aligned across horizons, so one held-out set serves all.
    let mut targets: Vec<TargetId> =
        datasets.iter().next().map(|d| d.examples.iter().map(|e| e.target).collect()).unwrap_or_default();
    targets.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let n_held = (targets.len() as f64 * config.holdout_fraction).floor() as usize;
    let mut held: Vec<TargetId> = targets[..n_held].to_vec();
    held.sort_unstable();

    let fitted: Vec<(HorizonModel, HorizonReport)> = datasets
        .iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|ds| {
            let mut heldout_costs = Vec::new();
            let mut lambda = config.lambda_grid[0];
            if config.lambda_grid.len() > 1 {
                let fit_part = subset(ds, |t| held.binary_search(t).is_err());
                let eval_part = subset(ds, |t| held.binary_search(t).is_ok());
                for &candidate in &config.lambda_grid {
                    let model = fit_horizon_model(&fit_part, candidate, config.rho)?;
                    heldout_costs.push(misclassification_total(&model, &eval_part, cost));
                }
                let best = heldout_costs
                    .iter()
                    .enumerate()
                    .fold(0, |best, (i, c)| if *c < heldout_costs[best] { i } else { best });
                lambda = config.lambda_grid[best];
            }
            let model = fit_horizon_model(ds, lambda, config.rho)?;
            let counts = ds.class_counts();
            let report = HorizonReport {
                eta: ds.eta,
                lambda,
                heldout_costs,
                negatives: counts[0],
                positives: counts[1],
                constant: matches!(model, HorizonModel::Constant { .. }),
            };
            Ok((model, report))
        })
        .collect::<Result<_>>()?;

    let (members, reports): (Vec<_>, Vec<_>) = fitted.into_iter().unzip();
    let collection = ClassifierCollection::new(*datasets.horizons(), layout, members)?;
    let report = TrainingReport { config: config.clone(), cost_matrix: *cost, horizons: reports };
    Ok((collection, report))
}

/// The on-disk model document: a JSON file holding the collection, the
/// feature names and the training report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format: String,
    pub version: u32,
    pub feature_names: Vec<String>,
    pub collection: ClassifierCollection<HorizonModel>,
    pub training: TrainingReport,
}

impl ModelArtifact {
    pub const FORMAT: &'static str = "ecots-classifier-collection";
    pub const VERSION: u32 = 1;

    pub fn new(collection: ClassifierCollection<HorizonModel>, training: TrainingReport) -> Self {
        Self {
            format: Self::FORMAT.to_owned(),
            version: Self::VERSION,
            feature_names: collection.layout().names(),
            collection,
            training,
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let artifact: Self = serde_json::from_str(&text)?;
        if artifact.format != Self::FORMAT || artifact.version != Self::VERSION {
            return Err(Error::parse(
                path,
                1,
                format!("unsupported model format {} v{}", artifact.format, artifact.version),
            ));
        }
        let c = &artifact.collection;
        if c.members().len() != c.horizons().len() || artifact.feature_names != c.layout().names() {
            return Err(Error::parse(path, 1, "model document is inconsistent"));
        }
        Ok(artifact)
    }
}
