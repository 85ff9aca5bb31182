//! Early classification in open time series.
//!
//! An open time series carries one class label per timestamp. For every
//! target timestamp `t_p` the system may emit its prediction at any horizon
//! `eta = t_p - t` between `eta_max` (far ahead) and `eta_min` (the target is
//! already inside or behind the sliding window). Deciding early is cheap in
//! delay cost but the classifiers are less informed; a trigger system decides
//! when each target is labelled.
//!
//! Module map:
//!
//! - [`cost`]: shared domain types and the misclassification/delay cost model.
//! - [`data`]: series, splits, targets, windows, features, synthetic data and
//!   the on-disk formats.
//! - [`classifiers`]: the per-horizon probabilistic classifier collection,
//!   the reference logistic model and AUC diagnostics.
//! - [`triggers`]: SR, confidence threshold and baseline trigger rules plus
//!   their validation tuning.
//! - [`economy`]: the non-myopic expected-cost trigger.
//! - [`streaming`]: the online decision engine and the average-cost metric.
//! - [`sweep`]: end-to-end tuning and evaluation over cost grids.

pub mod classifiers;
pub mod cost;
pub mod data;
pub mod economy;
mod error;
pub mod streaming;
pub mod sweep;
pub mod triggers;

pub use classifiers::{ClassifierCollection, HorizonModel, ProbClassifier, ReferenceClassifier};
pub use cost::{Class, CostMatrix, CostModel, DelayCost, HorizonRange, TriggerDecision};
pub use data::{DatasetSplit, GeneratorConfig, HorizonDataset, OpenTimeSeries, WindowFeatures};
pub use economy::EconomyModel;
pub use error::{Error, ErrorKind, Result};
pub use streaming::DecisionRecord;
pub use sweep::{Method, SweepResult, SweepRow};
