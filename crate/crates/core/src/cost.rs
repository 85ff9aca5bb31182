//! Shared domain types and the cost model.
//!
//! Misclassification costs are stored as `cm[predicted][actual]`, which is the
//! display layout `[[TN, FN], [FP, TP]]`: row 0 holds the costs of predicting
//! the normal class, row 1 the costs of raising an alarm.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary class of a timestamp. `Positive` is the failure / abnormal class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Class {
    Negative = 0,
    Positive = 1,
}

impl Class {
    pub const ALL: [Class; 2] = [Class::Negative, Class::Positive];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Hard label from a class-1 posterior. Strictly above 0.5 is positive.
    pub fn from_posterior(p: f64) -> Class {
        if p > 0.5 {
            Class::Positive
        } else {
            Class::Negative
        }
    }
}

impl From<Class> for u8 {
    fn from(c: Class) -> u8 {
        c as u8
    }
}

impl TryFrom<u8> for Class {
    type Error = Error;

    fn try_from(v: u8) -> Result<Class> {
        match v {
            0 => Ok(Class::Negative),
            1 => Ok(Class::Positive),
            other => Err(Error::InvalidConfig(format!("class label must be 0 or 1, got {other}"))),
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", *self as u8)
    }
}

/// Window width and the inclusive range of horizons `[eta_min, eta_max]`.
///
/// A horizon is the lag `t_p - t` between a target and the end of the
/// sliding window. Negative horizons label timestamps already inside the
/// window; `eta_min >= -window` keeps the target within reach of the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawHorizonRange")]
pub struct HorizonRange {
    eta_min: i32,
    eta_max: i32,
    window: usize,
}

#[derive(Deserialize)]
struct RawHorizonRange {
    eta_min: i32,
    eta_max: i32,
    window: usize,
}

impl TryFrom<RawHorizonRange> for HorizonRange {
    type Error = Error;

    fn try_from(raw: RawHorizonRange) -> Result<Self> {
        HorizonRange::new(raw.window, raw.eta_min, raw.eta_max)
    }
}

impl HorizonRange {
    pub fn new(window: usize, eta_min: i32, eta_max: i32) -> Result<Self> {
        if window == 0 {
            return Err(Error::InvalidConfig("window must be at least 1".into()));
        }
        if eta_max <= 0 {
            return Err(Error::InvalidConfig(format!("eta_max must be positive, got {eta_max}")));
        }
        if eta_min >= eta_max {
            return Err(Error::InvalidConfig(format!(
                "eta_min ({eta_min}) must be below eta_max ({eta_max})"
            )));
        }
        if (eta_min as i64) < -(window as i64) {
            return Err(Error::InvalidConfig(format!(
                "eta_min ({eta_min}) must be at least -window (-{window})"
            )));
        }
        Ok(Self { eta_min, eta_max, window })
    }

    /// `w = 10`, `eta_min = -w`, `eta_max = 50`.
    pub fn default_predictive_maintenance() -> Self {
        Self { eta_min: -10, eta_max: 50, window: 10 }
    }

    pub fn eta_min(&self) -> i32 {
        self.eta_min
    }

    pub fn eta_max(&self) -> i32 {
        self.eta_max
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Number of horizons, both endpoints included.
    pub fn len(&self) -> usize {
        (self.eta_max - self.eta_min + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, eta: i32) -> bool {
        (self.eta_min..=self.eta_max).contains(&eta)
    }

    /// Position of `eta` in ascending horizon order.
    pub fn index(&self, eta: i32) -> Result<usize> {
        self.check(eta)?;
        Ok((eta - self.eta_min) as usize)
    }

    pub fn eta_at(&self, index: usize) -> i32 {
        self.eta_min + index as i32
    }

    /// Horizons in ascending order.
    pub fn horizons(&self) -> impl DoubleEndedIterator<Item = i32> + Clone {
        self.eta_min..=self.eta_max
    }

    /// Relative position `(eta_max - eta) / (eta_max - eta_min)`: 0 at the
    /// earliest horizon, 1 at the last one.
    pub fn relative_position(&self, eta: i32) -> f64 {
        (self.eta_max - eta) as f64 / (self.eta_max - self.eta_min) as f64
    }

    /// Spacing between consecutive training targets, `w + eta_max`.
    pub fn target_spacing(&self) -> usize {
        self.window + self.eta_max as usize
    }

    pub(crate) fn check(&self, eta: i32) -> Result<()> {
        if self.contains(eta) {
            Ok(())
        } else {
            Err(Error::HorizonOutOfRange { eta, eta_min: self.eta_min, eta_max: self.eta_max })
        }
    }
}

/// 2x2 misclassification costs, indexed `[predicted][actual]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 2]; 2]", into = "[[f64; 2]; 2]")]
pub struct CostMatrix([[f64; 2]; 2]);

impl CostMatrix {
    pub fn new(cm: [[f64; 2]; 2]) -> Result<Self> {
        if cm.iter().flatten().any(|&c| !c.is_finite() || c < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "misclassification costs must be finite and nonnegative, got {cm:?}"
            )));
        }
        Ok(Self(cm))
    }

    /// `[[0, fn_cost], [1, 0]]`: false alarms cost 1, missed failures `fn_cost`.
    pub fn with_false_negative_cost(fn_cost: f64) -> Result<Self> {
        Self::new([[0.0, fn_cost], [1.0, 0.0]])
    }

    /// The four predictive-maintenance matrices `cm1..cm4` with false
    /// negatives costing 1, 10, 100 and 1000.
    pub fn standard_set() -> Vec<(String, CostMatrix)> {
        [1.0, 10.0, 100.0, 1000.0]
            .iter()
            .enumerate()
            .map(|(i, &c)| (format!("cm{}", i + 1), CostMatrix([[0.0, c], [1.0, 0.0]])))
            .collect()
    }

    pub fn zeros() -> Self {
        CostMatrix([[0.0; 2]; 2])
    }

    pub fn get(&self, predicted: Class, actual: Class) -> f64 {
        self.0[predicted.index()][actual.index()]
    }

    pub fn as_array(&self) -> &[[f64; 2]; 2] {
        &self.0
    }

    pub fn max_entry(&self) -> f64 {
        self.0.iter().flatten().copied().fold(0.0, f64::max)
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        let mut m = self.0;
        m.iter_mut().flatten().for_each(|v| *v *= c);
        Self::new(m)
    }
}

impl TryFrom<[[f64; 2]; 2]> for CostMatrix {
    type Error = Error;

    fn try_from(cm: [[f64; 2]; 2]) -> Result<Self> {
        CostMatrix::new(cm)
    }
}

impl From<CostMatrix> for [[f64; 2]; 2] {
    fn from(cm: CostMatrix) -> Self {
        cm.0
    }
}

/// Shape of the delay cost over horizons.
///
/// The cost is `alpha * shape(eta)`. Only the linear shape
/// `(eta_max - eta) / (eta_max - eta_min)` is used by the harness; `Custom`
/// accepts any horizon to shape mapping.
#[derive(Clone, Default)]
pub enum DelayCost {
    #[default]
    Linear,
    Custom(Arc<dyn Fn(i32, &HorizonRange) -> f64 + Send + Sync>),
}

impl fmt::Debug for DelayCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DelayCost::Linear => f.write_str("Linear"),
            DelayCost::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Misclassification matrix, delay slope `alpha` and the horizon range.
#[derive(Debug, Clone)]
pub struct CostModel {
    matrix: CostMatrix,
    alpha: f64,
    horizons: HorizonRange,
    delay: DelayCost,
}

impl CostModel {
    pub fn new(matrix: CostMatrix, alpha: f64, horizons: HorizonRange) -> Result<Self> {
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(Error::InvalidConfig(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        Ok(Self { matrix, alpha, horizons, delay: DelayCost::Linear })
    }

    pub fn with_delay_shape(mut self, delay: DelayCost) -> Self {
        self.delay = delay;
        self
    }

    pub fn matrix(&self) -> &CostMatrix {
        &self.matrix
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn horizons(&self) -> &HorizonRange {
        &self.horizons
    }

    /// `C_d(eta)`; zero at `eta_max`, `alpha` at `eta_min` for the linear shape.
    pub fn delay_cost(&self, eta: i32) -> Result<f64> {
        self.horizons.check(eta)?;
        let shape = match &self.delay {
            DelayCost::Linear => self.horizons.relative_position(eta),
            DelayCost::Custom(f) => f(eta, &self.horizons),
        };
        Ok(self.alpha * shape)
    }

    /// `C_m(predicted | actual)`.
    pub fn misclassification_cost(&self, predicted: Class, actual: Class) -> f64 {
        self.matrix.get(predicted, actual)
    }

    pub fn combined_cost(&self, predicted: Class, actual: Class, eta: i32) -> Result<f64> {
        Ok(self.misclassification_cost(predicted, actual) + self.delay_cost(eta)?)
    }
}

/// Output of a trigger system for one (target, time) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TriggerDecision {
    Wait,
    Fire,
}

impl TriggerDecision {
    pub fn fires(self) -> bool {
        self == TriggerDecision::Fire
    }
}
