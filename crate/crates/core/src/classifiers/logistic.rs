//! Class-weighted, L2-regularised logistic regression on standardised
//! features.
//!
//! The objective over parameters `theta = (w, b)` is
//!
//! ```text
//! L(theta) = sum_i s_i * (log(1 + exp(m_i)) - y_i * m_i) / sum_i s_i + lambda/2 * |w|^2
//! m_i      = w . z_i + b
//! ```
//!
//! with `s_i = rho` for positives and 1 for negatives. The intercept is not
//! penalised. Training starts from zero and takes Newton steps with Armijo
//! backtracking until the gradient infinity-norm drops to [`GRADIENT_TOL`] or
//! [`MAX_ITERATIONS`] is reached.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ProbClassifier;
use crate::cost::Class;
use crate::data::{HorizonDataset, WindowFeatures};
use crate::error::{Error, Result};

pub const GRADIENT_TOL: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 10_000;

const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-16;
const LOSS_RESOLUTION: f64 = 1e-12;

pub(crate) fn sigmoid(m: f64) -> f64 {
    if m >= 0.0 {
        1.0 / (1.0 + (-m).exp())
    } else {
        let e = m.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(m))` without overflow.
fn softplus(m: f64) -> f64 {
    if m > 0.0 {
        m + (-m).exp().ln_1p()
    } else {
        m.exp().ln_1p()
    }
}

/// The weighted, regularised logistic loss over a fixed design matrix.
#[derive(Debug, Clone)]
pub struct LogisticObjective {
    rows: Vec<Vec<f64>>,
    targets: Vec<f64>,
    weights: Vec<f64>,
    total_weight: f64,
    lambda: f64,
}

impl LogisticObjective {
    pub fn new(rows: Vec<Vec<f64>>, labels: &[Class], lambda: f64, positive_weight: f64) -> Result<Self> {
        if rows.len() != labels.len() || rows.is_empty() {
            return Err(Error::InsufficientData(format!(
                "{} feature rows for {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let dim = rows[0].len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidConfig("feature rows differ in length".into()));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) || !(positive_weight > 0.0 && positive_weight.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "need lambda >= 0 and positive weight > 0, got {lambda} and {positive_weight}"
            )));
        }
        let targets: Vec<f64> = labels.iter().map(|&c| c.index() as f64).collect();
        let weights: Vec<f64> =
            labels.iter().map(|&c| if c == Class::Positive { positive_weight } else { 1.0 }).collect();
        let total_weight = weights.iter().sum();
        Ok(Self { rows, targets, weights, total_weight, lambda })
    }

    /// Number of parameters: one weight per feature plus the intercept.
    pub fn dim(&self) -> usize {
        self.rows[0].len() + 1
    }

    fn margin(&self, theta: &[f64], row: &[f64]) -> f64 {
        let (w, b) = theta.split_at(theta.len() - 1);
        row.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() + b[0]
    }

    pub fn loss(&self, theta: &[f64]) -> f64 {
        let data: f64 = self
            .rows
            .iter()
            .zip(&self.targets)
            .zip(&self.weights)
            .map(|((row, y), s)| {
                let m = self.margin(theta, row);
                s * (softplus(m) - y * m)
            })
            .sum();
        let w = &theta[..theta.len() - 1];
        data / self.total_weight + 0.5 * self.lambda * w.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut g = vec![0.0; d];
        for ((row, y), s) in self.rows.iter().zip(&self.targets).zip(&self.weights) {
            let r = s * (sigmoid(self.margin(theta, row)) - y);
            for (gj, x) in g.iter_mut().zip(row) {
                *gj += r * x;
            }
            g[d - 1] += r;
        }
        for (j, gj) in g.iter_mut().enumerate() {
            *gj /= self.total_weight;
            if j < d - 1 {
                *gj += self.lambda * theta[j];
            }
        }
        g
    }

    fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        // lower triangle, row-major
        let mut acc = vec![0.0; d * d];
        let mut x = vec![0.0; d];
        for (row, s) in self.rows.iter().zip(&self.weights) {
            let p = sigmoid(self.margin(theta, row));
            let c = s * p * (1.0 - p) / self.total_weight;
            x[..d - 1].copy_from_slice(row);
            x[d - 1] = 1.0;
            for i in 0..d {
                let ci = c * x[i];
                for (a, xj) in acc[i * d..=i * d + i].iter_mut().zip(&x[..=i]) {
                    *a += ci * xj;
                }
            }
        }
        DMatrix::from_fn(d, d, |i, j| {
            let v = if j <= i { acc[i * d + j] } else { acc[j * d + i] };
            if i == j && i < d - 1 {
                v + self.lambda
            } else {
                v
            }
        })
    }

    /// Minimise from zero. Returns the parameters, iterations used and
    /// whether the gradient tolerance was met.
    pub fn minimize(&self) -> (Vec<f64>, usize, bool) {
        let d = self.dim();
        let mut theta = vec![0.0; d];
        let mut loss = self.loss(&theta);
        for iter in 0..MAX_ITERATIONS {
            let g = self.gradient(&theta);
            if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= GRADIENT_TOL {
                return (theta, iter, true);
            }
            let gv = DVector::from_vec(g.clone());
            let newton = self
                .hessian(&theta)
                .cholesky()
                .map(|c| -c.solve(&gv))
                .filter(|d| d.iter().all(|v| v.is_finite()) && d.dot(&gv) < 0.0);
            let is_newton = newton.is_some();
            let direction = newton.unwrap_or_else(|| -gv.clone());
            let slope = direction.dot(&gv);
            let mut step = 1.0;
            let mut candidate = theta.clone();
            // Near the optimum the predicted decrease drops below the loss's
            // rounding noise and the line search would only see noise.
            if is_newton && -slope <= LOSS_RESOLUTION * loss.abs().max(1.0) {
                for ((c, t), dir) in candidate.iter_mut().zip(&theta).zip(direction.iter()) {
                    *c = t + dir;
                }
                loss = self.loss(&candidate);
                std::mem::swap(&mut theta, &mut candidate);
                continue;
            }
            loop {
                for ((c, t), dir) in candidate.iter_mut().zip(&theta).zip(direction.iter()) {
                    *c = t + step * dir;
                }
                let next = self.loss(&candidate);
                if next <= loss + ARMIJO * step * slope {
                    loss = next;
                    break;
                }
                step *= 0.5;
                if step < MIN_STEP {
                    // No further decrease representable.
                    return (theta, iter, false);
                }
            }
            std::mem::swap(&mut theta, &mut candidate);
        }
        (theta, MAX_ITERATIONS, false)
    }
}

/// Standardisation parameters, weights and training metadata of a fitted
/// logistic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceClassifier {
    pub means: Vec<f64>,
    /// Population standard deviations; 0 marks a constant feature, which is
    /// mapped to 0 after standardisation.
    pub scales: Vec<f64>,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub positive_weight: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl ReferenceClassifier {
    fn standardize_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(x.iter().zip(self.means.iter().zip(&self.scales)).map(|(v, (m, s))| {
            if *s > 0.0 {
                (v - m) / s
            } else {
                0.0
            }
        }));
    }

    pub fn decision_value(&self, x: &[f64]) -> f64 {
        let mut z = Vec::with_capacity(x.len());
        self.standardize_into(x, &mut z);
        z.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>() + self.intercept
    }
}

impl ProbClassifier for ReferenceClassifier {
    fn predict_proba(&self, features: &WindowFeatures) -> f64 {
        sigmoid(self.decision_value(features.as_slice()))
    }
}

/// Fit the reference model with L2 strength `lambda` and positive-class
/// weight `rho`.
pub fn train_reference(dataset: &HorizonDataset, lambda: f64, rho: f64) -> Result<ReferenceClassifier> {
    if dataset.is_empty() {
        return Err(Error::InsufficientData(format!("horizon {} has no examples", dataset.eta)));
    }
    let counts = dataset.class_counts();
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::SingleClass(if counts[1] == 0 { 0 } else { 1 }));
    }
    let dim = dataset.examples[0].features.len();
    let n = dataset.len() as f64;
    let mut means = vec![0.0; dim];
    for ex in &dataset.examples {
        for (m, v) in means.iter_mut().zip(ex.features.as_slice()) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut scales = vec![0.0; dim];
    for ex in &dataset.examples {
        for ((s, v), m) in scales.iter_mut().zip(ex.features.as_slice()).zip(&means) {
            *s += (v - m) * (v - m);
        }
    }
    for (s, m) in scales.iter_mut().zip(&means) {
        *s = (*s / n).sqrt();
        // Rounding noise on a constant column is not variance.
        if *s <= 1e-12 * m.abs().max(1.0) {
            *s = 0.0;
        }
    }

    let mut model = ReferenceClassifier {
        means,
        scales,
        weights: Vec::new(),
        intercept: 0.0,
        lambda,
        positive_weight: rho,
        iterations: 0,
        converged: false,
    };
    let mut rows = Vec::with_capacity(dataset.len());
    for ex in &dataset.examples {
        let mut z = Vec::with_capacity(dim);
        model.standardize_into(ex.features.as_slice(), &mut z);
        rows.push(z);
    }
    let labels: Vec<Class> = dataset.examples.iter().map(|e| e.label).collect();
    let objective = LogisticObjective::new(rows, &labels, lambda, rho)?;
    let (theta, iterations, converged) = objective.minimize();
    model.intercept = theta[dim];
    model.weights = theta[..dim].to_vec();
    model.iterations = iterations;
    model.converged = converged;
    Ok(model)
}
