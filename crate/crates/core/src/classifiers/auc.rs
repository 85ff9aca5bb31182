use std::collections::BTreeMap;

use super::{ClassifierCollection, ProbClassifier};
use crate::cost::Class;
use crate::data::HorizonDatasets;
use crate::error::{Error, Result};

/// Area under the ROC curve: the probability that a random positive scores
/// above a random negative, ties counting one half.
///
/// Computed from rank sums with doubled (integer) average ranks, so the
/// result is exact for any input size that fits in `u128`.
pub fn auc(scores: &[f64], labels: &[Class]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidConfig(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let n_pos = labels.iter().filter(|&&c| c == Class::Positive).count() as u128;
    let n_neg = labels.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass(if n_pos == 0 { 0 } else { 1 }));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum over positives of 2 * (average 1-based rank).
    let mut doubled_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let doubled_rank = (i + 1 + j) as u128;
        let positives = order[i..j].iter().filter(|&&k| labels[k] == Class::Positive).count() as u128;
        doubled_rank_sum += positives * doubled_rank;
        i = j;
    }
    let doubled_u = doubled_rank_sum - n_pos * (n_pos + 1);
    Ok(doubled_u as f64 / (2 * n_pos * n_neg) as f64)
}

/// AUC of each horizon's classifier on that horizon's examples.
pub fn auc_profile<C: ProbClassifier>(
    collection: &ClassifierCollection<C>,
    datasets: &HorizonDatasets,
) -> Result<BTreeMap<i32, f64>> {
    if datasets.horizons() != collection.horizons() {
        return Err(Error::InvalidConfig("evaluation horizons differ from the collection's".into()));
    }
    datasets
        .iter()
        .map(|ds| {
            let model = collection.get(ds.eta)?;
            let scores: Vec<f64> = ds.examples.iter().map(|e| model.predict_proba(&e.features)).collect();
            let labels: Vec<Class> = ds.examples.iter().map(|e| e.label).collect();
            Ok((ds.eta, auc(&scores, &labels)?))
        })
        .collect()
}
