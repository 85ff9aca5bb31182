//! Open time series, windows, features and training-set construction.
//!
//! Timestamps are 1-indexed. The window ending at `t` covers rows
//! `[t - w + 1, t]`, so it always holds exactly `w` rows.

mod generator;
mod ingest;
mod native;

use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{Class, HorizonRange};
use crate::error::{Error, Result};

pub use generator::{generate_synthetic, GeneratorConfig, FAILURE_DURATION, PREMISE_BURST_LEN};
pub use ingest::{load_pdm_csv, IngestSummary};
pub use native::{read_native_csv, write_native_csv};

/// Multivariate telemetry, Boolean error channels and one label per timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenTimeSeries {
    id: String,
    telemetry: Array2<f64>,
    errors: Array2<bool>,
    labels: Vec<Class>,
}

impl OpenTimeSeries {
    pub fn new(
        id: impl Into<String>,
        telemetry: Array2<f64>,
        errors: Array2<bool>,
        labels: Vec<Class>,
    ) -> Result<Self> {
        let id = id.into();
        let len = labels.len();
        if len == 0 {
            return Err(Error::InvalidConfig(format!("series {id} is empty")));
        }
        if telemetry.nrows() != len || errors.nrows() != len {
            return Err(Error::InvalidConfig(format!(
                "series {id}: telemetry has {} rows, errors {}, labels {len}",
                telemetry.nrows(),
                errors.nrows()
            )));
        }
        if telemetry.ncols() == 0 {
            return Err(Error::InvalidConfig(format!("series {id} has no telemetry channel")));
        }
        Ok(Self { id, telemetry, errors, labels })
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

    pub fn num_telemetry(&self) -> usize {
        self.telemetry.ncols()
    }

    pub fn num_error_types(&self) -> usize {
        self.errors.ncols()
    }

    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout { num_telemetry: self.num_telemetry(), num_error_types: self.num_error_types() }
    }

    pub fn telemetry(&self) -> ArrayView2<'_, f64> {
        self.telemetry.view()
    }

    pub fn errors(&self) -> ArrayView2<'_, bool> {
        self.errors.view()
    }

    pub fn labels(&self) -> &[Class] {
        &self.labels
    }

    /// Label at 1-indexed timestamp `t`.
    pub fn label(&self, t: usize) -> Class {
        self.labels[t - 1]
    }
}

/// Raw rows of one sliding window, in time order.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub telemetry: ArrayView2<'a, f64>,
    pub errors: ArrayView2<'a, bool>,
}

impl Window<'_> {
    pub fn len(&self) -> usize {
        self.telemetry.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The `w` rows ending at 1-indexed `end_t` inclusive.
pub fn extract_window(series: &OpenTimeSeries, end_t: usize, window: usize) -> Result<Window<'_>> {
    if window == 0 || end_t < window || end_t > series.len() {
        return Err(Error::WindowOutOfRange { end_t, window, len: series.len() });
    }
    let rows = end_t - window..end_t;
    Ok(Window {
        telemetry: series.telemetry.slice(s![rows.clone(), ..]),
        errors: series.errors.slice(s![rows, ..]),
    })
}

/// Number of telemetry and error channels feeding the feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub num_telemetry: usize,
    pub num_error_types: usize,
}

impl FeatureLayout {
    pub const STATS: [&'static str; 4] = ["min", "max", "mean", "median"];

    pub fn len(&self) -> usize {
        4 * self.num_telemetry + self.num_error_types
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Column names in feature order: `tel_<c>_<stat>` then `err_<k>_count`.
    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.len());
        for c in 1..=self.num_telemetry {
            names.extend(Self::STATS.iter().map(|s| format!("tel_{c}_{s}")));
        }
        names.extend((1..=self.num_error_types).map(|k| format!("err_{k}_count")));
        names
    }
}

/// Fixed-layout statistics of one window: per telemetry channel
/// `(min, max, mean, median)` in source order, then per error channel the
/// number of flagged rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowFeatures(Vec<f64>);

impl WindowFeatures {
    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

pub fn extract_features(window: &Window<'_>) -> Result<WindowFeatures> {
    let rows = window.len();
    if rows == 0 {
        return Err(Error::InvalidConfig("window has no rows".into()));
    }
    let p = window.telemetry.ncols();
    let e = window.errors.ncols();
    let mut values = Vec::with_capacity(4 * p + e);
    let mut column = Vec::with_capacity(rows);
    for channel in window.telemetry.columns() {
        column.clear();
        column.extend(channel.iter().copied());
        if column.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("window telemetry".into()));
        }
        column.sort_by(f64::total_cmp);
        let mean = column.iter().sum::<f64>() / rows as f64;
        let median = if rows % 2 == 1 {
            column[rows / 2]
        } else {
            0.5 * (column[rows / 2 - 1] + column[rows / 2])
        };
        // Summation rounding can push the mean a hair outside [min, max].
        let mean = mean.clamp(column[0], column[rows - 1]);
        values.extend([column[0], column[rows - 1], mean, median]);
    }
    for channel in window.errors.columns() {
        values.push(channel.iter().filter(|&&f| f).count() as f64);
    }
    Ok(WindowFeatures(values))
}

/// Training targets `t_p = s, 2s, ...` with `s = w + eta_max`, kept while the
/// `eta_min` window still fits (`t_p - eta_min <= len`).
pub fn select_targets(series_len: usize, horizons: &HorizonRange) -> Vec<usize> {
    let spacing = horizons.target_spacing();
    let last = series_len as i64 + horizons.eta_min() as i64;
    (1..)
        .map(|k| k * spacing)
        .take_while(|&t_p| t_p as i64 <= last && t_p <= series_len)
        .collect()
}

/// Identifies a target across horizons: series index within the source set
/// and the 1-indexed target timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TargetId {
    pub series: usize,
    pub t_p: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub target: TargetId,
    pub features: WindowFeatures,
    pub label: Class,
}

/// Training examples for one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonDataset {
    pub eta: i32,
    pub examples: Vec<Example>,
}

impl HorizonDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0; 2];
        for ex in &self.examples {
            counts[ex.label.index()] += 1;
        }
        counts
    }
}

/// One [`HorizonDataset`] per horizon, target-aligned: every horizon holds
/// the same targets in the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonDatasets {
    horizons: HorizonRange,
    layout: Option<FeatureLayout>,
    datasets: Vec<HorizonDataset>,
}

impl HorizonDatasets {
    /// Assemble from per-horizon datasets given in ascending horizon order.
    /// Every horizon must list the same targets in the same order.
    pub fn from_parts(horizons: HorizonRange, layout: FeatureLayout, datasets: Vec<HorizonDataset>) -> Result<Self> {
        if datasets.len() != horizons.len() || datasets.iter().zip(horizons.horizons()).any(|(d, eta)| d.eta != eta) {
            return Err(Error::InvalidConfig("datasets must cover every horizon in ascending order".into()));
        }
        let reference: Vec<TargetId> = datasets[0].examples.iter().map(|e| e.target).collect();
        for d in &datasets[1..] {
            if !d.examples.iter().map(|e| e.target).eq(reference.iter().copied()) {
                return Err(Error::InvalidConfig(format!("horizon {} is not target-aligned", d.eta)));
            }
        }
        Ok(Self { horizons, layout: Some(layout), datasets })
    }

    pub fn horizons(&self) -> &HorizonRange {
        &self.horizons
    }

    pub fn layout(&self) -> Option<FeatureLayout> {
        self.layout
    }

    pub fn get(&self, eta: i32) -> Result<&HorizonDataset> {
        Ok(&self.datasets[self.horizons.index(eta)?])
    }

    /// Datasets in ascending horizon order.
    pub fn iter(&self) -> impl Iterator<Item = &HorizonDataset> {
        self.datasets.iter()
    }

    pub fn num_targets(&self) -> usize {
        self.datasets.first().map_or(0, HorizonDataset::len)
    }
}

/// For every series, target and horizon `eta`: the features of the window
/// ending at `t_p - eta`, labelled with the class at `t_p`.
pub fn build_horizon_datasets(
    series_set: &[OpenTimeSeries],
    horizons: &HorizonRange,
) -> Result<HorizonDatasets> {
    let layout = common_layout(series_set)?;
    let w = horizons.window();
    let per_series: Vec<Vec<Vec<Example>>> = series_set
        .par_iter()
        .enumerate()
        .map(|(series_idx, series)| {
            let targets = select_targets(series.len(), horizons);
            horizons
                .horizons()
                .map(|eta| {
                    targets
                        .iter()
                        .map(|&t_p| {
                            let end_t = (t_p as i64 - eta as i64) as usize;
                            let window = extract_window(series, end_t, w)?;
                            Ok(Example {
                                target: TargetId { series: series_idx, t_p },
                                features: extract_features(&window)?,
                                label: series.label(t_p),
                            })
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut datasets: Vec<HorizonDataset> =
        horizons.horizons().map(|eta| HorizonDataset { eta, examples: Vec::new() }).collect();
    for series_examples in per_series {
        for (ds, examples) in datasets.iter_mut().zip(series_examples) {
            ds.examples.extend(examples);
        }
    }
    Ok(HorizonDatasets { horizons: *horizons, layout, datasets })
}

pub(crate) fn common_layout(series_set: &[OpenTimeSeries]) -> Result<Option<FeatureLayout>> {
    let mut layout = None;
    for s in series_set {
        match layout {
            None => layout = Some(s.layout()),
            Some(l) if l != s.layout() => {
                return Err(Error::InvalidConfig(format!(
                    "series {} has layout {:?}, expected {l:?}",
                    s.id(),
                    s.layout()
                )))
            }
            Some(_) => {}
        }
    }
    Ok(layout)
}

/// Train / test / validation / estimation series sets, disjoint by series.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetSplit {
    pub train: Vec<OpenTimeSeries>,
    pub test: Vec<OpenTimeSeries>,
    pub validation: Vec<OpenTimeSeries>,
    pub estimation: Vec<OpenTimeSeries>,
}

impl DatasetSplit {
    pub const NAMES: [&'static str; 4] = ["train", "test", "validation", "estimation"];
    const PERCENT: [usize; 4] = [50, 20, 15, 15];

    pub fn parts(&self) -> [&[OpenTimeSeries]; 4] {
        [&self.train, &self.test, &self.validation, &self.estimation]
    }

    pub fn sizes(&self) -> [usize; 4] {
        self.parts().map(<[_]>::len)
    }
}

/// Part sizes for `n` series in the order (train, test, validation,
/// estimation).
///
/// Largest-remainder apportionment of 50/20/15/15 with ties going to the
/// earlier part, then every empty part takes one series from the currently
/// largest part so that no split is empty.
pub fn split_sizes(n: usize) -> Result<[usize; 4]> {
    if n < 4 {
        return Err(Error::InsufficientData(format!("need at least 4 series to split, got {n}")));
    }
    let mut sizes = DatasetSplit::PERCENT.map(|pct| n * pct / 100);
    let remainders = DatasetSplit::PERCENT.map(|pct| n * pct % 100);
    let mut order = [0, 1, 2, 3];
    // Stable sort keeps train-first order among equal remainders.
    order.sort_by(|&a, &b| remainders[b].cmp(&remainders[a]));
    let missing = n - sizes.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        sizes[i] += 1;
    }
    while let Some(empty) = sizes.iter().position(|&s| s == 0) {
        let largest = (0..4).fold(0, |best, i| if sizes[i] > sizes[best] { i } else { best });
        sizes[largest] -= 1;
        sizes[empty] += 1;
    }
    Ok(sizes)
}

/// Seeded split by whole series.
pub fn split_series(series_set: Vec<OpenTimeSeries>, seed: u64) -> Result<DatasetSplit> {
    let sizes = split_sizes(series_set.len())?;
    let mut order: Vec<usize> = (0..series_set.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut assignment = vec![0usize; series_set.len()];
    let mut offset = 0;
    for (part, &size) in sizes.iter().enumerate() {
        for &idx in &order[offset..offset + size] {
            assignment[idx] = part;
        }
        offset += size;
    }
    let mut split = DatasetSplit::default();
    for (series, part) in series_set.into_iter().zip(assignment) {
        match part {
            0 => split.train.push(series),
            1 => split.test.push(series),
            2 => split.validation.push(series),
            _ => split.estimation.push(series),
        }
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;
    use std::collections::HashSet;

    pub(crate) fn toy_series(id: &str, len: usize, p: usize, e: usize) -> OpenTimeSeries {
        let telemetry = Array2::from_shape_fn((len, p), |(t, c)| (t * (c + 1)) as f64);
        let errors = Array2::from_shape_fn((len, e), |(t, c)| (t + c) % 7 == 0);
        let labels = (0..len).map(|t| if t % 13 == 0 { Class::Positive } else { Class::Negative }).collect();
        OpenTimeSeries::new(id, telemetry, errors, labels).unwrap()
    }

    #[test]
    fn series_validation() {
        let t = Array2::<f64>::zeros((3, 1));
        let e = Array2::<bool>::default((3, 0));
        assert!(OpenTimeSeries::new("a", t.clone(), e.clone(), vec![Class::Negative; 2]).is_err());
        assert!(OpenTimeSeries::new("a", Array2::zeros((3, 0)), e.clone(), vec![Class::Negative; 3]).is_err());
        assert!(OpenTimeSeries::new("a", t, e, vec![Class::Negative; 3]).is_ok());
    }

    #[test]
    fn window_boundaries() {
        let s = toy_series("s", 30, 2, 1);
        let first = extract_window(&s, 10, 10).unwrap();
        assert_eq!(first.len(), 10);
        assert_eq!(first.telemetry[[0, 0]], 0.0);
        assert_eq!(first.telemetry[[9, 0]], 9.0);
        let last = extract_window(&s, 30, 10).unwrap();
        assert_eq!(last.telemetry[[0, 0]], 20.0);
        assert_eq!(last.telemetry[[9, 0]], 29.0);
        assert!(matches!(extract_window(&s, 9, 10), Err(Error::WindowOutOfRange { .. })));
        assert!(extract_window(&s, 31, 10).is_err());
    }

    fn window_of(values: &[f64], flags: &[bool]) -> (Array2<f64>, Array2<bool>) {
        (
            Array2::from_shape_vec((values.len(), 1), values.to_vec()).unwrap(),
            Array2::from_shape_vec((flags.len(), 1), flags.to_vec()).unwrap(),
        )
    }

    #[test]
    fn features_of_hand_computed_window() {
        let (t, e) = window_of(&[1.0, 3.0, 2.0, 10.0, 4.0], &[false, true, false, false, true]);
        let f = extract_features(&Window { telemetry: t.view(), errors: e.view() }).unwrap();
        assert_eq!(f.as_slice(), &[1.0, 10.0, 4.0, 3.0, 2.0]);
    }

    #[test]
    fn features_degenerate_cases() {
        let (t, e) = window_of(&[2.5; 4], &[false; 4]);
        let f = extract_features(&Window { telemetry: t.view(), errors: e.view() }).unwrap();
        assert_eq!(f.as_slice(), &[2.5, 2.5, 2.5, 2.5, 0.0]);
        // even length: median is the mean of the middle pair
        let (t, e) = window_of(&[4.0, 1.0, 3.0, 2.0], &[true; 4]);
        let f = extract_features(&Window { telemetry: t.view(), errors: e.view() }).unwrap();
        assert_eq!(f.as_slice(), &[1.0, 4.0, 2.5, 2.5, 4.0]);
        let (t, e) = window_of(&[1.0, f64::NAN], &[false; 2]);
        assert!(matches!(
            extract_features(&Window { telemetry: t.view(), errors: e.view() }),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn feature_names_follow_layout() {
        let l = FeatureLayout { num_telemetry: 2, num_error_types: 1 };
        assert_eq!(l.len(), 9);
        let names = l.names();
        assert_eq!(names[0], "tel_1_min");
        assert_eq!(names[7], "tel_2_median");
        assert_eq!(names[8], "err_1_count");
    }

    #[test]
    fn target_selection_examples() {
        let r = HorizonRange::new(10, -10, 20).unwrap();
        assert_eq!(select_targets(100, &r), vec![30, 60, 90]);
        assert!(select_targets(29, &r).is_empty());
        let r0 = HorizonRange::new(10, 0, 20).unwrap();
        assert_eq!(select_targets(30, &r0), vec![30]);
        assert!(select_targets(29, &r0).is_empty());
    }

    #[test]
    fn target_selection_matches_enumeration() {
        // Oracle: every multiple of the spacing that satisfies w+eta_max <= t_p <= T+eta_min.
        for (w, lo, hi) in [(10, -10, 20), (5, -5, 7), (3, 1, 4), (1, -1, 1)] {
            let r = HorizonRange::new(w, lo, hi).unwrap();
            for len in 0..200usize {
                let s = w + hi as usize;
                let expected: Vec<usize> = (1..=len)
                    .filter(|t| t % s == 0 && *t >= s && (*t as i64) <= len as i64 + lo as i64)
                    .collect();
                assert_eq!(select_targets(len, &r), expected, "w={w} range=[{lo},{hi}] len={len}");
            }
        }
    }

    #[test]
    fn horizon_datasets_count_and_alignment() {
        let r = HorizonRange::new(10, -10, 50).unwrap();
        // 3 targets: 60, 120, 180 need len >= 190.
        let s = toy_series("s", 190, 2, 2);
        let ds = build_horizon_datasets(std::slice::from_ref(&s), &r).unwrap();
        assert_eq!(ds.iter().count(), 61);
        assert_eq!(ds.iter().map(HorizonDataset::len).sum::<usize>(), 183);
        let reference: Vec<TargetId> = ds.get(-10).unwrap().examples.iter().map(|e| e.target).collect();
        assert_eq!(reference.len(), 3);
        for d in ds.iter() {
            let ids: Vec<TargetId> = d.examples.iter().map(|e| e.target).collect();
            assert_eq!(ids, reference);
            for ex in &d.examples {
                assert_eq!(ex.label, s.label(ex.target.t_p));
                // window ends at t_p - eta
                let w = extract_window(&s, (ex.target.t_p as i32 - d.eta) as usize, 10).unwrap();
                assert_eq!(ex.features, extract_features(&w).unwrap());
            }
        }
    }

    #[test]
    fn horizon_datasets_empty_targets() {
        let r = HorizonRange::new(10, -10, 50).unwrap();
        let s = toy_series("s", 40, 1, 0);
        let ds = build_horizon_datasets(&[s], &r).unwrap();
        assert!(ds.iter().all(HorizonDataset::is_empty));
        assert_eq!(ds.iter().count(), 61);
    }

    #[test]
    fn horizon_datasets_reject_mixed_layouts() {
        let r = HorizonRange::new(2, -2, 3).unwrap();
        assert!(build_horizon_datasets(&[toy_series("a", 20, 1, 1), toy_series("b", 20, 2, 1)], &r).is_err());
    }

    #[test]
    fn split_size_examples() {
        assert_eq!(split_sizes(100).unwrap(), [50, 20, 15, 15]);
        assert_eq!(split_sizes(4).unwrap(), [1, 1, 1, 1]);
        assert_eq!(split_sizes(5).unwrap(), [2, 1, 1, 1]);
        assert_eq!(split_sizes(50).unwrap(), [25, 10, 8, 7]);
        assert!(split_sizes(3).is_err());
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let set: Vec<_> = (0..23).map(|i| toy_series(&format!("s{i}"), 5, 1, 0)).collect();
        let a = split_series(set.clone(), 7).unwrap();
        let b = split_series(set.clone(), 7).unwrap();
        assert_eq!(a, b);
        let ids: Vec<&str> = a.parts().iter().flat_map(|p| p.iter().map(OpenTimeSeries::id)).collect();
        let unique: HashSet<&str> = ids.iter().copied().collect();
        assert_eq!(ids.len(), 23);
        assert_eq!(unique.len(), 23);
        assert_eq!(a.sizes(), split_sizes(23).unwrap());
        assert!(split_series(set[..3].to_vec(), 1).is_err());
    }

    proptest! {
        #[test]
        fn split_sizes_sum_and_nonempty(n in 4usize..500) {
            let s = split_sizes(n).unwrap();
            prop_assert_eq!(s.iter().sum::<usize>(), n);
            prop_assert!(s.iter().all(|&x| x >= 1));
        }

        #[test]
        fn features_are_order_free_and_bounded(
            rows in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3, any::<bool>()), 1..25),
            seed in any::<u64>(),
        ) {
            let n = rows.len();
            let t = Array2::from_shape_fn((n, 2), |(i, c)| if c == 0 { rows[i].0 } else { rows[i].1 });
            let e = Array2::from_shape_fn((n, 1), |(i, _)| rows[i].2);
            let f = extract_features(&Window { telemetry: t.view(), errors: e.view() }).unwrap();
            for c in 0..2 {
                let v = &f.as_slice()[4 * c..4 * c + 4];
                prop_assert!(v[0] <= v[3] && v[3] <= v[1]);
                prop_assert!(v[0] <= v[2] && v[2] <= v[1]);
            }
            let count = f.as_slice()[8];
            prop_assert!(count >= 0.0 && count <= n as f64 && count.fract() == 0.0);

            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let t2 = Array2::from_shape_fn((n, 2), |(i, c)| t[[perm[i], c]]);
            let e2 = Array2::from_shape_fn((n, 1), |(i, c)| e[[perm[i], c]]);
            let f2 = extract_features(&Window { telemetry: t2.view(), errors: e2.view() }).unwrap();
            // Sum order changes the mean's rounding only.
            for (a, b) in f.as_slice().iter().zip(f2.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
            }
        }
    }
}
