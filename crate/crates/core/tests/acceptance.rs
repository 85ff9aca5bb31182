use std::collections::BTreeMap;
use std::io::Write;
use std::sync::OnceLock;

use ecots_core::classifiers::{auc, auc_profile, tune_and_train_collection, ClassifierCollection, LogisticObjective, TrainingConfig};
use ecots_core::data::{build_horizon_datasets, generate_synthetic, split_series};
use ecots_core::economy::{
    current_membership, expected_cost_at, fit_economy_scored, project_membership, EconomyPolicy, HorizonGroups,
};
use ecots_core::streaming::{avg_cost_series, run_scored, score_series, ScoredSeries};
use ecots_core::sweep::{benchmark_generator_config, run_sweep, Method, Prepared, TuningGrids, BENCHMARK_SEED};
use ecots_core::triggers::{CcParams, CcTrigger, EarlyTrigger, LateTrigger, SrParams, SrTrigger, Trigger};
use ecots_core::{
    Class, CostMatrix, CostModel, DecisionRecord, EconomyModel, GeneratorConfig, HorizonModel, HorizonRange,
    OpenTimeSeries, SweepResult,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ALPHAS: [f64; 7] = [0.001, 0.01, 0.1, 1.0, 10.0, 100.0, 1000.0];

// Written through the handle so the line shows even when output is captured.
fn report(criterion: &str, ok: bool, detail: impl AsRef<str>) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "\ncriterion {criterion}: {verdict} {}", detail.as_ref());
    let _ = out.flush();
    assert!(ok, "criterion {criterion} failed: {}", detail.as_ref());
}

fn label(positive: bool) -> Class {
    if positive {
        Class::Positive
    } else {
        Class::Negative
    }
}

// ---- criterion 1 ----

fn random_stochastic(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

fn random_model(rng: &mut ChaCha8Rng, horizons: HorizonRange) -> EconomyModel {
    let k = rng.random_range(1..=3);
    let cuts: Vec<Vec<f64>> = (0..horizons.len())
        .map(|_| {
            let mut c: Vec<f64> = (1..k).map(|_| rng.random_range(0.05..0.95)).collect();
            c.sort_by(f64::total_cmp);
            c.dedup();
            c
        })
        .collect();
    let levels = cuts
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let groups = c.len() + 1;
            let priors = (0..groups)
                .map(|_| {
                    let p = rng.random_range(0.0..1.0);
                    [1.0 - p, p]
                })
                .collect();
            let confusions = (0..groups)
                .map(|_| {
                    let (a, b) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
                    [[1.0 - a, a], [1.0 - b, b]]
                })
                .collect();
            // Levels ascend in eta, so the horizon below is i - 1.
            let transition = match i.checked_sub(1) {
                Some(below) => (0..groups).map(|_| random_stochastic(rng, cuts[below].len() + 1)).collect(),
                None => Vec::new(),
            };
            HorizonGroups { boundaries: c.clone(), priors, confusions, transition }
        })
        .collect();
    EconomyModel::from_parts(horizons, k, levels).unwrap()
}

// Sum over every group path from the current group down to the target horizon.
fn brute_force_cost(model: &EconomyModel, cost: &CostModel, eta: i32, group: usize, target: i32) -> f64 {
    fn walk(model: &EconomyModel, cost: &CostModel, eta: i32, group: usize, target: i32, weight: f64) -> f64 {
        let level = model.level(eta).unwrap();
        if eta == target {
            let mut total = 0.0;
            for y in 0..2 {
                for y_hat in 0..2 {
                    let cm = cost.matrix().as_array()[y_hat][y];
                    total += weight * level.priors[group][y] * level.confusions[group][y][y_hat] * cm;
                }
            }
            return total;
        }
        level.transition[group].iter().enumerate().map(|(j, p)| walk(model, cost, eta - 1, j, target, weight * p)).sum()
    }
    let h = model.horizons();
    let c_d = cost.alpha() * (h.eta_max() - target) as f64 / (h.eta_max() - h.eta_min()) as f64;
    walk(model, cost, eta, group, target, 1.0) + c_d
}

fn pairwise_auc(scores: &[f64], labels: &[Class]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (sp, lp) in scores.iter().zip(labels) {
        for (sn, ln) in scores.iter().zip(labels) {
            if *lp == Class::Positive && *ln == Class::Negative {
                pairs += 1.0;
                wins += if sp > sn {
                    1.0
                } else if sp == sn {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

#[test]
fn criterion_1_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let h = HorizonRange::new(3, -2, 3).unwrap();
    let mut worst_economy = 0.0f64;
    for _ in 0..100 {
        let model = random_model(&mut rng, h);
        let fn_cost = [1.0, 10.0, 100.0][rng.random_range(0..3)];
        let cost = CostModel::new(CostMatrix::with_false_negative_cost(fn_cost).unwrap(), rng.random_range(0.0..5.0), h).unwrap();
        for eta in h.horizons() {
            let p = rng.random_range(0.0..1.0);
            let current = current_membership(&model, eta, p).unwrap();
            let group = current.probabilities.iter().position(|&v| v == 1.0).unwrap();
            for target in h.eta_min()..=eta {
                let projected = project_membership(&model, &current, target).unwrap();
                let got = expected_cost_at(&model, &cost, &projected).unwrap();
                let want = brute_force_cost(&model, &cost, eta, group, target);
                worst_economy = worst_economy.max((got - want).abs());
            }
        }
    }

    let mut auc_exact = true;
    for _ in 0..100 {
        let n = rng.random_range(2..30);
        let mut labels: Vec<Class> = (0..n).map(|_| label(rng.random_bool(0.4))).collect();
        labels[0] = Class::Positive;
        labels[1] = Class::Negative;
        // Coarse scores so ties are common.
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64 / 5.0).collect();
        auc_exact &= auc(&scores, &labels).unwrap() == pairwise_auc(&scores, &labels);
    }

    let mut worst_stream = 0.0f64;
    let hs = HorizonRange::new(4, -3, 6).unwrap();
    for s in 0..20 {
        let len = rng.random_range(10..80);
        let labels: Vec<Class> = (0..len).map(|_| label(rng.random_bool(0.2))).collect();
        let noise: Vec<f64> = (0..len * hs.len()).map(|_| rng.random_range(0.0..1.0)).collect();
        let scored = ScoredSeries::from_fn(format!("s{s}"), hs, labels.clone(), |t, eta| {
            noise[(t - 1) * hs.len() + hs.index(eta).unwrap()]
        })
        .unwrap();
        let cost = CostModel::new(CostMatrix::with_false_negative_cost(10.0).unwrap(), 3.0, hs).unwrap();
        let records = run_scored(&scored, &CcTrigger(CcParams::new(0.6).unwrap()), &cost).unwrap();
        let mut total = 0.0;
        for r in &records {
            let y_hat = usize::from(r.predicted == Class::Positive);
            let y = usize::from(labels[r.t_p - 1] == Class::Positive);
            let cm = [[0.0, 10.0], [1.0, 0.0]][y_hat][y];
            total += cm + 3.0 * (6 - r.eta) as f64 / 9.0;
        }
        let want = total / len as f64;
        worst_stream = worst_stream.max((avg_cost_series(&records, len, &cost).unwrap() - want).abs());
    }

    report(
        "1",
        worst_economy <= 1e-12 && auc_exact && worst_stream <= 1e-12,
        format!("economy max err {worst_economy:.1e}, auc exact {auc_exact}, avg cost max err {worst_stream:.1e}"),
    );
}

// ---- criterion 2 ----

#[test]
fn criterion_2_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let d = rng.random_range(1..=30);
        let n = rng.random_range(5..=200);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let labels: Vec<Class> = (0..n).map(|i| label(i % 3 == 0 || rng.random_bool(0.2))).collect();
        let lambda = [0.0, 1e-3, 0.1, 1.0][rng.random_range(0..4)];
        let obj = LogisticObjective::new(rows, &labels, lambda, rng.random_range(0.5..5.0)).unwrap();
        let theta: Vec<f64> = (0..obj.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let analytic = obj.gradient(&theta);
        let step = 1e-5;
        let numeric: Vec<f64> = (0..theta.len())
            .map(|i| {
                let mut up = theta.clone();
                let mut down = theta.clone();
                up[i] += step;
                down[i] -= step;
                (obj.loss(&up) - obj.loss(&down)) / (2.0 * step)
            })
            .collect();
        let diff = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
        worst = worst.max(diff / scale);
    }
    report("2", worst <= 1e-5, format!("max relative error {worst:.2e}"));
}

// ---- criterion 3 ----

fn stream_config(seed: u64, num_series: usize) -> GeneratorConfig {
    GeneratorConfig { num_series, length: 2000, ..benchmark_generator_config(seed) }
}

struct StreamFixture {
    series: Vec<OpenTimeSeries>,
    collection: ClassifierCollection<HorizonModel>,
    triggers: Vec<(&'static str, Box<dyn Trigger>)>,
    cost: CostModel,
}

fn stream_fixture() -> StreamFixture {
    let h = HorizonRange::default_predictive_maintenance();
    let train = generate_synthetic(&stream_config(31, 20)).unwrap();
    let datasets = build_horizon_datasets(&train, &h).unwrap();
    let (collection, _) = tune_and_train_collection(&datasets, &CostMatrix::with_false_negative_cost(10.0).unwrap(), &TrainingConfig::default()).unwrap();
    let estimation = generate_synthetic(&stream_config(32, 10)).unwrap();
    let scored: Vec<_> = estimation.iter().map(|s| score_series(s, &collection).unwrap()).collect();
    let model = fit_economy_scored(&scored, 3).unwrap();
    let cost = CostModel::new(CostMatrix::with_false_negative_cost(10.0).unwrap(), 1.0, h).unwrap();
    let policy = EconomyPolicy::compile(&model, &cost).unwrap();
    let triggers: Vec<(&'static str, Box<dyn Trigger>)> = vec![
        ("early", Box::new(EarlyTrigger)),
        ("late", Box::new(LateTrigger)),
        ("cc", Box::new(CcTrigger(CcParams::new(0.5).unwrap()))),
        ("sr", Box::new(SrTrigger(SrParams::new([1.0, 0.5, -0.5]).unwrap()))),
        ("economy", Box::new(policy)),
    ];
    StreamFixture { series: generate_synthetic(&stream_config(33, 50)).unwrap(), collection, triggers, cost }
}

fn bits(records: &[DecisionRecord]) -> Vec<(usize, usize, i32, Class, Class, u64, u64, bool)> {
    records
        .iter()
        .map(|r| (r.t_p, r.t, r.eta, r.predicted, r.actual, r.misclassification_cost.to_bits(), r.delay_cost.to_bits(), r.forced))
        .collect()
}

fn corrupt_after(series: &OpenTimeSeries, cutoff: usize) -> OpenTimeSeries {
    let mut telemetry = series.telemetry().to_owned();
    let mut errors: Array2<bool> = series.errors().to_owned();
    let mut labels = series.labels().to_vec();
    for row in cutoff..series.len() {
        telemetry.row_mut(row).mapv_inplace(|v| -1e6 * v - 7.0);
        errors.row_mut(row).mapv_inplace(|e| !e);
        labels[row] = label(labels[row] == Class::Negative);
    }
    OpenTimeSeries::new(series.id(), telemetry, errors, labels).unwrap()
}

#[test]
fn criterion_3_streaming_invariants() {
    let first = stream_fixture();
    let second = stream_fixture();
    let h = *first.collection.horizons();
    let cutoff = 1000;
    let mut problems = Vec::new();
    for (s, s2) in first.series.iter().zip(&second.series) {
        let scored = score_series(s, &first.collection).unwrap();
        let scored_again = score_series(s2, &second.collection).unwrap();
        let corrupted = score_series(&corrupt_after(s, cutoff), &first.collection).unwrap();
        for ((name, trig), (_, trig2)) in first.triggers.iter().zip(&second.triggers) {
            let records = run_scored(&scored, trig.as_ref(), &first.cost).unwrap();
            let mut targets: Vec<usize> = records.iter().map(|r| r.t_p).collect();
            targets.sort_unstable();
            if targets != (1..=s.len()).collect::<Vec<_>>() {
                problems.push(format!("{name} {}: decisions do not cover each timestamp once", s.id()));
            }
            if let Some(r) = records.iter().find(|r| !h.contains(r.eta) || r.t_p as i64 - r.t as i64 != r.eta as i64 || r.t < h.window() || r.t > s.len()) {
                problems.push(format!("{name} {}: bad record {r:?}", s.id()));
            }
            let again = run_scored(&scored_again, trig2.as_ref(), &second.cost).unwrap();
            if bits(&records) != bits(&again) {
                problems.push(format!("{name} {}: re-run differs", s.id()));
            }
            let decision = |r: &DecisionRecord| (r.t_p, r.t, r.eta, r.predicted, r.forced);
            let before: BTreeMap<usize, _> = records.iter().filter(|r| r.t <= cutoff).map(|r| (r.t_p, decision(r))).collect();
            let after: BTreeMap<usize, _> = run_scored(&corrupted, trig.as_ref(), &first.cost)
                .unwrap()
                .iter()
                .filter(|r| r.t <= cutoff)
                .map(|r| (r.t_p, decision(r)))
                .collect();
            if before != after {
                problems.push(format!("{name} {}: decisions up to t={cutoff} changed after corrupting later data", s.id()));
            }
        }
    }
    report("3", problems.is_empty(), format!("{} series x 5 methods, {} problems {:?}", first.series.len(), problems.len(), problems.first()));
}

// ---- criteria 4 to 7 share the benchmark pipeline ----

struct Benchmark {
    auc: BTreeMap<i32, f64>,
    prepared: Prepared,
    sweep: SweepResult,
}

fn benchmark() -> &'static Benchmark {
    static BENCH: OnceLock<Benchmark> = OnceLock::new();
    BENCH.get_or_init(|| {
        let cfg = benchmark_generator_config(BENCHMARK_SEED);
        let split = split_series(generate_synthetic(&cfg).unwrap(), BENCHMARK_SEED).unwrap();
        let train = build_horizon_datasets(&split.train, &cfg.horizons).unwrap();
        let cms = CostMatrix::standard_set();
        let (collection, _) = tune_and_train_collection(&train, &cms[0].1, &TrainingConfig::default()).unwrap();
        let test = build_horizon_datasets(&split.test, &cfg.horizons).unwrap();
        let auc = auc_profile(&collection, &test).unwrap();
        let prepared = Prepared::new(&split, &collection, &TuningGrids::default()).unwrap();
        let sweep = run_sweep(&prepared, &Method::ALL, &ALPHAS, &cms[..2], |_, _, _| {}).unwrap();
        Benchmark { auc, prepared, sweep }
    })
}

fn row(b: &Benchmark, m: Method, alpha: f64, cm: &str) -> (f64, f64) {
    let r = b.sweep.get(m, alpha, cm).unwrap();
    (r.avg_cost, r.mean_horizon)
}

#[test]
fn criterion_4_auc_profile_shape() {
    let b = benchmark();
    let at_max = b.auc[&50];
    let peak = b.auc.range(10..=30).map(|(_, a)| *a).fold(f64::NEG_INFINITY, f64::max);
    report("4", at_max < 0.6 && peak > 0.85, format!("AUC(50) = {at_max:.3}, max AUC over [10, 30] = {peak:.3}"));
}

#[test]
fn criterion_5_trade_off() {
    let b = benchmark();
    let mut increasing = Vec::new();
    for cm in ["cm1", "cm2"] {
        for m in Method::ALL {
            for w in ALPHAS.windows(2) {
                let (lo, hi) = (row(b, m, w[0], cm).0, row(b, m, w[1], cm).0);
                if hi < lo * 0.95 {
                    increasing.push(format!("{m} {cm} {} -> {}: {lo:.4} -> {hi:.4}", w[0], w[1]));
                }
            }
        }
    }
    let mut beats = Vec::new();
    for cm in ["cm1", "cm2"] {
        let base = row(b, Method::Early, 0.001, cm).0.min(row(b, Method::Late, 0.001, cm).0);
        for m in [Method::Sr, Method::Economy] {
            let c = row(b, m, 0.001, cm).0;
            if c > base {
                beats.push(format!("{m} {cm}: {c:.4} > {base:.4}"));
            }
        }
    }
    let early = row(b, Method::Early, 1000.0, "cm2").0;
    let best = Method::ALL.iter().map(|&m| row(b, m, 1000.0, "cm2").0).fold(f64::INFINITY, f64::min);
    let early_best = early <= best * 1.02;
    let detail = format!(
        "(a) violations {increasing:?}; (b) violations {beats:?}; (c) early {early:.4} vs best {best:.4}"
    );
    report("5", increasing.is_empty() && beats.is_empty() && early_best, detail);
}

#[test]
fn criterion_6_horizon_shift() {
    let b = benchmark();
    let mut ok = true;
    let mut parts = Vec::new();
    for m in [Method::Economy, Method::Sr] {
        let (lo, hi) = (row(b, m, 0.001, "cm2").1, row(b, m, 0.1, "cm2").1);
        ok &= hi > lo;
        parts.push(format!("{m} mean horizon {lo:.2} -> {hi:.2}"));
    }
    report("6", ok, parts.join(", "));
}

#[test]
fn criterion_7_degeneracies() {
    let b = benchmark();
    let p = &b.prepared;
    let h = p.horizons;
    let mut problems = Vec::new();

    let single = fit_economy_scored(&p.estimation, 1).unwrap();
    for (id, cm) in CostMatrix::standard_set() {
        for alpha in [0.001, 1.0, 1000.0] {
            let cost = CostModel::new(cm, alpha, h).unwrap();
            let policy = EconomyPolicy::compile(&single, &cost).unwrap();
            let mut seen = std::collections::BTreeSet::new();
            for s in &p.test {
                for r in run_scored(s, &policy, &cost).unwrap() {
                    // Targets whose whole horizon range is reachable.
                    let interior = r.t_p as i64 - h.eta_max() as i64 >= h.window() as i64 && r.t_p as i64 - (h.eta_min() as i64) <= s.len() as i64;
                    if interior {
                        seen.insert(r.eta);
                    }
                }
            }
            if seen.len() != 1 {
                problems.push(format!("K=1 {id} alpha {alpha}: horizons {seen:?}"));
            }
        }
    }

    let model = fit_economy_scored(&p.estimation, 3).unwrap();
    let free = CostModel::new(CostMatrix::zeros(), 1.0, h).unwrap();
    let policy = EconomyPolicy::compile(&model, &free).unwrap();
    for s in &p.test {
        for r in run_scored(s, &policy, &free).unwrap() {
            let first_t = (r.t_p as i64 - h.eta_max() as i64).max(h.window() as i64) as usize;
            if r.t != first_t {
                problems.push(format!("zero matrix: {} t_p={} decided at t={} not {first_t}", s.id(), r.t_p, r.t));
                break;
            }
        }
    }

    let cost = CostModel::new(CostMatrix::with_false_negative_cost(10.0).unwrap(), 1.0, h).unwrap();
    let never = CcTrigger(CcParams::new(1.0).unwrap());
    for s in &p.test {
        if bits(&run_scored(s, &never, &cost).unwrap()) != bits(&run_scored(s, &LateTrigger, &cost).unwrap()) {
            problems.push(format!("theta=1 differs from late on {}", s.id()));
        }
    }
    report("7", problems.is_empty(), format!("{} problems {:?}", problems.len(), problems.first()));
}

// ---- criterion 8, needs the public predictive-maintenance files ----

#[test]
#[ignore = "needs ECOTS_PDM_TELEMETRY, ECOTS_PDM_ERRORS and ECOTS_PDM_FAILURES"]
fn criterion_8_public_dataset_counts() {
    let path = |var: &str| std::env::var(var).unwrap_or_else(|_| panic!("{var} is not set"));
    let series = ecots_core::data::load_pdm_csv(path("ECOTS_PDM_TELEMETRY"), path("ECOTS_PDM_ERRORS"), path("ECOTS_PDM_FAILURES")).unwrap();
    let s = ecots_core::data::IngestSummary::of(&series);
    let counts = (s.num_series, s.num_timestamps, s.error_flags, s.failure_timestamps);
    report("8", counts == (100, 876_100, 3_919, 761), format!("series, timestamps, error flags, failures = {counts:?}"));
}
