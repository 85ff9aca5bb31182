use std::ops::RangeInclusive;

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::OpenTimeSeries;
use crate::cost::{Class, HorizonRange};
use crate::error::{Error, Result};

/// Length of a failure chunk (consecutive label-1 timestamps), drawn uniformly.
pub const FAILURE_DURATION: RangeInclusive<usize> = 1..=4;

/// Number of consecutive timestamps flagged by a premise burst.
pub const PREMISE_BURST_LEN: usize = 3;

/// Settings of the synthetic open-time-series generator.
///
/// Each series has `num_telemetry` Gaussian channels (channel `c` centred on
/// `10 * (c + 1)`, unit noise) and `num_error_types` Boolean channels.
/// Failures arrive as a Poisson number of non-overlapping label-1 chunks.
/// With probability `premise_fire_prob` a failure starting at `f` is preceded
/// by a premise at `f - L`, `L` uniform in `[premise_lag_low, premise_lag_high]`:
/// for [`PREMISE_BURST_LEN`] timestamps one error channel fires and one
/// telemetry channel is shifted by `telemetry_drift_amplitude`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub num_series: usize,
    pub length: usize,
    pub num_telemetry: usize,
    pub num_error_types: usize,
    /// Expected number of failures per series.
    pub failure_rate: f64,
    pub premise_lag_low: usize,
    pub premise_lag_high: usize,
    pub premise_fire_prob: f64,
    /// Per-timestamp, per-channel probability of a spurious error flag.
    pub noise_error_rate: f64,
    pub telemetry_drift_amplitude: f64,
    /// Shift of every telemetry channel while a failure is in progress.
    #[serde(default)]
    pub failure_drift_amplitude: f64,
    /// Only used to check that series are long enough to hold a target.
    pub horizons: HorizonRange,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_series: 100,
            length: 3000,
            num_telemetry: 4,
            num_error_types: 5,
            failure_rate: 30.0,
            premise_lag_low: 14,
            premise_lag_high: 23,
            premise_fire_prob: 0.9,
            noise_error_rate: 0.002,
            telemetry_drift_amplitude: 3.0,
            failure_drift_amplitude: 0.0,
            horizons: HorizonRange::default_predictive_maintenance(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_series == 0 {
            return invalid("num_series must be at least 1".into());
        }
        if self.num_telemetry == 0 {
            return invalid("num_telemetry must be at least 1".into());
        }
        for (name, p) in [("premise_fire_prob", self.premise_fire_prob), ("noise_error_rate", self.noise_error_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return invalid(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if !self.failure_rate.is_finite() || self.failure_rate < 0.0 {
            return invalid(format!("failure_rate must be >= 0, got {}", self.failure_rate));
        }
        if !self.telemetry_drift_amplitude.is_finite() || !self.failure_drift_amplitude.is_finite() {
            return invalid("drift amplitudes must be finite".into());
        }
        if self.premise_lag_low > self.premise_lag_high {
            return invalid(format!(
                "premise_lag_low ({}) exceeds premise_lag_high ({})",
                self.premise_lag_low, self.premise_lag_high
            ));
        }
        if self.length <= self.horizons.target_spacing() {
            return invalid(format!(
                "length {} must exceed window + eta_max = {}",
                self.length,
                self.horizons.target_spacing()
            ));
        }
        Ok(())
    }
}

/// Deterministic synthetic series. Series `i` draws from its own ChaCha
/// stream, so the output does not depend on thread scheduling.
pub fn generate_synthetic(config: &GeneratorConfig) -> Result<Vec<OpenTimeSeries>> {
    config.validate()?;
    (0..config.num_series).into_par_iter().map(|i| generate_one(config, i)).collect()
}

fn generate_one(config: &GeneratorConfig, index: usize) -> Result<OpenTimeSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);

    let len = config.length;
    let p = config.num_telemetry;
    let e = config.num_error_types;
    let noise = Normal::new(0.0, 1.0).expect("unit normal");

    let mut telemetry = Array2::<f64>::zeros((len, p));
    for ((_, c), v) in telemetry.indexed_iter_mut() {
        *v = 10.0 * (c + 1) as f64 + noise.sample(&mut rng);
    }
    let mut errors = Array2::<bool>::default((len, e));
    if config.noise_error_rate > 0.0 {
        for v in errors.iter_mut() {
            *v = rng.random_bool(config.noise_error_rate);
        }
    }

    let mut labels = vec![Class::Negative; len];
    let num_failures = if config.failure_rate > 0.0 {
        Poisson::new(config.failure_rate).expect("positive rate").sample(&mut rng) as usize
    } else {
        0
    };
    // Candidate chunks (0-indexed start, duration), accepted in time order
    // when they do not touch an earlier chunk.
    let mut chunks: Vec<(usize, usize)> = (0..num_failures)
        .map(|_| (rng.random_range(0..len), rng.random_range(FAILURE_DURATION)))
        .collect();
    chunks.sort_unstable();
    let mut next_free = 0;
    for (start, duration) in chunks {
        if start < next_free {
            continue;
        }
        let end = (start + duration).min(len);
        labels[start..end].fill(Class::Positive);
        if config.failure_drift_amplitude != 0.0 {
            telemetry.slice_mut(s![start..end, ..]).mapv_inplace(|v| v + config.failure_drift_amplitude);
        }
        next_free = end + 1;

        if !rng.random_bool(config.premise_fire_prob) {
            continue;
        }
        let lag = rng.random_range(config.premise_lag_low..=config.premise_lag_high);
        let channel = rng.random_range(0..p.max(e).max(1));
        let Some(burst_start) = start.checked_sub(lag) else {
            continue;
        };
        for t in burst_start..(burst_start + PREMISE_BURST_LEN).min(len) {
            if e > 0 {
                errors[[t, channel % e]] = true;
            }
            telemetry[[t, channel % p]] += config.telemetry_drift_amplitude;
        }
    }

    OpenTimeSeries::new(format!("syn-{index:04}"), telemetry, errors, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeneratorConfig {
        GeneratorConfig { num_series: 6, length: 400, ..GeneratorConfig::default() }
    }

    #[test]
    fn disabled_premises_and_noise_give_silent_error_channels() {
        let cfg = GeneratorConfig { premise_fire_prob: 0.0, noise_error_rate: 0.0, ..small() };
        for s in generate_synthetic(&cfg).unwrap() {
            assert!(s.errors().iter().all(|&f| !f));
            assert!(s.labels().contains(&Class::Positive));
        }
    }

    #[test]
    fn zero_failure_rate_gives_all_negative_labels() {
        let cfg = GeneratorConfig { failure_rate: 0.0, ..small() };
        for s in generate_synthetic(&cfg).unwrap() {
            assert!(s.labels().iter().all(|&c| c == Class::Negative));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a, b);
        for (x, y) in a.iter().zip(&b) {
            for (u, v) in x.telemetry().iter().zip(y.telemetry().iter()) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
        let c = generate_synthetic(&GeneratorConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn series_prefix_does_not_depend_on_num_series() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&GeneratorConfig { num_series: 2, ..small() }).unwrap();
        assert_eq!(&a[..2], &b[..]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            GeneratorConfig { num_series: 0, ..small() },
            GeneratorConfig { premise_fire_prob: 1.5, ..small() },
            GeneratorConfig { noise_error_rate: -0.1, ..small() },
            GeneratorConfig { premise_lag_low: 30, premise_lag_high: 20, ..small() },
            GeneratorConfig { length: 60, ..small() },
            GeneratorConfig { failure_rate: f64::NAN, ..small() },
        ];
        for cfg in bad {
            assert!(matches!(generate_synthetic(&cfg), Err(Error::InvalidConfig(_))), "{cfg:?}");
        }
    }

    #[test]
    fn premise_burst_precedes_failure_at_fixed_lag() {
        // With one error channel, no noise and a fixed lag, every flag must
        // belong to a burst that starts exactly `lag` before a chunk start.
        let lag = 17;
        let cfg = GeneratorConfig {
            num_error_types: 1,
            noise_error_rate: 0.0,
            premise_fire_prob: 1.0,
            premise_lag_low: lag,
            premise_lag_high: lag,
            ..small()
        };
        for s in generate_synthetic(&cfg).unwrap() {
            let labels = s.labels();
            let starts: Vec<usize> = (0..s.len())
                .filter(|&t| labels[t] == Class::Positive && (t == 0 || labels[t - 1] == Class::Negative))
                .collect();
            let mut expected = vec![false; s.len()];
            for &f in &starts {
                if let Some(b) = f.checked_sub(lag) {
                    for t in b..(b + PREMISE_BURST_LEN).min(s.len()) {
                        expected[t] = true;
                    }
                }
            }
            let flags: Vec<bool> = s.errors().column(0).to_vec();
            assert_eq!(flags, expected);
        }
    }
}
