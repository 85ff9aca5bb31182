//! Run configuration.
//!
//! Layers, later wins: built-in defaults, the TOML file, `--set key=value`
//! overrides, then the dedicated `--seed`, `--out` and `--jobs` flags. The
//! merged document is deserialized strictly, so unknown keys are errors.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use ecots_core::classifiers::{RhoPolicy, TrainingConfig};
use ecots_core::sweep::{benchmark_generator_config, TuningGrids, BENCHMARK_SEED};
use ecots_core::triggers::{sr_grid, theta_grid, CcParams, SrParams};
use ecots_core::{CostMatrix, GeneratorConfig, HorizonRange, Method};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Pdm,
    Native,
}

/// The three CSV files of the public predictive-maintenance dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdmPaths {
    pub telemetry: PathBuf,
    pub errors: PathBuf,
    pub failures: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Its `horizons` always follow the top-level `horizons`.
    pub synthetic: GeneratorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pdm: Option<PdmPaths>,
    /// A native-format series file used instead of `<out>/data/series.csv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub native: Option<PathBuf>,
}

/// `matrix[predicted][actual]`, i.e. `[[TN, FN], [FP, TP]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedMatrix {
    pub id: String,
    pub matrix: [[f64; 2]; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    /// Id of the matrix scoring held-out predictions when picking lambda.
    pub cost_matrix: String,
    pub lambdas: Vec<f64>,
    pub holdout_fraction: f64,
    pub rho: RhoPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub thetas: Vec<f64>,
    pub gammas: Vec<[f64; 3]>,
    pub ks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Write one decision log per (method, alpha, matrix) cell.
    pub decision_logs: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSelection {
    pub alpha: f64,
    pub cm: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    pub histograms: Vec<HistogramSelection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds the split and the held-out draw. `--seed` also sets the generator seed.
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
    pub horizons: HorizonRange,
    pub methods: Vec<Method>,
    pub alphas: Vec<f64>,
    pub cost_matrices: Vec<NamedMatrix>,
    pub training: TrainingSection,
    pub grids: GridSection,
    pub sweep: SweepSection,
    pub report: ReportSection,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let horizons = HorizonRange::default_predictive_maintenance();
        let training = TrainingConfig::default();
        Self {
            seed: BENCHMARK_SEED,
            out: PathBuf::from("ecots-out"),
            jobs: 0,
            horizons,
            methods: Method::ALL.to_vec(),
            alphas: vec![0.001, 0.01, 0.1, 1.0, 10.0, 100.0, 1000.0],
            cost_matrices: CostMatrix::standard_set()
                .into_iter()
                .map(|(id, m)| NamedMatrix { id, matrix: *m.as_array() })
                .collect(),
            training: TrainingSection {
                cost_matrix: "cm1".into(),
                lambdas: training.lambda_grid,
                holdout_fraction: training.holdout_fraction,
                rho: training.rho,
            },
            grids: GridSection {
                thetas: theta_grid().iter().map(|t| t.theta()).collect(),
                gammas: sr_grid().iter().map(|g| g.gamma()).collect(),
                ks: (1..=5).collect(),
            },
            sweep: SweepSection { decision_logs: true },
            report: ReportSection {
                histograms: vec![
                    HistogramSelection { alpha: 0.001, cm: "cm2".into() },
                    HistogramSelection { alpha: 0.1, cm: "cm2".into() },
                ],
            },
            data: DataConfig {
                source: DataSource::Synthetic,
                synthetic: GeneratorConfig { horizons, ..benchmark_generator_config(BENCHMARK_SEED) },
                pdm: None,
                native: None,
            },
        }
    }
}

/// Command-line layers applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub set: Vec<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

fn config_err(e: impl ToString) -> CliError {
    CliError::Config(e.to_string())
}

fn merge(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let mut keys = path.split('.').peekable();
    let mut current = table;
    while let Some(key) = keys.next() {
        if key.is_empty() {
            return Err(config_err(format!("bad key {path:?}")));
        }
        if keys.peek().is_none() {
            current.insert(key.to_owned(), value);
            return Ok(());
        }
        let next = current.entry(key.to_owned()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        current = match next {
            toml::Value::Table(t) => t,
            _ => return Err(config_err(format!("{key} in {path:?} is not a table"))),
        };
    }
    Ok(())
}

/// `key=value` where value is any TOML value; bare words are read as strings.
fn apply_set(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("expected key=value, got {assignment:?}")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
    set_path(table, key.trim(), value)
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut table = toml::Table::try_from(RunConfig::default()).map_err(config_err)?;
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let file: toml::Table = text.parse().map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            merge(&mut table, file);
        }
        for s in &overrides.set {
            apply_set(&mut table, s)?;
        }
        if let Some(seed) = overrides.seed {
            let seed = toml::Value::Integer(i64::try_from(seed).map_err(config_err)?);
            set_path(&mut table, "seed", seed.clone())?;
            set_path(&mut table, "data.synthetic.seed", seed)?;
        }
        if let Some(out) = &overrides.out {
            set_path(&mut table, "out", toml::Value::String(out.to_string_lossy().into_owned()))?;
        }
        if let Some(jobs) = overrides.jobs {
            set_path(&mut table, "jobs", toml::Value::Integer(i64::try_from(jobs).map_err(config_err)?))?;
        }
        if let Some(h) = table.get("horizons").cloned() {
            set_path(&mut table, "data.synthetic.horizons", h)?;
        }
        let config: RunConfig = table.try_into().map_err(config_err)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.methods.is_empty() {
            return bad("methods is empty".into());
        }
        if self.methods.iter().collect::<BTreeSet<_>>().len() != self.methods.len() {
            return bad("methods lists a method twice".into());
        }
        if self.alphas.is_empty() {
            return bad("alphas is empty".into());
        }
        for (i, a) in self.alphas.iter().enumerate() {
            if !a.is_finite() || *a < 0.0 {
                return bad(format!("alpha must be finite and >= 0, got {a}"));
            }
            if self.alphas[..i].contains(a) {
                return bad(format!("alpha {a} is listed twice"));
            }
        }
        if self.cost_matrices.is_empty() {
            return bad("cost_matrices is empty".into());
        }
        for (i, m) in self.cost_matrices.iter().enumerate() {
            if m.id.is_empty() || !m.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return bad(format!("cost matrix id {:?} must be non-empty and use only [A-Za-z0-9_-]", m.id));
            }
            if self.cost_matrices[..i].iter().any(|o| o.id == m.id) {
                return bad(format!("cost matrix id {} is listed twice", m.id));
            }
            CostMatrix::new(m.matrix)?;
        }
        self.matrix(&self.training.cost_matrix)?;
        if self.training.lambdas.is_empty() || self.training.lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return bad("training.lambdas must be a non-empty list of finite values >= 0".into());
        }
        if !(self.training.holdout_fraction > 0.0 && self.training.holdout_fraction < 1.0) {
            return bad(format!("training.holdout_fraction must lie in (0, 1), got {}", self.training.holdout_fraction));
        }
        let grids = self.tuning_grids()?;
        for (method, empty) in [
            (Method::Cc, grids.thetas.is_empty()),
            (Method::Sr, grids.gammas.is_empty()),
            (Method::Economy, grids.ks.is_empty()),
        ] {
            if empty && self.methods.contains(&method) {
                return bad(format!("the tuning grid of {method} is empty"));
            }
        }
        if grids.ks.contains(&0) {
            return bad("grids.ks must be at least 1".into());
        }
        if self.data.source == DataSource::Pdm && self.data.pdm.is_none() {
            return bad("data.source = \"pdm\" needs [data.pdm] with telemetry, errors and failures paths".into());
        }
        if self.data.source == DataSource::Native && self.data.native.is_none() {
            return bad("data.source = \"native\" needs data.native".into());
        }
        if self.data.source == DataSource::Synthetic {
            self.data.synthetic.validate()?;
        }
        Ok(())
    }

    pub fn matrix(&self, id: &str) -> Result<CostMatrix> {
        let m = self
            .cost_matrices
            .iter()
            .find(|m| m.id == id)
            .ok_or_else(|| config_err(format!("no cost matrix with id {id:?}")))?;
        Ok(CostMatrix::new(m.matrix)?)
    }

    pub fn matrices(&self) -> Result<Vec<(String, CostMatrix)>> {
        self.cost_matrices.iter().map(|m| Ok((m.id.clone(), CostMatrix::new(m.matrix)?))).collect()
    }

    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            lambda_grid: self.training.lambdas.clone(),
            rho: self.training.rho,
            holdout_fraction: self.training.holdout_fraction,
            seed: self.seed,
        }
    }

    pub fn tuning_grids(&self) -> Result<TuningGrids> {
        Ok(TuningGrids {
            thetas: self.grids.thetas.iter().map(|&t| CcParams::new(t)).collect::<Result<_, _>>()?,
            gammas: self.grids.gammas.iter().map(|&g| SrParams::new(g)).collect::<Result<_, _>>()?,
            ks: self.grids.ks.clone(),
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(config_err)
    }

    /// SHA-256 of the effective configuration rendered as TOML.
    pub fn hash(&self) -> Result<String> {
        Ok(hex(&Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out.join("data")
    }

    pub fn model_dir(&self) -> PathBuf {
        self.out.join("model")
    }

    pub fn sweep_dir(&self) -> PathBuf {
        self.out.join("sweep")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out.join("report")
    }

    /// The series file train and sweep read.
    pub fn series_path(&self) -> PathBuf {
        match (&self.data.source, &self.data.native) {
            (DataSource::Native, Some(p)) => p.clone(),
            _ => self.data_dir().join("series.csv"),
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str, set: &[&str]) -> Result<RunConfig> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, text).unwrap();
        let overrides = Overrides { set: set.iter().map(|s| s.to_string()).collect(), ..Overrides::default() };
        RunConfig::load(Some(&path), &overrides)
    }

    #[test]
    fn defaults_round_trip_and_validate() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.horizons.len(), 61);
        assert_eq!(c.grids.gammas.len(), 125);
        assert_eq!(c.grids.thetas.len(), 21);
        let back: RunConfig = toml::from_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(RunConfig::load(None, &Overrides::default()).unwrap(), c);
    }

    #[test]
    fn file_then_set_then_flags() {
        let c = load("alphas = [0.5, 2.0]\n[data.synthetic]\nnum_series = 12\n", &["data.synthetic.length=400", "methods=[\"late\"]"]).unwrap();
        assert_eq!(c.alphas, vec![0.5, 2.0]);
        assert_eq!(c.data.synthetic.num_series, 12);
        assert_eq!(c.data.synthetic.length, 400);
        assert_eq!(c.methods, vec![Method::Late]);
        assert_eq!(c.data.synthetic.failure_rate, RunConfig::default().data.synthetic.failure_rate);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 3\n").unwrap();
        let flags = Overrides { set: vec!["seed=4".into()], seed: Some(9), out: Some("x".into()), jobs: Some(2) };
        let c = RunConfig::load(Some(&path), &flags).unwrap();
        assert_eq!((c.seed, c.data.synthetic.seed, c.jobs), (9, 9, 2));
        assert_eq!(c.out, PathBuf::from("x"));
    }

    #[test]
    fn bare_words_are_strings() {
        let dir = tempfile::tempdir().unwrap();
        let c = load("", &[&format!("data.native={}", dir.path().join("s.csv").display()), "data.source=native"]).unwrap();
        assert_eq!(c.data.source, DataSource::Native);
        assert_eq!(c.series_path(), dir.path().join("s.csv"));
    }

    #[test]
    fn generator_follows_top_level_horizons() {
        let c = load("[horizons]\nwindow = 5\neta_min = -5\neta_max = 20\n", &[]).unwrap();
        assert_eq!(c.data.synthetic.horizons, c.horizons);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for (text, set) in [
            ("alphas = [0.1, 1.0, 0.1]\n", vec![]),
            ("[[cost_matrices]]\nid = \"a\"\nmatrix = [[0, 1], [1, 0]]\n[[cost_matrices]]\nid = \"a\"\nmatrix = [[0, 2], [1, 0]]\n", vec!["training.cost_matrix=\"a\""]),
            ("alphas = [-1.0]\n", vec![]),
            ("methods = []\n", vec![]),
            ("unknown = 1\n", vec![]),
            ("", vec!["training.cost_matrix=cm9"]),
            ("", vec!["grids.thetas=[1.5]"]),
            ("", vec!["grids.ks=[]"]),
            ("", vec!["data.synthetic.num_series=0"]),
            ("", vec!["data.source=pdm"]),
            ("", vec!["horizons.eta_max=-1"]),
            ("", vec!["novalue"]),
        ] {
            let err = load(text, &set).unwrap_err();
            assert_eq!(err.exit_code(), 1, "{text} {set:?}: {err}");
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.seed += 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
    }
}
