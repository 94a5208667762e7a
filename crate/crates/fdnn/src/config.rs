//! Flat key=value run configuration.
//!
//! One file drives every command; unknown and duplicate keys are
//! errors, so typos fail loudly instead of silently running defaults.
//! `snapshot` emits the fully resolved configuration in canonical form,
//! and parsing a snapshot reproduces the configuration exactly.

use crate::adjoint::{BackwardKind, SigmaConvention};
use crate::data::{generate_cls, generate_clusters, load_csv, CsvSchema, Dataset};
use crate::error::{Error, Result};
use crate::fractional::FracOrder;
use crate::network::{Activation, HyperParams, PropagationMode};
use crate::optimizer::ArmijoConfig;
use crate::trainer::{OptimizerKind, TrainConfig};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

/// Data source selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Cls,
    Clusters,
    Csv,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Cls => "cls",
            DatasetKind::Clusters => "clusters",
            DatasetKind::Csv => "csv",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cls" => Ok(DatasetKind::Cls),
            "clusters" => Ok(DatasetKind::Clusters),
            "csv" => Ok(DatasetKind::Csv),
            other => Err(Error::Config(format!(
                "unknown dataset '{other}' (expected cls, clusters, or csv)"
            ))),
        }
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub n_train: usize,
    pub n_test: usize,
    pub train_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
    pub feature_columns: Vec<String>,
    pub label_column: String,
    pub delimiter: char,
    pub n_cluster_classes: usize,
    pub cluster_spread: f64,

    pub gamma: f64,
    pub tau: f64,
    pub n_layers: usize,
    pub mode: PropagationMode,
    pub activation: Activation,
    pub xi_w: f64,
    pub xi_k: f64,
    pub xi_b: f64,

    pub seed: u64,
    pub m1: usize,
    pub m2: usize,
    pub batch_fraction: f64,
    pub backward: BackwardKind,
    pub sigma_convention: SigmaConvention,
    pub optimizer: OptimizerKind,
    pub grad_tol: f64,
    pub armijo_c1: f64,
    pub armijo_rho: f64,
    pub armijo_initial_step: f64,
    pub armijo_max_backtracks: usize,

    pub lambda: f64,
    pub u0: f64,
    pub t_final: f64,
    pub l1_taus: Vec<f64>,
    pub l1_check_tau: f64,
    pub l1_tolerance: f64,
    pub l1_ratio_min: f64,

    pub gc_n_features: usize,
    pub gc_n_classes: usize,
    pub gc_n_samples: usize,
    pub gc_xi_w: f64,
    pub gc_xi_k: f64,
    pub gc_xi_b: f64,

    pub modes: Vec<PropagationMode>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetKind::Cls,
            n_train: 2000,
            n_test: 2000,
            train_csv: None,
            test_csv: None,
            feature_columns: vec!["feature_1".into(), "feature_2".into()],
            label_column: "label".into(),
            delimiter: ',',
            n_cluster_classes: 20,
            cluster_spread: 0.9,

            gamma: 0.5,
            tau: 0.2,
            n_layers: 5,
            mode: PropagationMode::Fractional,
            activation: Activation::Tanh,
            xi_w: 1e-1,
            xi_k: 1e2,
            xi_b: 1e-2,

            seed: 0,
            m1: 6,
            m2: 30,
            batch_fraction: 0.5,
            backward: BackwardKind::Exact,
            sigma_convention: SigmaConvention::Current,
            optimizer: OptimizerKind::Bfgs,
            grad_tol: 1e-6,
            armijo_c1: 1e-4,
            armijo_rho: 0.5,
            armijo_initial_step: 1.0,
            armijo_max_backtracks: 30,

            lambda: -4.0,
            u0: 0.5,
            t_final: 1.0,
            l1_taus: vec![0.02, 0.01, 0.005, 0.0025],
            l1_check_tau: 0.005,
            l1_tolerance: 2e-2,
            l1_ratio_min: 1.3,

            gc_n_features: 2,
            gc_n_classes: 2,
            gc_n_samples: 10,
            gc_xi_w: 1e-2,
            gc_xi_k: 1e-1,
            gc_xi_b: 1e-2,

            modes: vec![
                PropagationMode::Fractional,
                PropagationMode::Residual,
                PropagationMode::Plain,
            ],
        }
    }
}

fn bad_value(key: &str, value: &str) -> Error {
    Error::Config(format!("bad value for {key}: '{value}'"))
}

fn parse_as<T>(key: &str, value: &str) -> Result<T>
where
    T: FromStr,
{
    value.parse().map_err(|_| bad_value(key, value))
}

fn parse_list<T>(key: &str, value: &str) -> Result<Vec<T>>
where
    T: FromStr,
{
    if value.trim().is_empty() {
        return Err(bad_value(key, value));
    }
    value
        .split(',')
        .map(|t| t.trim().parse().map_err(|_| bad_value(key, value)))
        .collect()
}

impl RunConfig {
    /// Parse a key=value file body on top of the defaults. Lines that
    /// are empty or start with # are skipped; '=' must appear on every
    /// other line; keys must be known and may appear once.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, found '{line}'", i + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if seen.iter().any(|s| s == key) {
                return Err(Error::Config(format!("line {}: duplicate key '{key}'", i + 1)));
            }
            seen.push(key.to_string());
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    /// Set a single field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = value.parse()?,
            "n_train" => self.n_train = parse_as(key, value)?,
            "n_test" => self.n_test = parse_as(key, value)?,
            "train_csv" => self.train_csv = Some(PathBuf::from(value)),
            "test_csv" => self.test_csv = Some(PathBuf::from(value)),
            "feature_columns" => self.feature_columns = parse_list(key, value)?,
            "label_column" => self.label_column = value.to_string(),
            "delimiter" => {
                self.delimiter = match value {
                    "tab" => '\t',
                    v if v.chars().count() == 1 => v.chars().next().expect("one char"),
                    _ => return Err(bad_value(key, value)),
                }
            }
            "n_cluster_classes" => self.n_cluster_classes = parse_as(key, value)?,
            "cluster_spread" => self.cluster_spread = parse_as(key, value)?,

            "gamma" => self.gamma = parse_as(key, value)?,
            "tau" => self.tau = parse_as(key, value)?,
            "n_layers" => self.n_layers = parse_as(key, value)?,
            "mode" => self.mode = value.parse()?,
            "activation" => self.activation = value.parse()?,
            "xi_w" => self.xi_w = parse_as(key, value)?,
            "xi_k" => self.xi_k = parse_as(key, value)?,
            "xi_b" => self.xi_b = parse_as(key, value)?,

            "seed" => self.seed = parse_as(key, value)?,
            "m1" => self.m1 = parse_as(key, value)?,
            "m2" => self.m2 = parse_as(key, value)?,
            "batch_fraction" => self.batch_fraction = parse_as(key, value)?,
            "backward" => self.backward = value.parse()?,
            "sigma_convention" => self.sigma_convention = value.parse()?,
            "optimizer" => self.optimizer = value.parse()?,
            "grad_tol" => self.grad_tol = parse_as(key, value)?,
            "armijo_c1" => self.armijo_c1 = parse_as(key, value)?,
            "armijo_rho" => self.armijo_rho = parse_as(key, value)?,
            "armijo_initial_step" => self.armijo_initial_step = parse_as(key, value)?,
            "armijo_max_backtracks" => self.armijo_max_backtracks = parse_as(key, value)?,

            "lambda" => self.lambda = parse_as(key, value)?,
            "u0" => self.u0 = parse_as(key, value)?,
            "t_final" => self.t_final = parse_as(key, value)?,
            "l1_taus" => self.l1_taus = parse_list(key, value)?,
            "l1_check_tau" => self.l1_check_tau = parse_as(key, value)?,
            "l1_tolerance" => self.l1_tolerance = parse_as(key, value)?,
            "l1_ratio_min" => self.l1_ratio_min = parse_as(key, value)?,

            "gc_n_features" => self.gc_n_features = parse_as(key, value)?,
            "gc_n_classes" => self.gc_n_classes = parse_as(key, value)?,
            "gc_n_samples" => self.gc_n_samples = parse_as(key, value)?,
            "gc_xi_w" => self.gc_xi_w = parse_as(key, value)?,
            "gc_xi_k" => self.gc_xi_k = parse_as(key, value)?,
            "gc_xi_b" => self.gc_xi_b = parse_as(key, value)?,

            "modes" => self.modes = parse_list(key, value)?,

            other => {
                return Err(Error::Config(format!("unknown configuration key '{other}'")))
            }
        }
        Ok(())
    }

    /// Canonical dump of every field. Parsing the dump reproduces this
    /// configuration.
    pub fn snapshot(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("dataset", self.dataset.to_string());
        kv("n_train", self.n_train.to_string());
        kv("n_test", self.n_test.to_string());
        if let Some(p) = &self.train_csv {
            kv("train_csv", p.display().to_string());
        }
        if let Some(p) = &self.test_csv {
            kv("test_csv", p.display().to_string());
        }
        kv("feature_columns", self.feature_columns.join(","));
        kv("label_column", self.label_column.clone());
        kv(
            "delimiter",
            if self.delimiter == '\t' {
                "tab".to_string()
            } else {
                self.delimiter.to_string()
            },
        );
        kv("n_cluster_classes", self.n_cluster_classes.to_string());
        kv("cluster_spread", self.cluster_spread.to_string());
        kv("gamma", self.gamma.to_string());
        kv("tau", self.tau.to_string());
        kv("n_layers", self.n_layers.to_string());
        kv("mode", self.mode.to_string());
        kv("activation", self.activation.to_string());
        kv("xi_w", self.xi_w.to_string());
        kv("xi_k", self.xi_k.to_string());
        kv("xi_b", self.xi_b.to_string());
        kv("seed", self.seed.to_string());
        kv("m1", self.m1.to_string());
        kv("m2", self.m2.to_string());
        kv("batch_fraction", self.batch_fraction.to_string());
        kv("backward", self.backward.to_string());
        kv("sigma_convention", self.sigma_convention.to_string());
        kv("optimizer", self.optimizer.to_string());
        kv("grad_tol", self.grad_tol.to_string());
        kv("armijo_c1", self.armijo_c1.to_string());
        kv("armijo_rho", self.armijo_rho.to_string());
        kv("armijo_initial_step", self.armijo_initial_step.to_string());
        kv("armijo_max_backtracks", self.armijo_max_backtracks.to_string());
        kv("lambda", self.lambda.to_string());
        kv("u0", self.u0.to_string());
        kv("t_final", self.t_final.to_string());
        kv(
            "l1_taus",
            self.l1_taus.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
        );
        kv("l1_check_tau", self.l1_check_tau.to_string());
        kv("l1_tolerance", self.l1_tolerance.to_string());
        kv("l1_ratio_min", self.l1_ratio_min.to_string());
        kv("gc_n_features", self.gc_n_features.to_string());
        kv("gc_n_classes", self.gc_n_classes.to_string());
        kv("gc_n_samples", self.gc_n_samples.to_string());
        kv("gc_xi_w", self.gc_xi_w.to_string());
        kv("gc_xi_k", self.gc_xi_k.to_string());
        kv("gc_xi_b", self.gc_xi_b.to_string());
        kv(
            "modes",
            self.modes.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(","),
        );
        s
    }

    pub fn hyper(&self) -> Result<HyperParams> {
        let h = HyperParams {
            gamma: FracOrder::new(self.gamma)?,
            tau: self.tau,
            n_layers: self.n_layers,
            mode: self.mode,
            activation: self.activation,
            xi_w: self.xi_w,
            xi_k: self.xi_k,
            xi_b: self.xi_b,
        };
        h.validate()?;
        Ok(h)
    }

    /// Hyper-parameters for the gradient check: same propagation
    /// settings, gradient-check regularization weights.
    pub fn gc_hyper(&self) -> Result<HyperParams> {
        let mut h = self.hyper()?;
        h.xi_w = self.gc_xi_w;
        h.xi_k = self.gc_xi_k;
        h.xi_b = self.gc_xi_b;
        h.validate()?;
        Ok(h)
    }

    pub fn armijo(&self) -> ArmijoConfig {
        ArmijoConfig {
            c1: self.armijo_c1,
            rho: self.armijo_rho,
            initial_step: self.armijo_initial_step,
            max_backtracks: self.armijo_max_backtracks,
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            hyper: self.hyper()?,
            m1: self.m1,
            m2: self.m2,
            batch_fraction: self.batch_fraction,
            seed: self.seed,
            backward: self.backward,
            sigma_convention: self.sigma_convention,
            optimizer: self.optimizer,
            grad_tol: self.grad_tol,
            armijo: self.armijo(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn csv_schema(&self) -> Result<CsvSchema> {
        if !self.delimiter.is_ascii() {
            return Err(Error::Config(format!(
                "delimiter must be an ASCII character, got '{}'",
                self.delimiter
            )));
        }
        Ok(CsvSchema {
            feature_columns: self.feature_columns.clone(),
            label_column: self.label_column.clone(),
            delimiter: self.delimiter as u8,
        })
    }

    /// Seed for the held-out set, decorrelated from the training seed.
    pub fn test_seed(&self) -> u64 {
        self.seed.wrapping_add(0x9E37_79B9_7F4A_7C15)
    }

    pub fn load_train_dataset(&self) -> Result<Dataset> {
        match self.dataset {
            DatasetKind::Cls => Ok(generate_cls(self.n_train, self.seed)),
            DatasetKind::Clusters => generate_clusters(
                self.n_train,
                self.n_cluster_classes,
                self.cluster_spread,
                self.seed,
                self.seed,
            ),
            DatasetKind::Csv => {
                let path = self.train_csv.as_ref().ok_or_else(|| {
                    Error::Config("dataset=csv needs train_csv=<path>".into())
                })?;
                load_csv(path, &self.csv_schema()?)
            }
        }
    }

    pub fn load_test_dataset(&self) -> Result<Dataset> {
        match self.dataset {
            DatasetKind::Cls => Ok(generate_cls(self.n_test, self.test_seed())),
            // the held-out set shares the training class centers and
            // differs only in the sample draws
            DatasetKind::Clusters => generate_clusters(
                self.n_test,
                self.n_cluster_classes,
                self.cluster_spread,
                self.seed,
                self.test_seed(),
            ),
            DatasetKind::Csv => {
                let path = self.test_csv.as_ref().ok_or_else(|| {
                    Error::Config("dataset=csv needs test_csv=<path>".into())
                })?;
                load_csv(path, &self.csv_schema()?)
            }
        }
    }
}
