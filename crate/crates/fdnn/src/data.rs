//! Datasets: synthetic generators, CSV input/output, batch
//! normalization, and minibatch sampling.
//!
//! Features travel as columns (n_features x n_samples) and labels as
//! one-hot columns (n_classes x n_samples), matching the network's
//! state layout.

use crate::error::{Error, Result};
use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::io::Write;
use std::path::Path;

/// A labelled sample set.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Array2<f64>,
    pub class_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_features(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.labels.nrows()
    }

    /// Class index of sample i (position of the 1 in its label column).
    pub fn label_of(&self, i: usize) -> usize {
        self.labels
            .column(i)
            .iter()
            .position(|&v| v == 1.0)
            .expect("labels are one-hot")
    }

    /// Copy of the samples at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let features = self.features.select(Axis(1), indices);
        let labels = self.labels.select(Axis(1), indices);
        Dataset {
            features,
            labels,
            class_names: self.class_names.clone(),
        }
    }
}

/// Class rule for the two-feature comparison set: 0 where x > y, 1
/// where x <= y.
pub fn cls_class(x: f64, y: f64) -> usize {
    usize::from(x <= y)
}

/// n uniform points on the unit square, labelled by which side of the
/// diagonal they fall on.
pub fn generate_cls(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Array2::zeros((2, n));
    let mut labels = Array2::zeros((2, n));
    for i in 0..n {
        let x = rng.random_range(0.0..1.0);
        let y = rng.random_range(0.0..1.0);
        features[[0, i]] = x;
        features[[1, i]] = y;
        labels[[cls_class(x, y), i]] = 1.0;
    }
    Dataset {
        features,
        labels,
        class_names: Some(vec!["x>y".into(), "x<=y".into()]),
    }
}

/// n points in gaussian clusters: class centers drawn uniformly on
/// [0,10]^2 from `center_seed`, then samples assigned round-robin to
/// classes with isotropic noise of the given spread drawn from
/// `noise_seed`. A train/test pair shares `center_seed` (same class
/// geometry) while differing in `noise_seed`.
pub fn generate_clusters(
    n: usize,
    n_classes: usize,
    spread: f64,
    center_seed: u64,
    noise_seed: u64,
) -> Result<Dataset> {
    if n_classes == 0 || n < n_classes {
        return Err(Error::InvalidArgument(format!(
            "cluster set needs at least one sample per class, got n = {n}, classes = {n_classes}"
        )));
    }
    if !(spread.is_finite() && spread >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "cluster spread must be nonnegative, got {spread}"
        )));
    }
    let mut crng = ChaCha8Rng::seed_from_u64(center_seed);
    let centers: Vec<(f64, f64)> = (0..n_classes)
        .map(|_| (crng.random_range(0.0..10.0), crng.random_range(0.0..10.0)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    // sample draws live on a separate stream so they stay disjoint
    // from the center draws when the two seeds coincide
    rng.set_stream(1);
    let mut features = Array2::zeros((2, n));
    let mut labels = Array2::zeros((n_classes, n));
    for i in 0..n {
        let c = i % n_classes;
        let dx: f64 = rng.sample(StandardNormal);
        let dy: f64 = rng.sample(StandardNormal);
        features[[0, i]] = centers[c].0 + spread * dx;
        features[[1, i]] = centers[c].1 + spread * dy;
        labels[[c, i]] = 1.0;
    }
    Ok(Dataset {
        features,
        labels,
        class_names: Some((0..n_classes).map(|c| format!("cluster_{c}")).collect()),
    })
}

/// Column selection for CSV loading.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub feature_columns: Vec<String>,
    pub label_column: String,
    pub delimiter: u8,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            feature_columns: vec!["feature_1".into(), "feature_2".into()],
            label_column: "label".into(),
            delimiter: b',',
        }
    }
}

/// Read a headed CSV into a dataset. Classes are numbered by first
/// appearance of their label string, so file order defines the class
/// indexing.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let display = path.display().to_string();
    let parse_err = |line: usize, msg: String| Error::DataParse {
        path: display.clone(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(true)
        .from_path(path)
        .map_err(|e| parse_err(1, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let col_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(1, format!("missing column '{name}'")))
    };
    let feature_idx: Vec<usize> = schema
        .feature_columns
        .iter()
        .map(|c| col_index(c))
        .collect::<Result<_>>()?;
    let label_idx = col_index(&schema.label_column)?;

    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut label_ids: Vec<usize> = Vec::new();
    let mut class_names: Vec<String> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let line = row + 2; // header is line 1
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        let mut feats = Vec::with_capacity(feature_idx.len());
        for (&idx, name) in feature_idx.iter().zip(&schema.feature_columns) {
            let raw = record
                .get(idx)
                .ok_or_else(|| parse_err(line, format!("missing field '{name}'")))?;
            let v: f64 = raw
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("bad number '{raw}' in '{name}'")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite value in '{name}'")));
            }
            feats.push(v);
        }
        let label = record
            .get(label_idx)
            .ok_or_else(|| parse_err(line, "missing label field".into()))?
            .trim()
            .to_string();
        if label.is_empty() {
            return Err(parse_err(line, "empty label".into()));
        }
        let id = match class_names.iter().position(|c| *c == label) {
            Some(id) => id,
            None => {
                class_names.push(label);
                class_names.len() - 1
            }
        };
        columns.push(feats);
        label_ids.push(id);
    }
    if columns.is_empty() {
        return Err(parse_err(2, "no data rows".into()));
    }

    let n = columns.len();
    let n_f = feature_idx.len();
    let mut features = Array2::zeros((n_f, n));
    let mut labels = Array2::zeros((class_names.len(), n));
    for (i, feats) in columns.iter().enumerate() {
        for (f, &v) in feats.iter().enumerate() {
            features[[f, i]] = v;
        }
        labels[[label_ids[i], i]] = 1.0;
    }
    Ok(Dataset {
        features,
        labels,
        class_names: Some(class_names),
    })
}

/// Write a dataset as CSV with columns feature_1..feature_k,label.
/// Features carry 17 significant digits, so a load round-trips bit
/// exactly.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let names: Vec<String> = (1..=ds.n_features()).map(|i| format!("feature_{i}")).collect();
    writeln!(out, "{},label", names.join(","))?;
    for i in 0..ds.n_samples() {
        let feats: Vec<String> = ds
            .features
            .column(i)
            .iter()
            .map(|v| format!("{v:.16e}"))
            .collect();
        let class = ds.label_of(i);
        let label = match &ds.class_names {
            Some(names) => names[class].clone(),
            None => class.to_string(),
        };
        writeln!(out, "{},{}", feats.join(","), label)?;
    }
    Ok(())
}

/// Normalize each feature row to zero mean and unit spread over the
/// given samples, with the population standard deviation guarded by a
/// 1e-8 offset so constant features map to zero.
pub fn batch_normalize(features: &Array2<f64>) -> Array2<f64> {
    let n = features.ncols() as f64;
    let mut out = features.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let denom = var.sqrt() + 1e-8;
        row.mapv_inplace(|v| (v - mean) / denom);
    }
    out
}

/// Sample ceil(fraction * n) distinct indices for the given outer
/// iteration and return those samples, kept in dataset order. The
/// iteration selects a ChaCha stream, so one seed yields a reproducible
/// but different batch every iteration.
pub fn sample_minibatch(
    ds: &Dataset,
    fraction: f64,
    seed: u64,
    iteration: u64,
) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "batch fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let n = ds.n_samples();
    let amount = (fraction * n as f64).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration);
    let mut indices = rand::seq::index::sample(&mut rng, n, amount).into_vec();
    indices.sort_unstable();
    Ok(ds.subset(&indices))
}
