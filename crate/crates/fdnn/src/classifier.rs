//! Softmax classification layer: class probabilities, cross-entropy
//! loss, hard predictions, and exact accuracy counting.
//!
//! Samples are columns throughout: a logit or probability matrix is
//! n_classes x n_samples, and label matrices are one-hot by column.

use crate::error::{Error, Result};
use ndarray::{Array2, ArrayView2, Axis};

/// Column-stochastic class probability matrix (n_classes x n_samples).
#[derive(Debug, Clone)]
pub struct Probabilities(Array2<f64>);

impl Probabilities {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn n_classes(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.0.ncols()
    }
}

/// Class probabilities S = softmax(W Y) with the usual per-column max
/// shift, so logits of any magnitude stay finite.
pub fn softmax(w: &Array2<f64>, y: &Array2<f64>) -> Result<Probabilities> {
    if w.ncols() != y.nrows() {
        return Err(Error::DimensionMismatch {
            context: "softmax",
            detail: format!(
                "classifier weight is {}x{} but state has {} features",
                w.nrows(),
                w.ncols(),
                y.nrows()
            ),
        });
    }
    Ok(softmax_logits(&w.dot(y)))
}

/// Softmax of an explicit logit matrix, columns shifted by their max.
pub(crate) fn softmax_logits(logits: &Array2<f64>) -> Probabilities {
    let mut s = logits.clone();
    for mut col in s.axis_iter_mut(Axis(1)) {
        let m = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        col.mapv_inplace(|v| (v - m).exp());
        let z = col.sum();
        col.mapv_inplace(|v| v / z);
    }
    Probabilities(s)
}

/// Mean cross-entropy -(1/n) sum_i log S[c_i, i] against one-hot labels,
/// fused with the softmax so only log-sum-exp is ever formed (no
/// exponentiation back and forth through log).
pub fn cross_entropy(w: &Array2<f64>, y: &Array2<f64>, c_obs: &Array2<f64>) -> Result<f64> {
    if w.ncols() != y.nrows() {
        return Err(Error::DimensionMismatch {
            context: "cross entropy",
            detail: format!(
                "classifier weight is {}x{} but state has {} features",
                w.nrows(),
                w.ncols(),
                y.nrows()
            ),
        });
    }
    let logits = w.dot(y);
    if c_obs.dim() != logits.dim() {
        return Err(Error::DimensionMismatch {
            context: "cross entropy",
            detail: format!(
                "labels are {}x{} but logits are {}x{}",
                c_obs.nrows(),
                c_obs.ncols(),
                logits.nrows(),
                logits.ncols()
            ),
        });
    }
    validate_one_hot(&c_obs.view(), "cross entropy labels")?;
    let n = logits.ncols();
    let mut total = 0.0;
    for (col, obs) in logits.axis_iter(Axis(1)).zip(c_obs.axis_iter(Axis(1))) {
        let m = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = col.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        for (&z, &c) in col.iter().zip(obs.iter()) {
            if c == 1.0 {
                total += (z - m) - lse;
            }
        }
    }
    Ok(-total / n as f64)
}

/// Hard one-hot prediction: per column, the row of the largest
/// probability, lowest index on ties.
pub fn predict(probs: &Probabilities) -> Array2<f64> {
    let s = probs.matrix();
    let mut pred = Array2::zeros(s.raw_dim());
    for (i, col) in s.axis_iter(Axis(1)).enumerate() {
        let mut best = 0;
        for (r, &v) in col.iter().enumerate() {
            if v > col[best] {
                best = r;
            }
        }
        pred[[best, i]] = 1.0;
    }
    pred
}

/// Classification accuracy report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accuracy {
    pub n_correct: usize,
    pub n_samples: usize,
    pub percent: f64,
}

/// Count matching one-hot columns: n_correct = n - ||C_obs - C_pred||_F^2 / 2,
/// evaluated in integer arithmetic so the count is exact.
pub fn accuracy(c_pred: &Array2<f64>, c_obs: &Array2<f64>) -> Result<Accuracy> {
    if c_pred.dim() != c_obs.dim() {
        return Err(Error::DimensionMismatch {
            context: "accuracy",
            detail: format!(
                "prediction is {}x{} but labels are {}x{}",
                c_pred.nrows(),
                c_pred.ncols(),
                c_obs.nrows(),
                c_obs.ncols()
            ),
        });
    }
    validate_one_hot(&c_pred.view(), "accuracy predictions")?;
    validate_one_hot(&c_obs.view(), "accuracy labels")?;
    let sq_diff: usize = c_pred
        .iter()
        .zip(c_obs.iter())
        .map(|(&p, &o)| if p != o { 1 } else { 0 })
        .sum();
    let n = c_pred.ncols();
    let n_correct = n - sq_diff / 2;
    Ok(Accuracy {
        n_correct,
        n_samples: n,
        percent: 100.0 * n_correct as f64 / n as f64,
    })
}

/// Every entry 0 or 1 and every column summing to exactly one.
fn validate_one_hot(c: &ArrayView2<f64>, context: &str) -> Result<()> {
    for (i, col) in c.axis_iter(Axis(1)).enumerate() {
        let mut ones = 0usize;
        for &v in col.iter() {
            if v == 1.0 {
                ones += 1;
            } else if v != 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{context}: column {i} has entry {v}, expected 0 or 1"
                )));
            }
        }
        if ones != 1 {
            return Err(Error::InvalidArgument(format!(
                "{context}: column {i} has {ones} ones, expected exactly 1"
            )));
        }
    }
    Ok(())
}
