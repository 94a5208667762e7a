//! L1-scheme machinery for Caputo fractional derivatives of order
//! gamma in (0, 1], plus the Mittag-Leffler function used as the
//! reference solution for validation.
//!
//! The scheme weights are a_m = (m+1)^{1-gamma} - m^{1-gamma} and every
//! time step carries the scale tau^gamma * Gamma(2-gamma). History sums
//! are recomputed from scratch at each step; total work is O(N^2).

use crate::error::{Error, Result};
use ndarray::{Array, Array1, Dimension};
use std::fmt;
use std::io::Write;
use std::path::Path;

/// Fractional order gamma with 0 < gamma <= 1 enforced at construction.
/// gamma = 1 is the classical limit: every history weight beyond a_0
/// vanishes and the scheme reduces to forward Euler exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FracOrder(f64);

impl FracOrder {
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma.is_finite() && gamma > 0.0 && gamma <= 1.0 {
            Ok(FracOrder(gamma))
        } else {
            Err(Error::InvalidOrder(gamma))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// True exactly at gamma = 1, where the coefficient path is bypassed.
    pub fn is_classical(self) -> bool {
        self.0 == 1.0
    }
}

impl fmt::Display for FracOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// L1 weight a_m = (m+1)^{1-gamma} - m^{1-gamma}.
///
/// a_0 = 1 for every gamma (0^{1-gamma} taken as 0). At gamma = 1 the
/// result is exactly 1 for m = 0 and exactly 0 otherwise, with no
/// floating-point residue.
pub fn l1_coefficient(m: usize, gamma: FracOrder) -> f64 {
    if gamma.is_classical() {
        return if m == 0 { 1.0 } else { 0.0 };
    }
    let e = 1.0 - gamma.value();
    ((m + 1) as f64).powf(e) - (m as f64).powf(e)
}

/// Weights a_0..a_n as a vector.
pub fn l1_coefficients(n: usize, gamma: FracOrder) -> Vec<f64> {
    (0..=n).map(|m| l1_coefficient(m, gamma)).collect()
}

/// Step scale tau^gamma * Gamma(2-gamma); exactly tau at gamma = 1.
pub fn step_scale(tau: f64, gamma: FracOrder) -> f64 {
    debug_assert!(tau > 0.0 && tau.is_finite());
    if gamma.is_classical() {
        return tau;
    }
    tau.powf(gamma.value()) * libm::tgamma(2.0 - gamma.value())
}

/// History sum feeding the forward update for state index j:
///
///   sum_{k=1}^{j-1} a_{j-k} (Y_k - Y_{k-1})
///
/// `states` is indexed absolutely; entries 0..j-1 must be present.
/// Empty (zero) for j = 1 and for gamma = 1.
pub fn left_history_sum<D: Dimension>(
    states: &[Array<f64, D>],
    j: usize,
    gamma: FracOrder,
) -> Result<Array<f64, D>> {
    if j == 0 {
        return Err(Error::InvalidArgument(
            "left history sum needs step index j >= 1".into(),
        ));
    }
    if states.len() < j {
        return Err(Error::HistoryTooShort {
            step: j,
            needed: j,
            got: states.len(),
        });
    }
    let mut acc = Array::zeros(states[0].raw_dim());
    if gamma.is_classical() {
        return Ok(acc);
    }
    for k in 1..j {
        let a = l1_coefficient(j - k, gamma);
        ndarray::azip!((acc in &mut acc, &cur in &states[k], &prev in &states[k - 1]) {
            *acc += a * (cur - prev);
        });
    }
    Ok(acc)
}

/// History sum feeding the adjoint update for state index j on a grid of
/// n_steps steps:
///
///   sum_{k=j+1}^{n_steps-1} a_{k-j-1} (P_{k+1} - P_k)
///
/// `adjoints` is indexed absolutely; entries j+1..=n_steps must be present.
/// Empty (zero) for j = n_steps - 1 and for gamma = 1.
pub fn right_history_sum<D: Dimension>(
    adjoints: &[Array<f64, D>],
    j: usize,
    n_steps: usize,
    gamma: FracOrder,
) -> Result<Array<f64, D>> {
    if j >= n_steps {
        return Err(Error::InvalidArgument(format!(
            "right history sum needs j < n_steps, got j = {j}, n_steps = {n_steps}"
        )));
    }
    if adjoints.len() < n_steps + 1 {
        return Err(Error::HistoryTooShort {
            step: j,
            needed: n_steps + 1,
            got: adjoints.len(),
        });
    }
    let mut acc = Array::zeros(adjoints[n_steps].raw_dim());
    if gamma.is_classical() {
        return Ok(acc);
    }
    for k in (j + 1)..n_steps {
        let a = l1_coefficient(k - j - 1, gamma);
        ndarray::azip!((acc in &mut acc, &next in &adjoints[k + 1], &cur in &adjoints[k]) {
            *acc += a * (next - cur);
        });
    }
    Ok(acc)
}

/// Mittag-Leffler evaluation result. `residual` is the magnitude of the
/// first term left out of the partial sum (the achieved tolerance).
#[derive(Debug, Clone, Copy)]
pub struct MittagLeffler {
    pub value: f64,
    pub terms: usize,
    pub residual: f64,
}

const ML_MAX_TERMS: usize = 1_000;

/// E_alpha(z) = sum_k z^k / Gamma(alpha k + 1) by direct summation with
/// Kahan compensation. Terms are computed through exp/ln-Gamma so large
/// k never overflows. Truncation: stop once the next term is below `tol`
/// in magnitude and the term magnitudes are decreasing. Hitting the term
/// cap while magnitudes still grow is an error; hitting it on a decreasing
/// tail returns the partial sum with the achieved tolerance in `residual`.
pub fn mittag_leffler(alpha: f64, z: f64, tol: f64) -> Result<MittagLeffler> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "Mittag-Leffler needs alpha > 0, got {alpha}"
        )));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "Mittag-Leffler needs tol > 0, got {tol}"
        )));
    }
    if !z.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "Mittag-Leffler needs finite z, got {z}"
        )));
    }
    if z == 0.0 {
        return Ok(MittagLeffler {
            value: 1.0,
            terms: 1,
            residual: 0.0,
        });
    }

    let ln_abs_z = z.abs().ln();
    let mut sum = KahanSum::default();
    sum.add(1.0); // k = 0 term
    let mut prev_mag = 1.0_f64;
    for k in 1..=ML_MAX_TERMS {
        let mag = (k as f64 * ln_abs_z - libm::lgamma(alpha * k as f64 + 1.0)).exp();
        let decreasing = mag <= prev_mag;
        if mag < tol && decreasing {
            return Ok(MittagLeffler {
                value: sum.value(),
                terms: k,
                residual: mag,
            });
        }
        if k == ML_MAX_TERMS {
            if decreasing {
                return Ok(MittagLeffler {
                    value: sum.value(),
                    terms: k,
                    residual: mag,
                });
            }
            return Err(Error::SeriesDiverged {
                terms: k,
                residual: mag,
            });
        }
        let term = if z < 0.0 && k % 2 == 1 { -mag } else { mag };
        sum.add(term);
        prev_mag = mag;
    }
    unreachable!("loop exits via return");
}

/// Kahan compensated accumulator.
#[derive(Debug, Default, Clone, Copy)]
struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum
    }
}

/// Uniform time grid t_j = j * tau, j = 0..=n_steps.
#[derive(Debug, Clone, Copy)]
pub struct TimeGrid {
    tau: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(tau: f64, n_steps: usize) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "time grid needs tau > 0, got {tau}"
            )));
        }
        if n_steps == 0 {
            return Err(Error::InvalidArgument(
                "time grid needs at least one step".into(),
            ));
        }
        Ok(TimeGrid { tau, n_steps })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.tau
    }
}

/// March the explicit L1 scheme for d_t^gamma u = rhs(u), u(0) = u0:
///
///   u_j = u_{j-1} - sum_{k=1}^{j-1} a_{j-k} (u_k - u_{k-1})
///         + tau^gamma Gamma(2-gamma) rhs(u_{j-1})
///
/// Returns the full trajectory u_0..u_N. At gamma = 1 this is exactly
/// forward Euler. Errors with the offending step index if any state
/// entry becomes non-finite.
pub fn solve_caputo_ivp<F>(
    rhs: F,
    u0: &Array1<f64>,
    grid: &TimeGrid,
    gamma: FracOrder,
) -> Result<Vec<Array1<f64>>>
where
    F: Fn(&Array1<f64>) -> Array1<f64>,
{
    let scale = step_scale(grid.tau(), gamma);
    let mut states = Vec::with_capacity(grid.n_steps() + 1);
    states.push(u0.clone());
    for j in 1..=grid.n_steps() {
        let hist = left_history_sum(&states, j, gamma)?;
        let prev = &states[j - 1];
        let next = prev - &hist + scale * &rhs(prev);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteState { step: j });
        }
        states.push(next);
    }
    Ok(states)
}

/// Write a trajectory as CSV with columns `t,u` (scalar state) or
/// `t,u_1,..,u_d`.
pub fn write_trajectory_csv(
    path: &Path,
    grid: &TimeGrid,
    states: &[Array1<f64>],
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let dim = states.first().map_or(0, |s| s.len());
    if dim == 1 {
        writeln!(out, "t,u")?;
    } else {
        let names: Vec<String> = (1..=dim).map(|i| format!("u_{i}")).collect();
        writeln!(out, "t,{}", names.join(","))?;
    }
    for (j, state) in states.iter().enumerate() {
        let vals: Vec<String> = state.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(out, "{},{}", grid.time(j), vals.join(","))?;
    }
    Ok(())
}
